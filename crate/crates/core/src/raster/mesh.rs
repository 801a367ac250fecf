use std::collections::BTreeMap;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::Vec3;
use crate::mesh::TriMesh;

use super::{logistic, DepthMap, RenderOutput, SoftRenderConfig, EDGE_GAIN};

/// Silhouette distances are searched out to this many `sigma_edge`; beyond
/// it the soft mask equals the hard mask to within 1e-10.
const BAND_SIGMAS: f64 = 10.0;
const CELL: usize = 8;

/// Edge-to-face adjacency, reusable while the face list is unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    face_count: usize,
    edges: Vec<(usize, usize)>,
    edge_faces: Vec<Vec<usize>>,
}

impl MeshTopology {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let (edges, edge_faces) = map.into_iter().unzip();
        MeshTopology {
            face_count: mesh.faces.len(),
            edges,
            edge_faces,
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn check(&self, mesh: &TriMesh) -> Result<()> {
        if mesh.faces.len() != self.face_count {
            return Err(Error::invalid(format!(
                "topology built for {} faces, mesh has {}",
                self.face_count,
                mesh.faces.len()
            )));
        }
        Ok(())
    }

    pub fn render(&self, mesh: &TriMesh, camera: &OrthoCamera, config: &SoftRenderConfig) -> Result<MeshRender> {
        Ok(self.rasterize(mesh, camera, config)?.finish(camera))
    }

    /// Renders and differentiates `L_normal + L_mask` against per-view targets.
    pub fn render_with_grads(
        &self,
        mesh: &TriMesh,
        camera: &OrthoCamera,
        config: &SoftRenderConfig,
        target_normal: &FeatureMap,
        target_mask: &FeatureMap,
    ) -> Result<MeshGrads> {
        let (h, w) = (camera.height, camera.width);
        if target_normal.shape() != (3, h, w) || target_mask.shape() != (1, h, w) {
            return Err(Error::shape(format!(
                "targets {:?} and {:?} do not match a {h}x{w} camera",
                target_normal.shape(),
                target_mask.shape()
            )));
        }
        let raster = self.rasterize(mesh, camera, config)?;
        let n_pix = (h * w) as f64;
        let gain = EDGE_GAIN / config.sigma_edge;

        // normal term: per-face sums of dL/dn_cam, then the quotient rule once per face
        let counted: Vec<bool> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                raster.pixels[i].face.is_some() && raster.pixels[i].alpha > 0.5 && target_mask.get(0, y, x) > 0.5
            })
            .collect();
        let n_counted = counted.iter().filter(|&&c| c).count();
        let mut loss_normal = 0.0;
        let mut face_grad: BTreeMap<usize, Vec3> = BTreeMap::new();
        if n_counted > 0 {
            let inv = 1.0 / n_counted as f64;
            for i in (0..h * w).filter(|&i| counted[i]) {
                let (y, x) = (i / w, i % w);
                let f = raster.pixels[i].face.expect("counted pixels are covered");
                let n = raster.normals_cam[f];
                let mut g = Vec3::zeros();
                for c in 0..3 {
                    let r = 0.5 * (n[c] + 1.0);
                    let d = r - target_normal.get(c, y, x);
                    loss_normal += d * d * inv;
                    g[c] = d * inv;
                }
                *face_grad.entry(f).or_insert_with(Vec3::zeros) += g;
            }
        }
        let mut grad_normal = vec![Vec3::zeros(); mesh.vertices.len()];
        let rt = camera.rotation.transpose();
        for (f, g_cam) in face_grad {
            let g_n = rt * g_cam;
            let [i0, i1, i2] = mesh.faces[f];
            let (e1, e2) = (mesh.vertices[i1] - mesh.vertices[i0], mesh.vertices[i2] - mesh.vertices[i0]);
            let c = e1.cross(&e2);
            let len = c.norm();
            let n = c / len;
            let g_c = (g_n - n * n.dot(&g_n)) / len;
            let g1 = e2.cross(&g_c);
            let g2 = g_c.cross(&e1);
            grad_normal[i1] += g1;
            grad_normal[i2] += g2;
            grad_normal[i0] -= g1 + g2;
        }

        // mask term: sigmoid, then distance-to-segment gradients per edge endpoint
        let mut loss_mask = 0.0;
        let mut edge_grad: BTreeMap<usize, ([f64; 2], [f64; 2])> = BTreeMap::new();
        for (i, px) in raster.pixels.iter().enumerate() {
            let (y, x) = (i / w, i % w);
            let d = px.alpha - target_mask.get(0, y, x);
            loss_mask += d * d / n_pix;
            let Some(hit) = px.hit else { continue };
            if hit.dist == 0.0 {
                continue;
            }
            let g_d = 2.0 * d / n_pix * gain * px.alpha * (1.0 - px.alpha) * hit.sign;
            let e = edge_grad.entry(hit.edge).or_insert(([0.0; 2], [0.0; 2]));
            let (wa, wb) = (1.0 - hit.t, hit.t);
            e.0[0] -= g_d * hit.dir.0 * wa;
            e.0[1] -= g_d * hit.dir.1 * wa;
            e.1[0] -= g_d * hit.dir.0 * wb;
            e.1[1] -= g_d * hit.dir.1 * wb;
        }
        let mut grad_mask = vec![Vec3::zeros(); mesh.vertices.len()];
        let (ju, jv) = camera.image_jacobian();
        for (e, (ga, gb)) in edge_grad {
            let (a, b) = self.edges[e];
            grad_mask[a] += ju * ga[0] + jv * ga[1];
            grad_mask[b] += ju * gb[0] + jv * gb[1];
        }

        Ok(MeshGrads {
            loss_normal,
            loss_mask,
            grad_normal,
            grad_mask,
            counted: n_counted,
            render: raster.finish(camera),
        })
    }

    fn rasterize(&self, mesh: &TriMesh, camera: &OrthoCamera, config: &SoftRenderConfig) -> Result<Raster> {
        self.check(mesh)?;
        mesh.validate()?;
        camera.validate()?;
        config.validate()?;
        let (h, w) = (camera.height, camera.width);
        let mut normals_cam = Vec::with_capacity(mesh.faces.len());
        for f in 0..mesh.faces.len() {
            let n = mesh.face_normal(f);
            if n.degenerate {
                return Err(Error::Validation {
                    index: f,
                    msg: "degenerate face".into(),
                });
            }
            normals_cam.push(camera.rotation * n.normal);
        }
        let proj: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| camera.project(v)).collect();

        // hard z-buffer, nearest face wins, ties to the lower face index
        let mut zbuf = vec![f64::INFINITY; h * w];
        let mut face_of = vec![usize::MAX; h * w];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = [proj[f[0]], proj[f[1]], proj[f[2]]];
            let area = edge_fn(a, b, c.0, c.1);
            if area == 0.0 {
                continue;
            }
            let x0 = (a.0.min(b.0).min(c.0) - 0.5).ceil().max(0.0);
            let x1 = (a.0.max(b.0).max(c.0) - 0.5).floor().min(w as f64 - 1.0);
            let y0 = (a.1.min(b.1).min(c.1) - 0.5).ceil().max(0.0);
            let y1 = (a.1.max(b.1).max(c.1) - 0.5).floor().min(h as f64 - 1.0);
            if x1 < x0 || y1 < y0 {
                continue;
            }
            for y in y0 as usize..=y1 as usize {
                let py = y as f64 + 0.5;
                for x in x0 as usize..=x1 as usize {
                    let px = x as f64 + 0.5;
                    let l0 = edge_fn(b, c, px, py) / area;
                    let l1 = edge_fn(c, a, px, py) / area;
                    let l2 = edge_fn(a, b, px, py) / area;
                    if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                        continue;
                    }
                    let depth = l0 * a.2 + l1 * b.2 + l2 * c.2;
                    if depth < camera.near || depth > camera.far {
                        continue;
                    }
                    let i = y * w + x;
                    if depth < zbuf[i] {
                        zbuf[i] = depth;
                        face_of[i] = fi;
                    }
                }
            }
        }

        // silhouette: open edges and edges between front- and back-facing faces
        let front: Vec<bool> = normals_cam.iter().map(|n| n.z > 0.0).collect();
        let silhouette: Vec<usize> = (0..self.edges.len())
            .filter(|&e| {
                let fs = &self.edge_faces[e];
                fs.len() == 1 || fs.iter().any(|&f| front[f] != front[fs[0]])
            })
            .collect();
        let band = BAND_SIGMAS * config.sigma_edge;
        let (cw, ch) = (w.div_ceil(CELL), h.div_ceil(CELL));
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); cw * ch];
        for &e in &silhouette {
            let (a, b) = self.edges[e];
            let (pa, pb) = (proj[a], proj[b]);
            let lo_x = ((pa.0.min(pb.0) - band).floor().max(0.0) as usize / CELL).min(cw - 1);
            let hi_x = ((pa.0.max(pb.0) + band).ceil().max(0.0) as usize / CELL).min(cw - 1);
            let lo_y = ((pa.1.min(pb.1) - band).floor().max(0.0) as usize / CELL).min(ch - 1);
            let hi_y = ((pa.1.max(pb.1) + band).ceil().max(0.0) as usize / CELL).min(ch - 1);
            if pa.0.max(pb.0) + band < 0.0 || pa.1.max(pb.1) + band < 0.0 {
                continue;
            }
            for cy in lo_y..=hi_y {
                for cx in lo_x..=hi_x {
                    cells[cy * cw + cx].push(e);
                }
            }
        }

        let gain = EDGE_GAIN / config.sigma_edge;
        let rows = crate::par::map_range(h, |y| {
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    let covered = face_of[i] != usize::MAX;
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut best: Option<EdgeHit> = None;
                    for &e in &cells[(y / CELL) * cw + x / CELL] {
                        let (a, b) = self.edges[e];
                        let (pa, pb) = (proj[a], proj[b]);
                        let hit = segment_distance(px, py, (pa.0, pa.1), (pb.0, pb.1), e);
                        if best.is_none_or(|bh| hit.dist < bh.dist) {
                            best = Some(hit);
                        }
                    }
                    let sign = if covered { 1.0 } else { -1.0 };
                    let hit = best.filter(|bh| bh.dist <= band).map(|bh| EdgeHit { sign, ..bh });
                    let alpha = match hit {
                        Some(bh) => logistic(gain * sign * bh.dist),
                        None => f64::from(u8::from(covered)),
                    };
                    PixelState {
                        face: covered.then_some(face_of[i]),
                        depth: zbuf[i],
                        hit,
                        alpha,
                    }
                })
                .collect::<Vec<_>>()
        });
        Ok(Raster {
            pixels: rows.into_iter().flatten().collect(),
            normals_cam,
            silhouette_edges: silhouette.len(),
        })
    }
}

fn edge_fn(a: (f64, f64, f64), b: (f64, f64, f64), px: f64, py: f64) -> f64 {
    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64), edge: usize) -> EdgeHit {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 {
        (((px - a.0) * ex + (py - a.1) * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (px - (a.0 + t * ex), py - (a.1 + t * ey));
    let dist = (dx * dx + dy * dy).sqrt();
    let dir = if dist > 0.0 { (dx / dist, dy / dist) } else { (0.0, 0.0) };
    EdgeHit {
        edge,
        dist,
        t,
        dir,
        sign: 1.0,
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeHit {
    edge: usize,
    dist: f64,
    /// closest point parameter along the edge
    t: f64,
    /// unit vector from the closest point to the pixel center
    dir: (f64, f64),
    sign: f64,
}

#[derive(Debug, Clone, Copy)]
struct PixelState {
    face: Option<usize>,
    depth: f64,
    hit: Option<EdgeHit>,
    alpha: f64,
}

struct Raster {
    pixels: Vec<PixelState>,
    normals_cam: Vec<Vec3>,
    silhouette_edges: usize,
}

impl Raster {
    fn finish(self, camera: &OrthoCamera) -> MeshRender {
        let (h, w) = (camera.height, camera.width);
        let mut image = FeatureMap::zeros(3, h, w);
        let mut alpha = FeatureMap::zeros(1, h, w);
        let mut depth = DepthMap::empty(h, w);
        let mut assignment = Vec::with_capacity(h * w);
        for (i, px) in self.pixels.iter().enumerate() {
            let (y, x) = (i / w, i % w);
            alpha.set(0, y, x, px.alpha);
            if let Some(f) = px.face {
                let n = self.normals_cam[f];
                for c in 0..3 {
                    image.set(c, y, x, 0.5 * (n[c] + 1.0));
                }
                depth.data[i] = px.depth;
            }
            assignment.push(PixelAssignment {
                face: px.face,
                edge: px.hit.map(|hh| hh.edge),
            });
        }
        MeshRender {
            output: RenderOutput { image, alpha, depth },
            assignment,
            silhouette_edges: self.silhouette_edges,
        }
    }
}

/// Which face covers a pixel and which silhouette edge shapes its soft mask;
/// gradients hold while these stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelAssignment {
    pub face: Option<usize>,
    /// `None` when the nearest silhouette edge is outside the soft band.
    pub edge: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRender {
    /// Normals in `image`, soft silhouette in `alpha`; depth is finite where
    /// a face covers the pixel center.
    pub output: RenderOutput,
    pub assignment: Vec<PixelAssignment>,
    pub silhouette_edges: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrads {
    pub loss_normal: f64,
    pub loss_mask: f64,
    pub grad_normal: Vec<Vec3>,
    pub grad_mask: Vec<Vec3>,
    /// Pixels contributing to `loss_normal`.
    pub counted: usize,
    pub render: MeshRender,
}

impl MeshGrads {
    pub fn loss(&self) -> f64 {
        self.loss_normal + self.loss_mask
    }

    pub fn gradient(&self) -> Vec<Vec3> {
        self.grad_normal.iter().zip(&self.grad_mask).map(|(a, b)| a + b).collect()
    }
}

pub fn render_mesh(mesh: &TriMesh, camera: &OrthoCamera, config: &SoftRenderConfig) -> Result<RenderOutput> {
    Ok(MeshTopology::new(mesh).render(mesh, camera, config)?.output)
}

pub fn render_mesh_with_grads(
    mesh: &TriMesh,
    camera: &OrthoCamera,
    config: &SoftRenderConfig,
    target_normal: &FeatureMap,
    target_mask: &FeatureMap,
) -> Result<MeshGrads> {
    MeshTopology::new(mesh).render_with_grads(mesh, camera, config, target_normal, target_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_camera_rig, Rig};
    use crate::shapes::{icosphere, plane_grid, uv_sphere};

    fn front(size: usize, extent: f64) -> OrthoCamera {
        make_camera_rig(Rig::Front3, size, extent).unwrap().remove(0)
    }

    #[test]
    fn covering_plane_has_constant_normal() {
        let mesh = { let mut m = plane_grid(3); m.vertices.iter_mut().for_each(|v| *v *= 2.0); m };
        let out = render_mesh(&mesh, &front(16, 1.0), &SoftRenderConfig::default()).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(out.image.pixel(y, x), vec![0.5, 0.5, 1.0]);
                assert!(out.depth.get(y, x).is_finite());
            }
        }
    }

    #[test]
    fn far_outside_alpha_vanishes() {
        let mesh = icosphere(2, 0.3);
        let out = render_mesh(&mesh, &front(32, 1.0), &SoftRenderConfig::default()).unwrap();
        assert!(out.alpha.get(0, 0, 0) < 1e-4);
        assert!(out.depth.get(0, 0).is_infinite());
        assert!(out.alpha.get(0, 16, 16) > 1.0 - 1e-4);
    }

    #[test]
    fn sphere_mask_area_matches_disk() {
        let size = 64;
        let extent = 1.5;
        let out = render_mesh(&icosphere(4, 1.0), &front(size, extent), &SoftRenderConfig::default()).unwrap();
        let area: f64 = out.alpha.data().iter().sum();
        let r = size as f64 / (2.0 * extent);
        let disk = std::f64::consts::PI * r * r;
        assert!((area - disk).abs() / disk < 0.02, "area {area} disk {disk}");
    }

    #[test]
    fn saturates_four_sigma_inside() {
        let cfg = SoftRenderConfig::default();
        let mesh = icosphere(3, 1.0);
        let cam = front(64, 1.5);
        let render = MeshTopology::new(&mesh).render(&mesh, &cam, &cfg).unwrap();
        let r = 64.0 / 3.0;
        for y in 0..64 {
            for x in 0..64 {
                let d = ((x as f64 + 0.5 - 32.0).powi(2) + (y as f64 + 0.5 - 32.0).powi(2)).sqrt();
                if d < r * 0.97 - 4.0 {
                    assert!(render.output.alpha.get(0, y, x) >= 1.0 - 1e-4);
                }
            }
        }
    }

    #[test]
    fn sigma_to_zero_approaches_hard_mask() {
        let mesh = uv_sphere(6, 10, 0.8);
        let cam = front(32, 1.0);
        let mut last = f64::INFINITY;
        for sigma in [2.0, 1.0, 0.5, 0.25] {
            let cfg = SoftRenderConfig {
                sigma_edge: sigma,
                ..Default::default()
            };
            let r = MeshTopology::new(&mesh).render(&mesh, &cam, &cfg).unwrap();
            let l1: f64 = r
                .assignment
                .iter()
                .zip(r.output.alpha.data())
                .map(|(a, &al)| (al - f64::from(u8::from(a.face.is_some()))).abs())
                .sum();
            assert!(l1 < last, "sigma {sigma}: {l1} >= {last}");
            last = l1;
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let mesh = TriMesh {
            vertices: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            faces: vec![[0, 1, 2]],
            colors: None,
        };
        assert!(matches!(
            render_mesh(&mesh, &front(8, 3.0), &SoftRenderConfig::default()),
            Err(Error::Validation { index: 0, .. })
        ));
    }

    #[test]
    fn self_target_has_zero_loss() {
        let mesh = uv_sphere(4, 6, 0.7);
        let cam = front(32, 1.0);
        let cfg = SoftRenderConfig::default();
        let out = render_mesh(&mesh, &cam, &cfg).unwrap();
        let g = render_mesh_with_grads(&mesh, &cam, &cfg, &out.image, &out.alpha).unwrap();
        assert!(g.loss() < 1e-8);
        let norm: f64 = g.gradient().iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn growing_toward_larger_target_lowers_mask_loss() {
        let cam = front(32, 1.0);
        let cfg = SoftRenderConfig::default();
        let target = render_mesh(&icosphere(2, 0.8), &cam, &cfg).unwrap();
        let mesh = icosphere(2, 0.5).transformed(&crate::gaussian::Mat3::identity(), &Vec3::new(0.2, 0.0, 0.0));
        let g = render_mesh_with_grads(&mesh, &cam, &cfg, &target.image, &target.alpha).unwrap();
        // moving left re-centers the mesh on the target
        let dir = Vec3::new(-1.0, 0.0, 0.0);
        let dd: f64 = g.grad_mask.iter().map(|v| v.dot(&dir)).sum();
        assert!(dd < 0.0, "{dd}");
        // inflating toward the larger silhouette as well
        let radial: f64 = g.grad_mask.iter().zip(&mesh.vertices).map(|(v, p)| v.dot(&(p - Vec3::new(0.2, 0.0, 0.0)))).sum();
        assert!(radial < 0.0, "{radial}");
    }
}
