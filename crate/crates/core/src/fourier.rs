//! Fourier geometry encoding: multi-frequency expansion of body points,
//! densification over triangles, z-buffered orthographic projection into
//! per-view feature stacks, Plücker camera maps and the shared 3x3 encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::Vec3;
use crate::mesh::{pick_face, random_barycentric, TriMesh};
use crate::nn::Conv2d;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_POINTS: usize = 65_536;

/// Feature length for order `q`: `3 (2q + 1)`.
pub fn feature_dim(order: usize) -> usize {
    3 * (2 * order + 1)
}

/// Points with one Fourier feature vector each, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCloud {
    pub points: Vec<Vec3>,
    features: Vec<f64>,
    dim: usize,
    order: usize,
}

impl FourierCloud {
    /// Wraps raw per-point features; `features.len()` must be `points.len() * dim`.
    pub fn from_parts(points: Vec<Vec3>, features: Vec<f64>, dim: usize, order: usize) -> Result<Self> {
        if features.len() != points.len() * dim {
            return Err(Error::shape(format!(
                "{} feature values for {} points of width {dim}",
                features.len(),
                points.len()
            )));
        }
        Ok(FourierCloud {
            points,
            features,
            dim,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Writes the expansion of one point into `out` (length `3(2q+1)`).
///
/// Layout: `[p, cos(2^1 p), sin(2^1 p), ..., cos(2^q p), sin(2^q p)]`, each
/// block holding x, y, z.
pub fn expand_point(p: &Vec3, order: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(p.as_slice());
    for n in 1..=order {
        let freq = (n as f64).exp2();
        let base = 3 + 6 * (n - 1);
        for a in 0..3 {
            let (s, c) = (freq * p[a]).sin_cos();
            out[base + a] = c;
            out[base + 3 + a] = s;
        }
    }
}

/// `F(p) = {p} ∪ {cos(2^n p), sin(2^n p) | n = 1..q}` for every point.
pub fn fourier_expand(points: &[Vec3], order: usize) -> Result<FourierCloud> {
    let dim = feature_dim(order);
    let mut features = vec![0.0; points.len() * dim];
    for (i, p) in points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation {
                index: i,
                msg: "non-finite point coordinate".into(),
            });
        }
        expand_point(p, order, &mut features[i * dim..(i + 1) * dim]);
    }
    FourierCloud::from_parts(points.to_vec(), features, dim, order)
}

/// How densified samples weight their triangle's three vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Random barycentric coordinates, uniform over the triangle.
    #[default]
    Barycentric,
    /// Equal thirds: every sample sits at its triangle's centroid.
    Centroid,
}

/// Interpolates position and features at barycentric `bary` of `face`.
pub fn interpolate_on_face(
    mesh: &TriMesh,
    vertex_features: &[f64],
    dim: usize,
    face: usize,
    bary: [f64; 3],
    feature_out: &mut [f64],
) -> Vec3 {
    let f = mesh.faces[face];
    feature_out.iter_mut().for_each(|v| *v = 0.0);
    let mut pos = Vec3::zeros();
    for k in 0..3 {
        pos += mesh.vertices[f[k]] * bary[k];
        let src = &vertex_features[f[k] * dim..(f[k] + 1) * dim];
        for (o, s) in feature_out.iter_mut().zip(src) {
            *o += bary[k] * s;
        }
    }
    pos
}

/// Densifies a mesh to `m` samples carrying interpolated vertex features.
///
/// The first `V` samples are the mesh vertices themselves. The remaining
/// `m - V` pick triangles by area using stratified uniforms, so per-face
/// counts track area closely.
pub fn densify_surface(
    mesh: &TriMesh,
    vertex_features: &[f64],
    dim: usize,
    order: usize,
    m: usize,
    seed: u64,
    interpolation: Interpolation,
) -> Result<FourierCloud> {
    let nv = mesh.vertex_count();
    if vertex_features.len() != nv * dim {
        return Err(Error::shape(format!(
            "{} feature values for {nv} vertices of width {dim}",
            vertex_features.len()
        )));
    }
    if m < nv {
        return Err(Error::invalid(format!("target count {m} is below the vertex count {nv}")));
    }
    for f in 0..mesh.face_count() {
        if mesh.face_normal(f).degenerate {
            return Err(Error::Validation {
                index: f,
                msg: "degenerate triangle in densification".into(),
            });
        }
    }
    let mut points = mesh.vertices.clone();
    let mut features = vertex_features.to_vec();
    let extra = m - nv;
    if extra > 0 {
        let cdf = mesh.area_cdf()?;
        let total = *cdf.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points.reserve(extra);
        features.resize(m * dim, 0.0);
        for k in 0..extra {
            let u = (k as f64 + rng.random::<f64>()) / extra as f64;
            let face = pick_face(&cdf, u * total);
            let bary = match interpolation {
                Interpolation::Barycentric => random_barycentric(rng.random(), rng.random()),
                Interpolation::Centroid => [1.0 / 3.0; 3],
            };
            let row = nv + k;
            let pos = interpolate_on_face(mesh, vertex_features, dim, face, bary, &mut features[row * dim..(row + 1) * dim]);
            points.push(pos);
        }
    }
    FourierCloud::from_parts(points, features, dim, order)
}

/// Counters from one projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ProjectionStats {
    pub written: usize,
    pub occluded: usize,
    pub off_screen: usize,
}

/// Z-buffered nearest-pixel splat of the cloud features into `dim x H x W`.
///
/// Ties in depth go to the lower point index, so the result is independent
/// of evaluation order.
pub fn project_features(cloud: &FourierCloud, camera: &OrthoCamera) -> Result<(FeatureMap, ProjectionStats)> {
    if cloud.is_empty() {
        return Err(Error::Empty("cannot project an empty cloud".into()));
    }
    camera.validate()?;
    let (h, w) = (camera.height, camera.width);
    // (depth, index) per point, None if off screen
    let hits: Vec<Option<(usize, f64)>> = crate::par::map_slice(&cloud.points, |p| {
        let pc = camera.to_camera(p);
        let depth = -pc.z;
        if !(depth >= camera.near && depth <= camera.far) {
            return None;
        }
        camera.nearest_pixel(&pc).map(|(r, c)| (r * w + c, depth))
    });
    let mut best: Vec<Option<(f64, usize)>> = vec![None; h * w];
    let mut stats = ProjectionStats::default();
    for (i, hit) in hits.iter().enumerate() {
        match hit {
            None => stats.off_screen += 1,
            Some((pix, depth)) => {
                let slot = &mut best[*pix];
                match slot {
                    Some((d, _)) if *d <= *depth => {}
                    _ => *slot = Some((*depth, i)),
                }
            }
        }
    }
    let dim = cloud.dim();
    let mut map = FeatureMap::zeros(dim, h, w);
    let plane = h * w;
    let data = map.data_mut();
    for (pix, slot) in best.iter().enumerate() {
        if let Some((_, i)) = slot {
            stats.written += 1;
            for (c, v) in cloud.feature(*i).iter().enumerate() {
                data[c * plane + pix] = *v;
            }
        }
    }
    stats.occluded = cloud.len() - stats.off_screen - stats.written;
    Ok((map, stats))
}

/// Three per-view projections of one cloud.
#[derive(Debug, Clone)]
pub struct FourierStack {
    pub maps: Vec<FeatureMap>,
    pub cameras: Vec<OrthoCamera>,
    pub stats: Vec<ProjectionStats>,
}

pub fn build_fourier_stack(cloud: &FourierCloud, cameras: &[OrthoCamera]) -> Result<FourierStack> {
    if cameras.len() != 3 {
        return Err(Error::invalid(format!("expected exactly 3 cameras, got {}", cameras.len())));
    }
    if !cameras.iter().all(|c| c.same_resolution(&cameras[0])) {
        return Err(Error::shape("projection cameras must share one resolution"));
    }
    let mut maps = Vec::with_capacity(3);
    let mut stats = Vec::with_capacity(3);
    for cam in cameras {
        let (m, s) = project_features(cloud, cam)?;
        maps.push(m);
        stats.push(s);
    }
    Ok(FourierStack {
        maps,
        cameras: cameras.to_vec(),
        stats,
    })
}

/// Per-pixel Plücker coordinates `(d, o x d)`; channels 0-2 hold the ray
/// direction and 3-5 the moment.
pub fn plucker_map(camera: &OrthoCamera) -> FeatureMap {
    let d = camera.view_direction().normalize();
    let (h, w) = (camera.height, camera.width);
    let mut map = FeatureMap::zeros(6, h, w);
    for y in 0..h {
        for x in 0..w {
            let o = camera.pixel_ray_origin(y, x);
            let m = o.cross(&d);
            for a in 0..3 {
                map.set(a, y, x, d[a]);
                map.set(3 + a, y, x, m[a]);
            }
        }
    }
    map
}

/// Encodes each view (features concatenated with its Plücker map) with one
/// shared 3x3 convolution; output is view-major, `3 * out_channels` channels.
pub fn encode_stack(stack: &FourierStack, plucker: &[FeatureMap], conv: &Conv2d) -> Result<FeatureMap> {
    if plucker.len() != stack.maps.len() {
        return Err(Error::shape(format!(
            "{} camera maps for {} views",
            plucker.len(),
            stack.maps.len()
        )));
    }
    if conv.kernel != 3 {
        return Err(Error::shape(format!("encoder kernel must be 3x3, got {0}x{0}", conv.kernel)));
    }
    let mut outs = Vec::with_capacity(stack.maps.len());
    for (map, cam) in stack.maps.iter().zip(plucker) {
        let input = FeatureMap::concat(&[map, cam])?;
        if input.channels() != conv.in_channels {
            return Err(Error::shape(format!(
                "encoder expects {} input channels, view has {}",
                conv.in_channels,
                input.channels()
            )));
        }
        outs.push(conv.forward(&input)?);
    }
    FeatureMap::concat(&outs.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_camera_rig, Rig};
    use std::f64::consts::PI;

    #[test]
    fn origin_order_one() {
        let c = fourier_expand(&[Vec3::zeros()], 1).unwrap();
        assert_eq!(c.feature(0), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn half_pi_order_one() {
        let c = fourier_expand(&[Vec3::new(PI / 2.0, 0.0, 0.0)], 1).unwrap();
        let f = c.feature(0);
        assert!((f[3] + 1.0).abs() < 1e-15);
        assert_eq!(&f[4..6], &[1.0, 1.0]);
        assert!(f[6].abs() < 1e-15 && f[7] == 0.0 && f[8] == 0.0);
    }

    #[test]
    fn order_zero_is_identity() {
        let p = Vec3::new(0.3, -2.0, 7.5);
        let c = fourier_expand(&[p], 0).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.feature(0), p.as_slice());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(fourier_expand(&[Vec3::new(f64::NAN, 0.0, 0.0)], 2).is_err());
    }

    #[test]
    fn shift_by_two_pi_is_periodic_above_order_zero() {
        let p = Vec3::new(0.37, -1.1, 2.4);
        let q = p + Vec3::new(2.0 * PI, 0.0, 0.0);
        let a = fourier_expand(&[p], 4).unwrap();
        let b = fourier_expand(&[q], 4).unwrap();
        assert_eq!(b.feature(0)[0] - a.feature(0)[0], 2.0 * PI);
        for k in 3..a.dim() {
            assert!((a.feature(0)[k] - b.feature(0)[k]).abs() < 1e-6);
        }
    }

    fn triangle() -> TriMesh {
        TriMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn centroid_sample_averages_vertex_features() {
        let mesh = triangle();
        let feats = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let c = densify_surface(&mesh, &feats, 2, 0, 4, 1, Interpolation::Centroid).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.feature(0), &[1.0, 2.0]);
        let f = c.feature(3);
        assert!((f[0] - 7.0).abs() < 1e-12 && (f[1] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn constant_features_stay_constant() {
        let mesh = crate::shapes::icosphere(1, 1.0);
        let feats = vec![0.25; mesh.vertex_count() * 3];
        let c = densify_surface(&mesh, &feats, 3, 0, 500, 9, Interpolation::Barycentric).unwrap();
        assert!(c.features().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn densify_is_seed_deterministic() {
        let mesh = crate::shapes::icosphere(1, 1.0);
        let feats = fourier_expand(&mesh.vertices, 1).unwrap();
        let a = densify_surface(&mesh, feats.features(), 9, 1, 300, 5, Interpolation::Barycentric).unwrap();
        let b = densify_surface(&mesh, feats.features(), 9, 1, 300, 5, Interpolation::Barycentric).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn densify_rejects_small_target_and_degenerate_faces() {
        let mesh = triangle();
        assert!(densify_surface(&mesh, &[0.0; 3], 1, 0, 2, 0, Interpolation::Barycentric).is_err());
        let flat = TriMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(densify_surface(&flat, &[0.0; 3], 1, 0, 5, 0, Interpolation::Barycentric).is_err());
    }

    #[test]
    fn center_point_lands_on_center_pixel() {
        let cam = &make_camera_rig(Rig::Front3, 3, 1.0).unwrap()[0];
        let cloud = fourier_expand(&[Vec3::new(0.0, 0.0, 0.0)], 1).unwrap();
        let (map, stats) = project_features(&cloud, cam).unwrap();
        assert_eq!(stats.written, 1);
        for y in 0..3 {
            for x in 0..3 {
                let nonzero = map.pixel(y, x).iter().any(|v| *v != 0.0);
                assert_eq!(nonzero, (y, x) == (1, 1));
            }
        }
        assert_eq!(map.pixel(1, 1), cloud.feature(0));
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let cam = &make_camera_rig(Rig::Front3, 5, 1.0).unwrap()[0];
        // camera sits at z = +3 looking down -z: depth 1 is z = 2
        let far = Vec3::new(0.1, 0.1, 1.0);
        let near = Vec3::new(0.1, 0.1, 2.0);
        let cloud = fourier_expand(&[far, near], 2).unwrap();
        let (map, stats) = project_features(&cloud, cam).unwrap();
        let (r, c) = cam.nearest_pixel(&cam.to_camera(&near)).unwrap();
        assert_eq!(map.pixel(r, c), cloud.feature(1));
        assert_eq!(stats.occluded, 1);
    }

    #[test]
    fn off_screen_points_are_counted() {
        let cam = &make_camera_rig(Rig::Front3, 4, 1.0).unwrap()[0];
        let cloud = fourier_expand(&[Vec3::new(5.0, 0.0, 0.0), Vec3::zeros()], 0).unwrap();
        let (_, stats) = project_features(&cloud, cam).unwrap();
        assert_eq!(stats.off_screen, 1);
        assert_eq!(stats.written, 1);
    }

    #[test]
    fn stack_requires_three_matching_cameras() {
        let cloud = fourier_expand(&[Vec3::zeros()], 1).unwrap();
        let cams = make_camera_rig(Rig::Front3, 8, 1.0).unwrap();
        assert!(build_fourier_stack(&cloud, &cams[..2]).is_err());
        let mut odd = cams.clone();
        odd[2] = odd[2].with_size(8, 9).unwrap();
        assert!(build_fourier_stack(&cloud, &odd).is_err());
        let same = vec![cams[0].clone(), cams[0].clone(), cams[0].clone()];
        let s = build_fourier_stack(&cloud, &same).unwrap();
        assert_eq!(s.maps[0], s.maps[1]);
        assert_eq!(s.maps[1], s.maps[2]);
    }

    #[test]
    fn front_plucker_direction_is_minus_z() {
        let cam = &make_camera_rig(Rig::Front3, 4, 1.0).unwrap()[0];
        let p = plucker_map(cam);
        for y in 0..4 {
            for x in 0..4 {
                let px = p.pixel(y, x);
                assert!((px[0]).abs() < 1e-15 && px[1].abs() < 1e-15 && (px[2] + 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn encoder_checks_channels() {
        let cams = make_camera_rig(Rig::Front3, 4, 1.0).unwrap();
        let cloud = fourier_expand(&[Vec3::zeros()], 1).unwrap();
        let stack = build_fourier_stack(&cloud, &cams).unwrap();
        let pl: Vec<_> = cams.iter().map(plucker_map).collect();
        let bad = Conv2d::zeros(4, 9, 3);
        assert!(encode_stack(&stack, &pl, &bad).is_err());
        let good = Conv2d::zeros(4, 15, 3);
        let out = encode_stack(&stack, &pl, &good).unwrap();
        assert_eq!(out.shape(), (12, 4, 4));
    }
}
