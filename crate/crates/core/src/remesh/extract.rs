use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, Mat3, Vec3};
use crate::mesh::TriMesh;

use super::tables::TRI_TABLE;

/// Samples on a regular lattice; node `(i, j, k)` sits at
/// `min + (i, j, k) * spacing`, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub res: usize,
    pub min: Vec3,
    pub spacing: Vec3,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.min + self.spacing.component_mul(&Vec3::new(i as f64, j as f64, k as f64))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Opacity-weighted sum of Gaussian kernels, each truncated to its
/// per-axis 3-sigma box.
pub fn density_field(set: &GaussianSet, grid_res: usize, bounds: (Vec3, Vec3)) -> Result<ScalarGrid> {
    set.require_nonempty()?;
    set.validate()?;
    if grid_res < 2 {
        return Err(Error::invalid(format!("grid resolution {grid_res} must be at least 2")));
    }
    let (min, max) = bounds;
    let size = max - min;
    if !(size.iter().all(|s| *s > 0.0 && s.is_finite())) || !min.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("degenerate grid bounds {min:?} .. {max:?}")));
    }
    let spacing = size / (grid_res - 1) as f64;

    struct Kernel {
        center: Vec3,
        precision: Mat3,
        opacity: f64,
        lo: [usize; 3],
        hi: [usize; 3],
    }
    let mut kernels = Vec::new();
    for g in &set.gaussians {
        let r = g.rotation_matrix();
        let inv_s2 = Mat3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)));
        let precision = r * inv_s2 * r.transpose();
        let cov = g.covariance();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for a in 0..3 {
            let half = 3.0 * cov[(a, a)].sqrt();
            let l = ((g.center[a] - half - min[a]) / spacing[a]).ceil().max(0.0);
            let h = ((g.center[a] + half - min[a]) / spacing[a]).floor().min((grid_res - 1) as f64);
            if h < l {
                empty = true;
                break;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }
        if !empty {
            kernels.push(Kernel {
                center: g.center,
                precision,
                opacity: g.opacity,
                lo,
                hi,
            });
        }
    }

    let plane = grid_res * grid_res;
    let mut values = vec![0.0; plane * grid_res];
    crate::par::for_each_chunk_mut(&mut values, plane, |k, slab| {
        let z = min.z + spacing.z * k as f64;
        for kern in kernels.iter().filter(|kn| kn.lo[2] <= k && k <= kn.hi[2]) {
            for j in kern.lo[1]..=kern.hi[1] {
                let y = min.y + spacing.y * j as f64;
                for i in kern.lo[0]..=kern.hi[0] {
                    let d = Vec3::new(min.x + spacing.x * i as f64, y, z) - kern.center;
                    slab[j * grid_res + i] += kern.opacity * (-0.5 * d.dot(&(kern.precision * d))).exp();
                }
            }
        }
    });
    Ok(ScalarGrid {
        res: grid_res,
        min,
        spacing,
        values,
    })
}

/// Bounds enclosing every Gaussian's 3-sigma box plus `margin` of the span on
/// each side.
pub fn gaussian_bounds(set: &GaussianSet, margin: f64) -> Result<(Vec3, Vec3)> {
    set.require_nonempty()?;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for g in &set.gaussians {
        let cov = g.covariance();
        for a in 0..3 {
            let half = 3.0 * cov[(a, a)].sqrt();
            lo[a] = lo[a].min(g.center[a] - half);
            hi[a] = hi[a].max(g.center[a] + half);
        }
    }
    let pad = (hi - lo).max() * margin;
    Ok((lo - Vec3::repeat(pad), hi + Vec3::repeat(pad)))
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];
/// Interpolation parameters are kept this far from the lattice nodes so
/// that no triangle collapses to zero area.
const T_CLAMP: f64 = 1e-3;

/// Iso-surface enclosing the region where the field exceeds `iso`, with
/// outward-facing triangles. Vertices are shared between cubes and numbered
/// in traversal order, so the output is deterministic.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriMesh> {
    let n = grid.res;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let nodes = CORNERS.map(|c| [i + c[0], j + c[1], k + c[2]]);
                let vals = nodes.map(|[a, b, c]| grid.get(a, b, c));
                let config = (0..8).filter(|&c| vals[c] < iso).fold(0usize, |acc, c| acc | (1 << c));
                if config == 0 || config == 255 {
                    continue;
                }
                let mut edge_vertex = |e: usize, vertices: &mut Vec<Vec3>| -> usize {
                    let [c0, c1] = EDGES[e];
                    let (n0, n1) = (nodes[c0], nodes[c1]);
                    let axis = (0..3).find(|&a| n0[a] != n1[a]).expect("lattice edge");
                    let (lo, hi, vlo, vhi) = if n0[axis] < n1[axis] {
                        (n0, n1, vals[c0], vals[c1])
                    } else {
                        (n1, n0, vals[c1], vals[c0])
                    };
                    let key = (grid.index(lo[0], lo[1], lo[2]), axis);
                    *welded.entry(key).or_insert_with(|| {
                        let t = ((iso - vlo) / (vhi - vlo)).clamp(T_CLAMP, 1.0 - T_CLAMP);
                        let (a, b) = (grid.node(lo[0], lo[1], lo[2]), grid.node(hi[0], hi[1], hi[2]));
                        vertices.push(a + (b - a) * t);
                        vertices.len() - 1
                    })
                };
                for tri in TRI_TABLE[config].chunks(3).take_while(|t| t[0] >= 0) {
                    let f = [0, 1, 2].map(|m| edge_vertex(tri[m] as usize, &mut vertices));
                    faces.push(f);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::Empty(format!(
            "iso level {iso} produced an empty surface (field max {}); try a level near {}",
            grid.max(),
            0.3 * grid.max()
        )));
    }
    faces.retain(|f| {
        let c = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        f[0] != f[1] && f[1] != f[2] && f[0] != f[2] && c.norm() > 0.0
    });
    let mut mesh = TriMesh {
        vertices,
        faces,
        colors: None,
    };
    let volume: f64 = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.corners(f);
            a.dot(&b.cross(&c))
        })
        .sum();
    if volume < 0.0 {
        mesh.faces.iter_mut().for_each(|f| f.swap(1, 2));
    }
    Ok(mesh)
}
