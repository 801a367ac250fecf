use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::Vec3;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<Vec3>>,
}

/// Face normal; `degenerate` is set for zero-area faces whose normal is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceNormal {
    pub normal: Vec3,
    pub degenerate: bool,
}

impl TriMesh {
    /// Validates indices and rejects faces that repeat a vertex.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            faces,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::shape(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::Validation {
                    index: i,
                    msg: "non-finite vertex position".into(),
                });
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&idx| idx >= n) {
                return Err(Error::Validation {
                    index: i,
                    msg: format!("face index {bad} out of range for {n} vertices"),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Validation {
                    index: i,
                    msg: format!("degenerate face {f:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized `cross(v1 - v0, v2 - v0)`; its length is twice the area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_normal(&self, face: usize) -> FaceNormal {
        let c = self.face_cross(face);
        let n = c.norm();
        if n > 0.0 && n.is_finite() {
            FaceNormal {
                normal: c / n,
                degenerate: false,
            }
        } else {
            FaceNormal {
                normal: Vec3::zeros(),
                degenerate: true,
            }
        }
    }

    pub fn face_normals(&self) -> Vec<FaceNormal> {
        (0..self.faces.len()).map(|f| self.face_normal(f)).collect()
    }

    /// Area-weighted vertex normals; isolated vertices get zero.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = self.face_cross(fi);
            for &v in f {
                acc[v] += c;
            }
        }
        acc.into_iter()
            .map(|n| {
                let l = n.norm();
                if l > 0.0 {
                    n / l
                } else {
                    n
                }
            })
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Sorted unique one-ring neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Unique undirected edges `(lo, hi)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Keeps only the connected component with the most faces; unreferenced
    /// vertices are dropped and indices compacted in ascending order.
    pub fn largest_component(&self) -> TriMesh {
        if self.faces.is_empty() {
            return self.clone();
        }
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let a = find(&mut parent, f[0]);
                let b = find(&mut parent, f[k]);
                if a != b {
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
        let mut counts = std::collections::BTreeMap::new();
        for f in &self.faces {
            *counts.entry(find(&mut parent, f[0])).or_insert(0usize) += 1;
        }
        // ties resolve to the smallest root
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(r, _)| *r)
            .unwrap();
        let faces: Vec<[usize; 3]> = self
            .faces
            .iter()
            .copied()
            .filter(|f| find(&mut parent, f[0]) == best)
            .collect();
        self.compact(faces)
    }

    fn compact(&self, faces: Vec<[usize; 3]>) -> TriMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        for f in &faces {
            for &v in f {
                remap[v] = 0;
            }
        }
        let mut vertices = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        for (i, r) in remap.iter_mut().enumerate() {
            if *r == 0 {
                *r = vertices.len();
                vertices.push(self.vertices[i]);
                if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        let faces = faces
            .into_iter()
            .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        TriMesh {
            vertices,
            faces,
            colors,
        }
    }

    /// Applies `x -> rot * x + shift` to every vertex.
    pub fn transformed(&self, rot: &crate::gaussian::Mat3, shift: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| rot * v + shift).collect(),
            ..self.clone()
        }
    }

    /// Area-weighted surface samples with the face normal of each sample.
    ///
    /// Zero-area faces are never selected. Deterministic for a fixed RNG state.
    pub fn sample_surface<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<(Vec3, Vec3)>> {
        let cdf = self.area_cdf()?;
        let total = *cdf.last().unwrap();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let face = pick_face(&cdf, rng.random::<f64>() * total);
            let bary = random_barycentric(rng.random(), rng.random());
            let [a, b, c] = self.corners(face);
            out.push((a * bary[0] + b * bary[1] + c * bary[2], self.face_normal(face).normal));
        }
        Ok(out)
    }

    /// Cumulative face areas; errors when the total area is zero.
    pub fn area_cdf(&self) -> Result<Vec<f64>> {
        if self.faces.is_empty() {
            return Err(Error::Empty("mesh has no faces".into()));
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = (0..self.faces.len())
            .map(|f| {
                acc += self.face_area(f);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::invalid("mesh has zero surface area"));
        }
        Ok(cdf)
    }
}

/// Index of the first face whose cumulative area exceeds `target`.
pub(crate) fn pick_face(cdf: &[f64], target: f64) -> usize {
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

/// Uniform barycentric coordinates from two uniform variates.
pub(crate) fn random_barycentric(u: f64, v: f64) -> [f64; 3] {
    let su = u.sqrt();
    let a = 1.0 - su;
    let b = su * (1.0 - v);
    [a, b, 1.0 - a - b]
}
