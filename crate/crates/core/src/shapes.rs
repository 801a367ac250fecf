//! Procedural meshes and Gaussian fixtures.

use std::collections::HashMap;

use crate::gaussian::{Gaussian, GaussianSet, Vec3};
use crate::mesh::TriMesh;

/// Subdivided icosahedron projected to a sphere; `subdiv = 4` gives 2562 vertices.
pub fn icosphere(subdiv: usize, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh {
        vertices: verts.into_iter().map(|v| v * radius).collect(),
        faces,
        colors: None,
    }
}

/// Latitude/longitude sphere with `rings - 1` latitude circles of `segments`
/// vertices plus two poles.
pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> TriMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut verts = vec![Vec3::new(0.0, radius, 0.0)];
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            verts.push(Vec3::new(phi.sin() * theta.sin(), phi.cos(), phi.sin() * theta.cos()) * radius);
        }
    }
    verts.push(Vec3::new(0.0, -radius, 0.0));
    let bottom = verts.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriMesh {
        vertices: verts,
        faces,
        colors: None,
    }
}

/// Axis-aligned box `[-h, h]` with outward-facing triangles.
pub fn box_mesh(half: Vec3) -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriMesh {
        vertices: v,
        faces,
        colors: None,
    }
}

/// `n x n` vertex grid on the `z = 0` plane spanning `[-1, 1]^2`, facing `+z`.
pub fn plane_grid(n: usize) -> TriMesh {
    assert!(n >= 2);
    let mut verts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let y = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
            verts.push(Vec3::new(x, y, 0.0));
        }
    }
    let mut faces = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            faces.push([a, a + 1, a + n + 1]);
            faces.push([a, a + n + 1, a + n]);
        }
    }
    TriMesh {
        vertices: verts,
        faces,
        colors: None,
    }
}

/// Quasi-uniform points on a sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            Vec3::new(r * theta.cos(), y, r * theta.sin()) * radius
        })
        .collect()
}

/// Normal-Gaussian avatar of a sphere: isotropic Gaussians on the surface whose
/// colors encode the outward normal as `(n + 1) / 2`.
pub fn sphere_gaussians(n: usize, radius: f64, sigma: f64, opacity: f64) -> GaussianSet {
    let gaussians = fibonacci_sphere(n, radius)
        .into_iter()
        .map(|p| {
            let normal = p.normalize();
            Gaussian::isotropic(p, sigma, opacity, (normal + Vec3::repeat(1.0)) * 0.5)
                .expect("fixture parameters are valid")
        })
        .collect();
    GaussianSet::new(gaussians)
}

/// The sphere fixture used across tests and the pipeline demo.
pub fn sphere_fixture() -> GaussianSet {
    sphere_gaussians(2000, 1.0, 0.04, 0.8)
}
