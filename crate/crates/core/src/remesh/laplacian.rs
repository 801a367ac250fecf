use crate::gaussian::Vec3;
use crate::mesh::TriMesh;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianEnergy {
    pub energy: f64,
    pub gradient: Vec<Vec3>,
    /// Vertices without neighbors, left out of the mean.
    pub isolated: usize,
}

/// Umbrella Laplacian `delta_v = mean(neighbors) - v`; energy is the mean of
/// `|delta_v|^2` over vertices that have neighbors.
pub fn laplacian_energy(mesh: &TriMesh) -> LaplacianEnergy {
    laplacian_with_neighbors(mesh, &mesh.neighbors())
}

pub(crate) fn laplacian_with_neighbors(mesh: &TriMesh, nbrs: &[Vec<usize>]) -> LaplacianEnergy {
    let n = mesh.vertices.len();
    let deltas: Vec<Option<Vec3>> = (0..n)
        .map(|v| {
            let nb = &nbrs[v];
            (!nb.is_empty()).then(|| nb.iter().map(|&u| mesh.vertices[u]).sum::<Vec3>() / nb.len() as f64 - mesh.vertices[v])
        })
        .collect();
    let counted = deltas.iter().filter(|d| d.is_some()).count();
    let mut gradient = vec![Vec3::zeros(); n];
    if counted == 0 {
        return LaplacianEnergy {
            energy: 0.0,
            gradient,
            isolated: n,
        };
    }
    let scale = 2.0 / counted as f64;
    let mut energy = 0.0;
    for v in 0..n {
        let Some(d) = deltas[v] else { continue };
        energy += d.norm_squared();
        gradient[v] -= d * scale;
        let share = d * (scale / nbrs[v].len() as f64);
        for &u in &nbrs[v] {
            gradient[u] += share;
        }
    }
    LaplacianEnergy {
        energy: energy / counted as f64,
        gradient,
        isolated: n - counted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{icosphere, plane_grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_grid_interior_has_zero_delta() {
        let mesh = plane_grid(5);
        let nb = mesh.neighbors();
        // vertex (2, 2) has the 6 neighbors of the diagonal split, symmetric about it
        let v = 2 * 5 + 2;
        let mean: Vec3 = nb[v].iter().map(|&u| mesh.vertices[u]).sum::<Vec3>() / nb[v].len() as f64;
        assert!((mean - mesh.vertices[v]).norm() < 1e-12);
    }

    #[test]
    fn icosphere_deltas_are_equal() {
        let mesh = icosphere(0, 1.0);
        let nb = mesh.neighbors();
        let lens: Vec<f64> = (0..mesh.vertices.len())
            .map(|v| (nb[v].iter().map(|&u| mesh.vertices[u]).sum::<Vec3>() / nb[v].len() as f64 - mesh.vertices[v]).norm())
            .collect();
        for l in &lens {
            assert!((l - lens[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mesh = icosphere(1, 1.0);
        mesh.vertices.truncate(42);
        mesh.faces.retain(|f| f.iter().all(|&i| i < 42));
        // 42 sphere vertices plus 8 isolated ones
        for _ in 0..8 {
            mesh.vertices.push(Vec3::new(rng.random(), rng.random(), rng.random()));
        }
        for v in mesh.vertices.iter_mut() {
            *v += Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        }
        assert_eq!(mesh.vertices.len(), 50);
        let base = laplacian_energy(&mesh);
        assert_eq!(base.isolated, 8);
        let h = 1e-5;
        for v in 0..mesh.vertices.len() {
            for k in 0..3 {
                let mut p = mesh.clone();
                p.vertices[v][k] += h;
                let mut m = mesh.clone();
                m.vertices[v][k] -= h;
                let fd = (laplacian_energy(&p).energy - laplacian_energy(&m).energy) / (2.0 * h);
                let a = base.gradient[v][k];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-300);
                assert!(err < 1e-6 || (a - fd).abs() < 1e-12, "v{v} k{k}: {a} vs {fd}");
            }
        }
    }
}
