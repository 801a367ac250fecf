//! Coarse mesh extraction from Gaussians and silhouette/normal refinement.

mod extract;
mod laplacian;
mod tables;


use serde::{Deserialize, Serialize};

use crate::camera::{make_camera_rig, OrthoCamera, Rig};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::{GaussianSet, Vec3};
use crate::mesh::TriMesh;
use crate::raster::{render_gaussians, MeshTopology, RenderMode, SoftRenderConfig};

pub use extract::{density_field, gaussian_bounds, marching_cubes, ScalarGrid};
pub use laplacian::{laplacian_energy, LaplacianEnergy};

/// Wall clock that reads zero on targets without a system clock.
struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.start.elapsed().as_secs_f64() * 1e3;
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        0.0
    }
}

const MOMENTUM: f64 = 0.9;
const PATIENCE: usize = 10;
const ISO_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemeshConfig {
    /// Empty means an 8-view ring framing the Gaussians at `resolution`.
    pub views: Vec<OrthoCamera>,
    pub resolution: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub lambda_normal: f64,
    pub lambda_mask: f64,
    pub lambda_lap: f64,
    pub grid_res: usize,
    /// Absolute iso level; `None` uses 0.3 of the field maximum.
    pub iso_level: Option<f64>,
    pub stop_tol: f64,
    pub render: SoftRenderConfig,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        RemeshConfig {
            views: Vec::new(),
            resolution: 512,
            iterations: 200,
            step_size: 10.0,
            lambda_normal: 1.0,
            lambda_mask: 1.0,
            lambda_lap: 1.0,
            grid_res: 32,
            iso_level: None,
            stop_tol: 1e-6,
            render: SoftRenderConfig::default(),
        }
    }
}

impl RemeshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if self.grid_res < 8 {
            return Err(Error::invalid(format!("grid_res {} must be at least 8", self.grid_res)));
        }
        for (name, l) in [
            ("lambda_normal", self.lambda_normal),
            ("lambda_mask", self.lambda_mask),
            ("lambda_lap", self.lambda_lap),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol must be non-negative"));
        }
        if self.views.is_empty() && self.resolution == 0 {
            return Err(Error::invalid("resolution must be at least 1"));
        }
        self.render.validate()
    }

    /// Configured views, or the default ring around `set`.
    pub fn resolve_views(&self, set: &GaussianSet) -> Result<Vec<OrthoCamera>> {
        if !self.views.is_empty() {
            return Ok(self.views.clone());
        }
        let (lo, hi) = gaussian_bounds(set, 0.0)?;
        let extent = lo.abs().max().max(hi.abs().max()) * 1.1;
        make_camera_rig(Rig::Ring8, self.resolution, extent)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub normal: f64,
    pub mask: f64,
    pub lap: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Iterations,
    Converged,
    NothingToOptimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemeshReport {
    /// Losses of the current mesh after each iteration.
    pub iterations: Vec<LossTerms>,
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub final_losses: LossTerms,
    pub accepted: usize,
    pub rejected: usize,
    pub stop: StopReason,
    pub wall_ms: f64,
    pub verts_before: usize,
    pub verts_after: usize,
    pub faces_before: usize,
    pub faces_after: usize,
}

impl RemeshReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Per-view supervision: a normal map and a mask seen from `camera`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTarget {
    pub camera: OrthoCamera,
    pub normal: FeatureMap,
    pub mask: FeatureMap,
}

/// Renders normal-mode targets of `set` for each view.
pub fn gaussian_targets(set: &GaussianSet, views: &[OrthoCamera], render: &SoftRenderConfig) -> Result<Vec<ViewTarget>> {
    let outs = crate::par::map_slice(views, |cam| render_gaussians(set, cam, RenderMode::Normal, render));
    views
        .iter()
        .zip(outs)
        .enumerate()
        .map(|(i, (cam, out))| {
            let out = out?;
            if !out.alpha.data().iter().any(|&a| a > 0.5) {
                return Err(Error::invalid(format!("view {i} sees an empty silhouette")));
            }
            Ok(ViewTarget {
                camera: cam.clone(),
                normal: out.image,
                mask: out.alpha,
            })
        })
        .collect()
}

/// Marching cubes on the density field, largest component only.
pub fn init_coarse_mesh(set: &GaussianSet, config: &RemeshConfig) -> Result<TriMesh> {
    config.validate()?;
    let bounds = gaussian_bounds(set, 0.05)?;
    let grid = density_field(set, config.grid_res, bounds)?;
    let max = grid.max();
    let iso = config.iso_level.unwrap_or(ISO_FRACTION * max);
    if !(iso < max) {
        return Err(Error::Empty(format!(
            "iso level {iso} is not below the field maximum {max}; try a level near {}",
            ISO_FRACTION * max
        )));
    }
    let mesh = marching_cubes(&grid, iso)?.largest_component();
    mesh.validate()?;
    Ok(mesh)
}

/// Coarse initialization followed by refinement against the Gaussians' own
/// normal and mask renders.
pub fn remesh(set: &GaussianSet, config: &RemeshConfig) -> Result<(TriMesh, RemeshReport)> {
    config.validate()?;
    let views = config.resolve_views(set)?;
    let targets = gaussian_targets(set, &views, &config.render)?;
    let coarse = init_coarse_mesh(set, config)?;
    refine_mesh(&coarse, &targets, config)
}

/// Weighted losses and gradient of one mesh state.
pub struct Evaluation {
    pub losses: LossTerms,
    pub gradient: Vec<Vec3>,
}

/// Evaluates the weighted objective summed over views.
pub fn evaluate(
    mesh: &TriMesh,
    topo: &MeshTopology,
    nbrs: &[Vec<usize>],
    targets: &[ViewTarget],
    config: &RemeshConfig,
) -> Result<Evaluation> {
    let per_view = crate::par::map_slice(targets, |t| topo.render_with_grads(mesh, &t.camera, &config.render, &t.normal, &t.mask));
    let mut losses = LossTerms::default();
    let mut gradient = vec![Vec3::zeros(); mesh.vertices.len()];
    for g in per_view {
        let g = g?;
        losses.normal += g.loss_normal;
        losses.mask += g.loss_mask;
        for (acc, (gn, gm)) in gradient.iter_mut().zip(g.grad_normal.iter().zip(&g.grad_mask)) {
            *acc += gn * config.lambda_normal + gm * config.lambda_mask;
        }
    }
    let lap = laplacian::laplacian_with_neighbors(mesh, nbrs);
    losses.lap = lap.energy;
    for (acc, gl) in gradient.iter_mut().zip(&lap.gradient) {
        *acc += gl * config.lambda_lap;
    }
    losses.total = config.lambda_normal * losses.normal + config.lambda_mask * losses.mask + config.lambda_lap * losses.lap;
    Ok(Evaluation { losses, gradient })
}

/// Momentum descent on vertex positions with fixed topology. A step that
/// raises the total loss is undone, the step size halves and the velocity
/// resets, so accepted losses never increase.
pub fn refine_mesh(coarse: &TriMesh, targets: &[ViewTarget], config: &RemeshConfig) -> Result<(TriMesh, RemeshReport)> {
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::invalid("refinement needs at least one view"));
    }
    let start = Stopwatch::start();
    let topo = MeshTopology::new(coarse);
    let nbrs = coarse.neighbors();
    let mut mesh = coarse.clone();
    let mut current = evaluate(&mesh, &topo, &nbrs, targets, config)?;
    if !current.losses.total.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            msg: "initial loss is not finite".into(),
        });
    }
    let initial = current.losses;
    let mut history = Vec::with_capacity(config.iterations);
    let (mut accepted, mut rejected, mut calm) = (0, 0, 0);
    let mut stop = StopReason::Iterations;
    let nothing = config.lambda_normal == 0.0 && config.lambda_mask == 0.0 && config.lambda_lap == 0.0;
    if nothing {
        stop = StopReason::NothingToOptimize;
    } else {
        let mut step = config.step_size;
        let mut velocity = vec![Vec3::zeros(); mesh.vertices.len()];
        for it in 0..config.iterations {
            for (v, g) in velocity.iter_mut().zip(&current.gradient) {
                *v = *v * MOMENTUM - g * step;
            }
            let mut trial = mesh.clone();
            for (p, v) in trial.vertices.iter_mut().zip(&velocity) {
                *p += v;
            }
            // a step can fold a triangle flat; treat that like a loss increase
            let eval = match evaluate(&trial, &topo, &nbrs, targets, config) {
                Ok(e) => Some(e),
                Err(Error::Validation { .. }) => None,
                Err(e) => return Err(e),
            };
            if let Some(e) = &eval {
                if e.losses.total.is_nan() {
                    return Err(Error::Diverged {
                        iteration: it + 1,
                        msg: "loss is NaN".into(),
                    });
                }
            }
            match eval {
                Some(e) if e.losses.total <= current.losses.total => {
                    let prev = current.losses.total;
                    let rel = if prev > 0.0 { (prev - e.losses.total) / prev } else { 0.0 };
                    mesh = trial;
                    current = e;
                    accepted += 1;
                    calm = if rel < config.stop_tol { calm + 1 } else { 0 };
                }
                _ => {
                    rejected += 1;
                    step *= 0.5;
                    velocity.iter_mut().for_each(|v| *v = Vec3::zeros());
                }
            }
            history.push(current.losses);
            if calm >= PATIENCE {
                stop = StopReason::Converged;
                break;
            }
        }
    }
    let report = RemeshReport {
        iterations: history,
        initial,
        final_losses: current.losses,
        accepted,
        rejected,
        stop,
        wall_ms: start.elapsed_ms(),
        verts_before: coarse.vertices.len(),
        verts_after: mesh.vertices.len(),
        faces_before: coarse.faces.len(),
        faces_after: mesh.faces.len(),
    };
    Ok((mesh, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render_mesh;
    use crate::shapes::{icosphere, sphere_fixture};

    fn small_config() -> RemeshConfig {
        RemeshConfig {
            views: make_camera_rig(Rig::Ring8, 32, 1.3).unwrap(),
            iterations: 20,
            grid_res: 32,
            ..Default::default()
        }
    }

    #[test]
    fn coarse_sphere_vertices_near_unit_radius() {
        let cfg = RemeshConfig {
            grid_res: 32,
            ..Default::default()
        };
        let mesh = init_coarse_mesh(&sphere_fixture(), &cfg).unwrap();
        let near = mesh.vertices.iter().filter(|v| (v.norm() - 1.0).abs() <= 0.1).count();
        assert!(near as f64 >= 0.95 * mesh.vertices.len() as f64);
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn iso_above_max_errors() {
        let cfg = RemeshConfig {
            iso_level: Some(1e6),
            ..small_config()
        };
        assert!(matches!(init_coarse_mesh(&sphere_fixture(), &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_weights_leave_mesh_unchanged() {
        let cfg = RemeshConfig {
            lambda_normal: 0.0,
            lambda_mask: 0.0,
            lambda_lap: 0.0,
            ..small_config()
        };
        let coarse = icosphere(2, 0.9);
        let targets = gaussian_targets(&sphere_fixture(), &cfg.views, &cfg.render).unwrap();
        let (mesh, report) = refine_mesh(&coarse, &targets, &cfg).unwrap();
        assert_eq!(mesh, coarse);
        assert_eq!(report.stop, StopReason::NothingToOptimize);
    }

    #[test]
    fn self_supervised_mesh_stays_put() {
        let cfg = RemeshConfig {
            lambda_lap: 0.0,
            ..small_config()
        };
        let coarse = icosphere(2, 0.9);
        let targets: Vec<ViewTarget> = cfg
            .views
            .iter()
            .map(|cam| {
                let out = render_mesh(&coarse, cam, &cfg.render).unwrap();
                ViewTarget {
                    camera: cam.clone(),
                    normal: out.image,
                    mask: out.alpha,
                }
            })
            .collect();
        let (mesh, report) = refine_mesh(&coarse, &targets, &cfg).unwrap();
        assert!((report.final_losses.total - report.initial.total).abs() < 1e-6);
        let moved = mesh.vertices.iter().zip(&coarse.vertices).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(moved < 1e-4, "{moved}");
    }

    #[test]
    fn accepted_losses_never_increase() {
        let cfg = small_config();
        let (_, report) = remesh(&sphere_fixture(), &cfg).unwrap();
        let mut prev = report.initial.total;
        for l in &report.iterations {
            assert!(l.total <= prev);
            prev = l.total;
        }
    }

    #[test]
    fn view_gradients_add_up() {
        let cfg = small_config();
        let set = sphere_fixture();
        let targets = gaussian_targets(&set, &cfg.views, &cfg.render).unwrap();
        let mesh = icosphere(2, 1.05);
        let topo = MeshTopology::new(&mesh);
        let nbrs = mesh.neighbors();
        let cfg0 = RemeshConfig { lambda_lap: 0.0, ..cfg };
        let all = evaluate(&mesh, &topo, &nbrs, &targets, &cfg0).unwrap();
        let mut sum = vec![Vec3::zeros(); mesh.vertices.len()];
        for t in &targets {
            let one = evaluate(&mesh, &topo, &nbrs, std::slice::from_ref(t), &cfg0).unwrap();
            sum.iter_mut().zip(&one.gradient).for_each(|(s, g)| *s += g);
        }
        let diff = all.gradient.iter().zip(&sum).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn strong_laplacian_smooths() {
        let cfg = RemeshConfig {
            lambda_lap: 1e3,
            ..small_config()
        };
        let set = sphere_fixture();
        let coarse = init_coarse_mesh(&set, &cfg).unwrap();
        let targets = gaussian_targets(&set, &cfg.views, &cfg.render).unwrap();
        let (mesh, _) = refine_mesh(&coarse, &targets, &cfg).unwrap();
        assert!(laplacian_energy(&mesh).energy < laplacian_energy(&coarse).energy);
    }
}
