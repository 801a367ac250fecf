use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use splatrecon::camera::{make_camera_rig, OrthoCamera, Rig};
use splatrecon::fourier::{build_fourier_stack, densify_surface, fourier_expand, plucker_map, Interpolation};
use splatrecon::io::{gaussians_to_ply, load_gaussians_ply, load_mesh, obj_string, save_gaussians_ply, save_mesh};
use splatrecon::metrics::{evaluate_geometry, evaluate_image, GeomOptions, GeomReport, ImageReport};
use splatrecon::netshell::{self, DualUNetWeights, TextureEncoderWeights, WeightStore};
use splatrecon::raster::{render_gaussians, render_mesh, RenderMode, SoftRenderConfig};
use splatrecon::remesh::{gaussian_bounds, gaussian_targets, init_coarse_mesh, refine_mesh, LossTerms, RemeshConfig, RemeshReport, StopReason};
use splatrecon::shapes::{icosphere, sphere_fixture};
use splatrecon::{FeatureMap, GaussianSet, Tensor, TriMesh};

use crate::cache::{sha256_file, sha256_hex, StageKey};
use crate::config::PipelineConfig;

pub const STAGES: [(&str, i32); 4] = [("encode", 10), ("netshell", 11), ("remesh", 12), ("eval", 13)];

/// Stage failure carrying the stage name and its exit code.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub code: i32,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub out_dir: PathBuf,
    pub stages: Vec<(&'static str, StageStatus)>,
}

/// A loaded input and the content hash used for caching.
struct Input<T> {
    value: T,
    hash: String,
    builtin: bool,
}

fn body_mesh(path: Option<&Path>) -> Result<Input<TriMesh>> {
    match path {
        Some(p) => Ok(Input {
            value: load_mesh(p).with_context(|| format!("loading mesh {}", p.display()))?,
            hash: sha256_file(p)?,
            builtin: false,
        }),
        None => {
            let m = icosphere(3, 1.0);
            Ok(Input {
                hash: sha256_hex(obj_string(&m).as_bytes()),
                value: m,
                builtin: true,
            })
        }
    }
}

fn splat_input(path: Option<&Path>) -> Result<Input<GaussianSet>> {
    match path {
        Some(p) => Ok(Input {
            value: load_gaussians_ply(p).with_context(|| format!("loading splat {}", p.display()))?,
            hash: sha256_file(p)?,
            builtin: false,
        }),
        None => {
            let s = sphere_fixture();
            Ok(Input {
                hash: sha256_hex(&gaussians_to_ply(&s)?.to_bytes()),
                value: s,
                builtin: true,
            })
        }
    }
}

fn mesh_extent(mesh: &TriMesh) -> f64 {
    mesh.vertices.iter().map(|v| v.amax()).fold(0.0, f64::max) * 1.25
}

/// Densified Fourier stack of `mesh` seen by the three axis views.
pub fn encode_geometry(mesh: &TriMesh, q: usize, m: usize, size: usize, extent: f64, seed: u64) -> Result<(Vec<FeatureMap>, Vec<OrthoCamera>)> {
    let cloud = fourier_expand(&mesh.vertices, q)?;
    let dense = densify_surface(mesh, cloud.features(), cloud.dim(), q, m.max(mesh.vertex_count()), seed, Interpolation::Barycentric)?;
    let cams = make_camera_rig(Rig::Front3, size, extent)?;
    let stack = build_fourier_stack(&dense, &cams)?;
    Ok((stack.maps, cams))
}

/// Gated texture features of `image` seen from `camera`.
pub fn encode_texture(image: &FeatureMap, camera: &OrthoCamera, weights: &TextureEncoderWeights) -> Result<FeatureMap> {
    Ok(netshell::texture_encode(image, &plucker_map(camera), weights)?)
}

pub fn texture_weights(store: Option<&WeightStore>, channels: usize, seed: u64) -> Result<TextureEncoderWeights> {
    match store {
        Some(s) if s.get("tex.conv.weight").is_ok() => Ok(TextureEncoderWeights::load(s, "tex")?),
        _ => Ok(TextureEncoderWeights::seeded(channels, seed)),
    }
}

pub fn unet_weights(store: Option<&WeightStore>, in_channels: usize, channels: [usize; netshell::STAGES], seed: u64) -> Result<DualUNetWeights> {
    match store {
        Some(s) => Ok(DualUNetWeights::load(s, "unet")?),
        None => Ok(DualUNetWeights::seeded(in_channels, channels, seed)),
    }
}

/// Remesh losses and counters without timing, so reports are reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RemeshSummary {
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub final_losses: LossTerms,
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub stop: StopReason,
    pub verts_before: usize,
    pub verts_after: usize,
    pub faces_before: usize,
    pub faces_after: usize,
}

impl From<&RemeshReport> for RemeshSummary {
    fn from(r: &RemeshReport) -> Self {
        RemeshSummary {
            initial: r.initial,
            final_losses: r.final_losses,
            iterations: r.iterations.len(),
            accepted: r.accepted,
            rejected: r.rejected,
            stop: r.stop,
            verts_before: r.verts_before,
            verts_after: r.verts_after,
            faces_before: r.faces_before,
            faces_after: r.faces_after,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub remesh: RemeshSummary,
    pub coarse_geometry: Option<GeomReport>,
    pub geometry: Option<GeomReport>,
    pub image: ImageReport,
}

/// Remeshing views: explicit config views, else the configured rig.
pub fn remesh_views(cfg: &RemeshConfig, rig: Rig, extent: Option<f64>, set: &GaussianSet) -> Result<Vec<OrthoCamera>> {
    if !cfg.views.is_empty() {
        return Ok(cfg.views.clone());
    }
    let extent = match extent {
        Some(e) => e,
        None => {
            let (lo, hi) = gaussian_bounds(set, 0.0)?;
            lo.abs().max().max(hi.abs().max()) * 1.1
        }
    };
    Ok(make_camera_rig(rig, cfg.resolution, extent)?)
}

pub fn run_remesh(set: &GaussianSet, cfg: &RemeshConfig, views: Vec<OrthoCamera>) -> Result<(TriMesh, TriMesh, RemeshReport)> {
    let cfg = RemeshConfig { views, ..cfg.clone() };
    cfg.validate()?;
    let coarse = init_coarse_mesh(set, &cfg)?;
    let targets = gaussian_targets(set, &cfg.views, &cfg.render)?;
    let (refined, report) = refine_mesh(&coarse, &targets, &cfg)?;
    Ok((coarse, refined, report))
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, StageError> {
    let code = STAGES.iter().find(|s| s.0 == name).map_or(1, |s| s.1);
    f().map_err(|source| StageError { stage: name, code, source })
}

fn finish(key: &StageKey, dir: &Path, outputs: &[&str], start: Instant) -> Result<()> {
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    key.write_manifest(dir, outputs, wall_ms)?;
    info!("stage done stage={} status=ran wall_ms={wall_ms:.0}", key.stage);
    Ok(())
}

fn skipped(key: &StageKey) {
    info!("stage skipped (cached) stage={} key={}", key.stage, &key.digest()[..12]);
}

/// Runs encode, netshell, remesh and eval into `cfg.paths.out_dir`,
/// skipping stages whose manifest matches their inputs and parameters.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineRun, StageError> {
    let dir = cfg.paths.out_dir.clone();
    stage("encode", || std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())))?;
    let mut statuses = Vec::new();
    let seed = cfg.seed;

    let store = stage("netshell", || {
        cfg.paths
            .weights
            .as_deref()
            .map(|p| WeightStore::load(p).with_context(|| format!("loading weights {}", p.display())))
            .transpose()
    })?;
    let weights_hash = match &cfg.paths.weights {
        Some(p) => stage("netshell", || sha256_file(p))?,
        None => "seeded".to_string(),
    };

    // encode: geometry stack from the body mesh, texture features from a
    // front color render of the splat.
    let (body, splat) = stage("encode", || Ok((body_mesh(cfg.paths.mesh.as_deref())?, splat_input(cfg.paths.splat.as_deref())?)))?;
    let extent = cfg.cameras.extent.unwrap_or_else(|| mesh_extent(&body.value));
    let f = &cfg.fourier;
    let key = stage("encode", || {
        StageKey::new("encode", seed, (f, extent, cfg.netshell.tex_channels, cfg.netshell.seed))
            .map(|k| k.input("mesh", body.hash.clone()).input("splat", splat.hash.clone()).input("weights", weights_hash.clone()))
    })?;
    if key.is_cached(&dir) {
        skipped(&key);
        statuses.push(("encode", StageStatus::Cached));
    } else {
        stage("encode", || {
            let start = Instant::now();
            let (maps, cams) = encode_geometry(&body.value, f.q, f.m, f.size, extent, f.seed)?;
            Tensor::from_maps(&maps)?.save(&dir.join("stack.bin"))?;
            let image = render_gaussians(&splat.value, &cams[0], RenderMode::Color, &SoftRenderConfig::default())?.image;
            let tw = texture_weights(store.as_ref(), cfg.netshell.tex_channels, cfg.netshell.seed)?;
            encode_texture(&image, &cams[0], &tw)?.save_tensor(&dir.join("texfeat.bin"))?;
            finish(&key, &dir, &["stack.bin", "texfeat.bin"], start)
        })?;
        statuses.push(("encode", StageStatus::Ran));
    }

    // netshell: dual U-Net on the encoded features, decoded with the front view.
    let key = stage("netshell", || {
        Ok(StageKey::new("netshell", seed, (&cfg.netshell, extent, f.size))?
            .input("stack.bin", sha256_file(&dir.join("stack.bin"))?)
            .input("texfeat.bin", sha256_file(&dir.join("texfeat.bin"))?)
            .input("weights", weights_hash.clone()))
    })?;
    if key.is_cached(&dir) {
        skipped(&key);
        statuses.push(("netshell", StageStatus::Cached));
    } else {
        stage("netshell", || {
            let start = Instant::now();
            let geo = Tensor::load(&dir.join("stack.bin"))?.into_maps()?;
            let tex = FeatureMap::load_tensor(&dir.join("texfeat.bin"))?;
            let in_ch = geo.iter().map(FeatureMap::channels).sum::<usize>() + tex.channels();
            let w = unet_weights(store.as_ref(), in_ch, cfg.netshell.channels, cfg.netshell.seed)?;
            let cam = &make_camera_rig(Rig::Front3, f.size, extent)?[0];
            let pred = netshell::run(&geo, &tex, &w, cam, &cfg.netshell.decode)?;
            save_gaussians_ply(&pred.texture, &dir.join("pred_c.ply"))?;
            save_gaussians_ply(&pred.normal, &dir.join("pred_n.ply"))?;
            finish(&key, &dir, &["pred_c.ply", "pred_n.ply"], start)
        })?;
        statuses.push(("netshell", StageStatus::Ran));
    }

    // remesh: the input splat is the supervision source.
    let views = stage("remesh", || remesh_views(&cfg.remesh, cfg.cameras.rig, cfg.cameras.extent, &splat.value))?;
    let key = stage("remesh", || {
        Ok(StageKey::new("remesh", seed, (&cfg.remesh, &views))?.input("splat", splat.hash.clone()))
    })?;
    if key.is_cached(&dir) {
        skipped(&key);
        statuses.push(("remesh", StageStatus::Cached));
    } else {
        stage("remesh", || {
            let start = Instant::now();
            let (coarse, refined, report) = run_remesh(&splat.value, &cfg.remesh, views.clone())?;
            save_mesh(&coarse, &dir.join("coarse.obj"))?;
            save_mesh(&refined, &dir.join("refined.obj"))?;
            std::fs::write(dir.join("remesh.json"), report.to_json() + "\n")?;
            info!(
                "remesh losses initial={:.6} final={:.6} accepted={} rejected={}",
                report.initial.total, report.final_losses.total, report.accepted, report.rejected
            );
            finish(&key, &dir, &["coarse.obj", "refined.obj", "remesh.json"], start)
        })?;
        statuses.push(("remesh", StageStatus::Ran));
    }

    // eval: geometry against the ground truth, normal render agreement.
    let gt = stage("eval", || match &cfg.paths.gt_mesh {
        Some(p) => Ok(Some(body_mesh(Some(p))?)),
        None if splat.builtin => {
            let m = icosphere(5, 1.0);
            Ok(Some(Input {
                hash: sha256_hex(obj_string(&m).as_bytes()),
                value: m,
                builtin: true,
            }))
        }
        None => Ok(None),
    })?;
    let key = stage("eval", || {
        let mut k = StageKey::new("eval", seed, (&cfg.metrics, &views[0]))?
            .input("refined.obj", sha256_file(&dir.join("refined.obj"))?)
            .input("coarse.obj", sha256_file(&dir.join("coarse.obj"))?)
            .input("remesh.json", sha256_file(&dir.join("remesh.json"))?)
            .input("splat", splat.hash.clone());
        if let Some(g) = &gt {
            k = k.input("gt", g.hash.clone());
        }
        Ok(k)
    })?;
    if key.is_cached(&dir) {
        skipped(&key);
        statuses.push(("eval", StageStatus::Cached));
    } else {
        stage("eval", || {
            let start = Instant::now();
            let refined = load_mesh(&dir.join("refined.obj"))?;
            let coarse = load_mesh(&dir.join("coarse.obj"))?;
            let report: RemeshReport = serde_json::from_str(&std::fs::read_to_string(dir.join("remesh.json"))?)?;
            let opts = GeomOptions {
                samples: cfg.metrics.samples,
                tau: cfg.metrics.tau,
                seed: cfg.metrics.seed,
            };
            let (geometry, coarse_geometry) = match &gt {
                Some(g) => (
                    Some(evaluate_geometry(&refined, &g.value, &opts)?),
                    Some(evaluate_geometry(&coarse, &g.value, &opts)?),
                ),
                None => (None, None),
            };
            let render = &cfg.remesh.render;
            let mesh_img = render_mesh(&refined, &views[0], render)?.image;
            let splat_img = render_gaussians(&splat.value, &views[0], RenderMode::Normal, render)?.image;
            let out = PipelineReport {
                remesh: RemeshSummary::from(&report),
                coarse_geometry,
                geometry,
                image: evaluate_image(&mesh_img, &splat_img, "view0 normal")?,
            };
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out)? + "\n")?;
            if let Some(g) = &out.geometry {
                info!("geometry cd_p_to_s={:.6} cd_s_to_p={:.6} nc={:.4} fscore={:.4}", g.cd_p_to_s, g.cd_s_to_p, g.nc, g.fscore);
            }
            finish(&key, &dir, &["report.json"], start)
        })?;
        statuses.push(("eval", StageStatus::Ran));
    }
    Ok(PipelineRun { out_dir: dir, stages: statuses })
}
