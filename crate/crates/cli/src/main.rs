mod cache;
mod config;
mod logging;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use splatrecon::camera::{make_camera_rig, OrthoCamera, Rig};
use splatrecon::io::{load_gaussians_ply, load_mesh, save_gaussians_ply, save_mesh};
use splatrecon::metrics::{evaluate_geometry, evaluate_image, GeomOptions, DEFAULT_SAMPLES, DEFAULT_TAU};
use splatrecon::netshell::{self, DecodeSpec, DualUNetWeights, TextureEncoderWeights, WeightStore};
use splatrecon::raster::{render_gaussians, render_mesh, RenderMode, SoftRenderConfig};
use splatrecon::remesh::RemeshConfig;
use splatrecon::shapes::{icosphere, sphere_fixture};
use splatrecon::{FeatureMap, Tensor};

use config::PipelineConfig;
use pipeline::{StageError, StageStatus};

#[derive(Parser, Debug)]
#[command(name = "splatrecon", version, about = "Gaussian-splat human reconstruction toolkit")]
struct Cli {
    /// Pipeline config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every stochastic step
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fourier geometry stack (and optionally texture features) for a body mesh
    Encode(EncodeArgs),
    /// Render a splat or mesh from a camera rig to PNG and tensor files
    Render(RenderArgs),
    /// Run the dual U-Net on encoded features and decode both branches
    Run(RunArgs),
    /// Network skeleton utilities
    Netshell {
        #[command(subcommand)]
        command: NetshellCommand,
    },
    /// Extract and refine a mesh from a Gaussian splat
    Remesh(RemeshArgs),
    /// Geometry or image metrics
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Full encode -> netshell -> remesh -> eval pipeline
    Pipeline,
    /// Write the built-in sphere fixtures
    Fixture,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Splat whose front color render feeds the texture encoder
    #[arg(long)]
    splat: Option<PathBuf>,
    /// Weights holding `tex.*` entries; seeded when absent
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    q: usize,
    #[arg(long, default_value_t = 20_000)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Half-width of the framed cube (default: 1.25 x mesh bound)
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 8)]
    tex_channels: usize,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long, conflicts_with = "mesh", required_unless_present = "mesh")]
    splat: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value = "ring8")]
    rig: Rig,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 1.25)]
    extent: f64,
    /// color or normal (splats only; meshes always render normals)
    #[arg(long, default_value = "color")]
    mode: RenderMode,
    #[arg(long, default_value_t = 1.0)]
    sigma_edge: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Geometry stack tensor (views x channels x H x W)
    #[arg(long)]
    geo: PathBuf,
    /// Texture feature tensor (channels x H x W)
    #[arg(long)]
    tex: PathBuf,
    /// NSW1 weight manifest; seeded weights when absent
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output pattern; `{c,n}` is replaced by `c` and `n`
    #[arg(long, default_value = "pred_{c,n}.ply")]
    out_splats: String,
    /// Half-width of the decoding camera's view
    #[arg(long, default_value_t = 1.25)]
    extent: f64,
}

#[derive(Subcommand, Debug)]
enum NetshellCommand {
    Run(RunArgs),
    /// Write seeded weights for given input widths
    Init {
        /// Total geometry channels of the stack
        #[arg(long)]
        geo_channels: usize,
        #[arg(long, default_value_t = 8)]
        tex_channels: usize,
        #[arg(long, default_value = "weights.nsw")]
        file: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RemeshArgs {
    #[arg(long)]
    splat: PathBuf,
    /// Rig name (ring8, front3) or a JSON file with a camera list
    #[arg(long, default_value = "ring8")]
    views: String,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    iters: Option<usize>,
    /// Refined mesh path (OBJ or PLY)
    #[arg(long = "mesh-out", default_value = "refined.obj")]
    mesh_out: PathBuf,
    #[arg(long, default_value = "remesh_report.json")]
    report: PathBuf,
    /// Half-width of the rig (default: 1.1 x splat bound)
    #[arg(long)]
    extent: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    Geometry {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    Image {
        /// PNG or tensor file
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn load_store(path: Option<&Path>) -> Result<Option<WeightStore>> {
    path.map(|p| WeightStore::load(p).with_context(|| format!("loading weights {}", p.display())))
        .transpose()
}

fn load_image(path: &Path) -> Result<FeatureMap> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let map = if ext == "png" {
        FeatureMap::load_png(path)?
    } else {
        FeatureMap::load_tensor(path)?
    };
    Ok(map)
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_encode(cli: &Cli, a: &EncodeArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let mesh = load_mesh(&a.mesh).with_context(|| format!("loading {}", a.mesh.display()))?;
    let extent = a
        .extent
        .unwrap_or_else(|| mesh.vertices.iter().map(|v| v.amax()).fold(0.0, f64::max) * 1.25);
    let (maps, cams) = pipeline::encode_geometry(&mesh, a.q, a.m, a.size, extent, seed)?;
    Tensor::from_maps(&maps)?.save(&dir.join("stack.bin"))?;
    info!("wrote stack path={} views=3 channels={} size={}", dir.join("stack.bin").display(), maps[0].channels(), a.size);
    if let Some(splat) = &a.splat {
        let set = load_gaussians_ply(splat)?;
        let image = render_gaussians(&set, &cams[0], RenderMode::Color, &SoftRenderConfig::default())?.image;
        let store = load_store(a.weights.as_deref())?;
        let tw = pipeline::texture_weights(store.as_ref(), a.tex_channels, seed)?;
        pipeline::encode_texture(&image, &cams[0], &tw)?.save_tensor(&dir.join("texfeat.bin"))?;
        info!("wrote texture features path={}", dir.join("texfeat.bin").display());
    }
    Ok(())
}

fn cmd_render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let cams = make_camera_rig(a.rig, a.size, a.extent)?;
    let cfg = SoftRenderConfig {
        sigma_edge: a.sigma_edge,
        ..SoftRenderConfig::default()
    };
    cfg.validate()?;
    let splat = a.splat.as_deref().map(load_gaussians_ply).transpose()?;
    let mesh = a.mesh.as_deref().map(load_mesh).transpose()?;
    for (k, cam) in cams.iter().enumerate() {
        let out = match (&splat, &mesh) {
            (Some(s), _) => render_gaussians(s, cam, a.mode, &cfg)?,
            (None, Some(m)) => render_mesh(m, cam, &cfg)?,
            (None, None) => bail!("pass --splat or --mesh"),
        };
        out.image.save_rgb_png(&dir.join(format!("view_{k}.png")))?;
        out.image.save_tensor(&dir.join(format!("view_{k}.srtn")))?;
        out.alpha.save_channel_png(0, &dir.join(format!("alpha_{k}.png")))?;
    }
    info!("rendered views={} dir={}", cams.len(), dir.display());
    Ok(())
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let geo = Tensor::load(&a.geo)?.into_maps()?;
    let tex = FeatureMap::load_tensor(&a.tex)?;
    let store = load_store(a.weights.as_deref())?;
    let in_ch = geo.iter().map(FeatureMap::channels).sum::<usize>() + tex.channels();
    let w = pipeline::unet_weights(store.as_ref(), in_ch, DualUNetWeights::DEFAULT_CHANNELS, seed)?;
    let cam = &make_camera_rig(Rig::Front3, tex.width(), a.extent)?[0];
    let cam = cam.with_size(tex.width(), tex.height())?;
    let pred = netshell::run(&geo, &tex, &w, &cam, &DecodeSpec::default())?;
    if !a.out_splats.contains("{c,n}") {
        bail!("--out-splats must contain the placeholder {{c,n}}");
    }
    for (tag, set) in [("c", &pred.texture), ("n", &pred.normal)] {
        let path = resolve(&dir, Path::new(&a.out_splats.replace("{c,n}", tag)));
        save_gaussians_ply(set, &path)?;
        info!("wrote splat branch={tag} gaussians={} path={}", set.len(), path.display());
    }
    Ok(())
}

fn cmd_remesh(cli: &Cli, a: &RemeshArgs) -> Result<()> {
    let dir = out_dir(cli)?;
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?.remesh,
        None => RemeshConfig::default(),
    };
    let cfg = RemeshConfig {
        resolution: a.res,
        iterations: a.iters.unwrap_or(base.iterations),
        ..base
    };
    let set = load_gaussians_ply(&a.splat)?;
    let views: Vec<OrthoCamera> = match a.views.parse::<Rig>() {
        Ok(rig) => pipeline::remesh_views(&RemeshConfig { views: vec![], ..cfg.clone() }, rig, a.extent, &set)?,
        Err(_) => {
            let text = std::fs::read_to_string(&a.views).with_context(|| format!("`{}` is neither a rig nor a camera file", a.views))?;
            serde_json::from_str(&text).context("parsing camera list")?
        }
    };
    let (_, refined, report) = pipeline::run_remesh(&set, &cfg, views)?;
    let mesh_path = resolve(&dir, &a.mesh_out);
    save_mesh(&refined, &mesh_path)?;
    std::fs::write(resolve(&dir, &a.report), report.to_json() + "\n")?;
    info!(
        "remesh done initial={:.6} final={:.6} accepted={} rejected={} wall_ms={:.0} path={}",
        report.initial.total,
        report.final_losses.total,
        report.accepted,
        report.rejected,
        report.wall_ms,
        mesh_path.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Geometry { pred, gt, tau, samples, report } => {
            let opts = GeomOptions {
                samples: *samples,
                tau: *tau,
                seed: cli.seed.unwrap_or(0),
            };
            let r = evaluate_geometry(&load_mesh(pred)?, &load_mesh(gt)?, &opts)?;
            write_json(&r, report.as_deref())
        }
        EvalCommand::Image { pred, gt, report } => {
            let r = evaluate_image(&load_image(pred)?, &load_image(gt)?, &pred.display().to_string())?;
            write_json(&r, report.as_deref())
        }
    }
}

fn cmd_netshell_init(cli: &Cli, geo_channels: usize, tex_channels: usize, file: &Path) -> Result<()> {
    let dir = out_dir(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let mut store = WeightStore::new();
    TextureEncoderWeights::seeded(tex_channels, seed).save(&mut store, "tex")?;
    DualUNetWeights::seeded(geo_channels + tex_channels, DualUNetWeights::DEFAULT_CHANNELS, seed).save(&mut store, "unet")?;
    let path = resolve(&dir, file);
    store.save(&path)?;
    info!("wrote weights entries={} path={}", store.len(), path.display());
    Ok(())
}

fn cmd_fixture(cli: &Cli) -> Result<()> {
    let dir = out_dir(cli)?;
    save_gaussians_ply(&sphere_fixture(), &dir.join("sphere.ply"))?;
    save_mesh(&icosphere(3, 1.0), &dir.join("body.obj"))?;
    save_mesh(&icosphere(5, 1.0), &dir.join("gt_sphere.obj"))?;
    info!("wrote fixtures dir={}", dir.display());
    Ok(())
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(cli.seed, cli.out.as_deref());
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(log::LevelFilter::Info);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    if let Command::Pipeline = cli.command {
        let cfg = match pipeline_config(&cli) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        };
        logging::set_level(config::log_filter(&cfg.log_level).unwrap_or(log::LevelFilter::Info));
        return match pipeline::run_pipeline(&cfg) {
            Ok(run) => {
                for (name, status) in &run.stages {
                    let s = match status {
                        StageStatus::Ran => "ran",
                        StageStatus::Cached => "skipped (cached)",
                    };
                    println!("{name}: {s}");
                }
                info!("pipeline done dir={}", run.out_dir.display());
                ExitCode::SUCCESS
            }
            Err(StageError { stage, code, source }) => {
                eprintln!("error: stage {stage} failed: {source:#}");
                ExitCode::from(code as u8)
            }
        };
    }
    let result = match &cli.command {
        Command::Encode(a) => cmd_encode(&cli, a),
        Command::Render(a) => cmd_render(&cli, a),
        Command::Run(a) | Command::Netshell { command: NetshellCommand::Run(a) } => cmd_run(&cli, a),
        Command::Netshell {
            command: NetshellCommand::Init {
                geo_channels,
                tex_channels,
                file,
            },
        } => cmd_netshell_init(&cli, *geo_channels, *tex_channels, file),
        Command::Remesh(a) => cmd_remesh(&cli, a),
        Command::Eval { command } => cmd_eval(&cli, command),
        Command::Fixture => cmd_fixture(&cli),
        Command::Pipeline => unreachable!(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
