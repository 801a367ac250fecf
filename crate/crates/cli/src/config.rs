use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use splatrecon::camera::Rig;
use splatrecon::metrics::{DEFAULT_SAMPLES, DEFAULT_TAU};
use splatrecon::netshell::{DecodeSpec, DualUNetWeights, STAGES};
use splatrecon::remesh::RemeshConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub log_level: String,
    /// Overrides every stage seed when set.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub fourier: FourierSection,
    pub cameras: CameraSection,
    pub netshell: NetshellSection,
    pub remesh: RemeshConfig,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            log_level: "info".into(),
            seed: None,
            paths: Paths::default(),
            fourier: FourierSection::default(),
            cameras: CameraSection::default(),
            netshell: NetshellSection::default(),
            remesh: RemeshConfig {
                resolution: 64,
                ..RemeshConfig::default()
            },
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Body mesh (OBJ/PLY); the built-in sphere body when absent.
    pub mesh: Option<PathBuf>,
    /// Gaussian splat PLY; the built-in sphere fixture when absent.
    pub splat: Option<PathBuf>,
    /// Ground-truth mesh for geometry metrics.
    pub gt_mesh: Option<PathBuf>,
    /// Network weights (NSW1); seeded weights when absent.
    pub weights: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            mesh: None,
            splat: None,
            gt_mesh: None,
            weights: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierSection {
    pub q: usize,
    pub m: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for FourierSection {
    fn default() -> Self {
        FourierSection {
            q: 4,
            m: 20_000,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    /// Supervision rig for remeshing.
    pub rig: Rig,
    /// Half-width of the framed cube; derived from the inputs when absent.
    pub extent: Option<f64>,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            rig: Rig::Ring8,
            extent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetshellSection {
    pub channels: [usize; STAGES],
    pub tex_channels: usize,
    pub seed: u64,
    pub decode: DecodeSpec,
}

impl Default for NetshellSection {
    fn default() -> Self {
        NetshellSection {
            channels: DualUNetWeights::DEFAULT_CHANNELS,
            tex_channels: 8,
            seed: 0,
            decode: DecodeSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            tau: DEFAULT_TAU,
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fourier.size == 0 || self.fourier.size % (1 << STAGES) != 0 {
            anyhow::bail!("fourier.size {} must be a positive multiple of {}", self.fourier.size, 1 << STAGES);
        }
        if self.netshell.tex_channels == 0 || self.netshell.channels.contains(&0) {
            anyhow::bail!("netshell channel counts must be positive");
        }
        if self.metrics.samples == 0 || !(self.metrics.tau > 0.0) {
            anyhow::bail!("metrics.samples and metrics.tau must be positive");
        }
        if let Some(e) = self.cameras.extent {
            if !(e > 0.0 && e.is_finite()) {
                anyhow::bail!("cameras.extent must be positive");
            }
        }
        log_filter(&self.log_level)?;
        self.remesh.validate()?;
        self.netshell.decode.validate()?;
        Ok(())
    }

    /// Applies the global `--seed` and `--out` overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.fourier.seed = s;
            self.netshell.seed = s;
            self.metrics.seed = s;
        }
        if let Some(o) = out {
            self.paths.out_dir = o.to_path_buf();
        }
    }
}

pub fn log_filter(level: &str) -> Result<log::LevelFilter> {
    level
        .parse()
        .map_err(|_| anyhow::anyhow!("unknown log level `{level}` (error, warn, info, debug, trace, off)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses() {
        let text = include_str!("../pipeline.example.toml");
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.remesh.resolution, 64);
        assert_eq!(cfg.cameras.rig, Rig::Ring8);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_toml("[remesh]\nitrations = 5\n").unwrap_err();
        assert!(format!("{err:#}").contains("itrations"), "{err:#}");
        let err = PipelineConfig::from_toml("colour = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("colour"));
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }
}
