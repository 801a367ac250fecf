//! Software renderers: Gaussian splats and soft-silhouette triangle meshes.

mod mesh;
mod splat;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

pub use mesh::{render_mesh, render_mesh_with_grads, MeshGrads, MeshRender, MeshTopology, PixelAssignment};
pub use splat::{render_gaussians, render_gaussians_with_stats, SplatStats};

/// What the color channels of a Gaussian carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Color,
    /// Colors hold `(n + 1) / 2` of a world-space normal; the output image
    /// holds the camera-space normal encoded the same way.
    Normal,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(RenderMode::Color),
            "normal" => Ok(RenderMode::Normal),
            other => Err(Error::invalid(format!("unknown render mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftRenderConfig {
    /// Silhouette softness in pixels: the soft mask is within 1e-4 of its
    /// hard value once a pixel is `4 * sigma_edge` from the silhouette.
    pub sigma_edge: f64,
    /// Splat contributions below this opacity are skipped.
    pub alpha_cutoff: f64,
    pub tile_size: usize,
    /// Renormalize composited normals where the splat alpha exceeds 0.05.
    pub renormalize_normals: bool,
}

impl Default for SoftRenderConfig {
    fn default() -> Self {
        SoftRenderConfig {
            sigma_edge: 1.0,
            alpha_cutoff: 1.0 / 255.0,
            tile_size: 16,
            renormalize_normals: true,
        }
    }
}

impl SoftRenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_edge > 0.0 && self.sigma_edge.is_finite()) {
            return Err(Error::invalid("sigma_edge must be positive"));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < 1.0) {
            return Err(Error::invalid("alpha_cutoff must lie in (0, 1)"));
        }
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-pixel depth; `f64::INFINITY` marks empty pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn empty(height: usize, width: usize) -> Self {
        DepthMap {
            height,
            width,
            data: vec![f64::INFINITY; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Finite range, if any pixel is set.
    pub fn range(&self) -> Option<(f64, f64)> {
        let finite = self.data.iter().copied().filter(|d| d.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (lo <= hi).then_some((lo, hi))
    }

    /// Normalized to `[0, 1]` over the finite range; empty pixels become 1.
    pub fn normalized(&self) -> FeatureMap {
        let (lo, hi) = self.range().unwrap_or((0.0, 1.0));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = self
            .data
            .iter()
            .map(|d| if d.is_finite() { (d - lo) / span } else { 1.0 })
            .collect();
        FeatureMap::from_vec(1, self.height, self.width, data).expect("finite by construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// 3 x H x W.
    pub image: FeatureMap,
    /// 1 x H x W in `[0, 1]`.
    pub alpha: FeatureMap,
    pub depth: DepthMap,
}

/// `1 / (1 + e^-x)` without overflow.
pub(crate) fn logistic(x: f64) -> f64 {
    crate::nn::sigmoid(x)
}

/// Logistic gain so that `logistic(gain * 4) = 1 - 1e-4`.
pub(crate) const EDGE_GAIN: f64 = 2.302_560_091_743_962_4; // ln(9999) / 4
