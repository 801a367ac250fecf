//! Weight-loadable skeletons of the learned components: texture encoder,
//! region attention block, dual reconstruction U-Net and the decoding of its
//! output maps into Gaussians.

mod attention;
mod crop;
mod decode;
mod texture;
mod unet;
mod weights;

pub use attention::{attention, attention_with_scores, rsem_block, softmax_rows, AttnWeights, Mlp, RsemWeights};
pub use crop::{crop_regions, extract_window, mask_bounds, resize_bilinear, square_window, Crops};
pub use decode::{decode_gaussian_map, DecodeSpec};
pub use texture::{texture_encode, texture_preactivation, TextureEncoderWeights};
pub use unet::{dual_unet_forward, BranchWeights, DualUNetOutput, DualUNetWeights, STAGES};
pub use weights::{WeightEntry, WeightStore};

use crate::camera::OrthoCamera;
use crate::error::Result;
use crate::feature::FeatureMap;
use crate::gaussian::GaussianSet;

/// Texture-branch and normal-branch Gaussians.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub texture: GaussianSet,
    pub normal: GaussianSet,
}

/// Concatenates the geometry maps channel-wise, runs the dual U-Net and
/// decodes both output maps with `camera`.
pub fn run(
    geometry: &[FeatureMap],
    texture: &FeatureMap,
    weights: &DualUNetWeights,
    camera: &OrthoCamera,
    spec: &DecodeSpec,
) -> Result<Prediction> {
    let refs: Vec<&FeatureMap> = geometry.iter().collect();
    let geo = FeatureMap::concat(&refs)?;
    let out = dual_unet_forward(&geo, texture, weights)?;
    Ok(Prediction {
        texture: decode_gaussian_map(&out.texture, camera, spec)?,
        normal: decode_gaussian_map(&out.normal, camera, spec)?,
    })
}
