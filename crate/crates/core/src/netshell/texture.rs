use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::nn::{sigmoid, Conv2d};

use super::weights::WeightStore;

/// 3x3 conv over image + Plücker channels followed by a 1-channel sigmoid
/// spatial gate computed from the conv output.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureEncoderWeights {
    pub conv: Conv2d,
    pub gate: Conv2d,
}

impl TextureEncoderWeights {
    pub const IN_CHANNELS: usize = 9;

    pub fn seeded(out_channels: usize, seed: u64) -> Self {
        TextureEncoderWeights {
            conv: Conv2d::seeded(out_channels, Self::IN_CHANNELS, 3, seed),
            gate: Conv2d::seeded(1, out_channels, 3, seed + 1),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    fn validate(&self) -> Result<()> {
        let c = &self.conv;
        if c.in_channels != Self::IN_CHANNELS || c.kernel != 3 {
            return Err(Error::shape(format!(
                "texture conv must be o x 9 x 3 x 3, got {}x{}x{}",
                c.out_channels, c.in_channels, c.kernel
            )));
        }
        if self.gate.out_channels != 1 || self.gate.in_channels != c.out_channels {
            return Err(Error::shape("texture gate must map the conv output to one channel"));
        }
        Ok(())
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        store.put_conv(&format!("{prefix}.conv"), &self.conv)?;
        store.put_conv(&format!("{prefix}.gate"), &self.gate)
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let w = TextureEncoderWeights {
            conv: store.conv(&format!("{prefix}.conv"))?,
            gate: store.conv(&format!("{prefix}.gate"))?,
        };
        w.validate()?;
        Ok(w)
    }
}

/// Conv output before the gate is applied.
pub fn texture_preactivation(image: &FeatureMap, plucker: &FeatureMap, w: &TextureEncoderWeights) -> Result<FeatureMap> {
    w.validate()?;
    if image.channels() != 3 || plucker.channels() != 6 {
        return Err(Error::shape(format!(
            "expected 3 image and 6 Plücker channels, got {} and {}",
            image.channels(),
            plucker.channels()
        )));
    }
    let input = FeatureMap::concat(&[image, plucker])?;
    w.conv.forward(&input)
}

pub fn texture_encode(image: &FeatureMap, plucker: &FeatureMap, w: &TextureEncoderWeights) -> Result<FeatureMap> {
    let mut feat = texture_preactivation(image, plucker, w)?;
    let gate = w.gate.forward(&feat)?;
    let plane = feat.plane();
    let g: Vec<f64> = gate.data().iter().map(|&v| sigmoid(v)).collect();
    for chunk in feat.data_mut().chunks_mut(plane) {
        chunk.iter_mut().zip(&g).for_each(|(v, s)| *v *= s);
    }
    Ok(feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_camera_rig, Rig};
    use crate::fourier::plucker_map;

    fn inputs(seed: u64) -> (FeatureMap, FeatureMap) {
        let cam = &make_camera_rig(Rig::Front3, 12, 1.0).unwrap()[0];
        let mut img = FeatureMap::zeros(3, 12, 12);
        let m = crate::nn::Matrix::seeded(1, 3 * 144, seed);
        img.data_mut().copy_from_slice(&m.data);
        (img, plucker_map(cam))
    }

    #[test]
    fn gate_bias_extremes() {
        let (img, pl) = inputs(1);
        let mut w = TextureEncoderWeights::seeded(5, 3);
        let pre = texture_preactivation(&img, &pl, &w).unwrap();
        w.gate.bias[0] = 60.0;
        let open = texture_encode(&img, &pl, &w).unwrap();
        assert!(open.max_abs_diff(&pre) < 1e-12);
        w.gate.bias[0] = -60.0;
        let shut = texture_encode(&img, &pl, &w).unwrap();
        assert!(shut.data().iter().all(|v| v.abs() < 1e-20));
        assert_eq!(shut.shape(), (5, 12, 12));
    }

    #[test]
    fn preactivation_is_affine() {
        let (a, pl) = inputs(1);
        let (b, _) = inputs(2);
        let mut w = TextureEncoderWeights::seeded(4, 9);
        w.conv.bias.iter_mut().for_each(|v| *v = 0.0);
        let zero = FeatureMap::zeros(6, 12, 12);
        let fa = texture_preactivation(&a, &pl, &w).unwrap();
        let fb = texture_preactivation(&b, &zero, &w).unwrap();
        let sum = texture_preactivation(&a.add(&b).unwrap(), &pl, &w).unwrap();
        assert!(sum.max_abs_diff(&fa.add(&fb).unwrap()) < 1e-12);
    }

    #[test]
    fn wrong_channels_rejected() {
        let (img, _) = inputs(1);
        let w = TextureEncoderWeights::seeded(4, 0);
        assert!(texture_encode(&img, &FeatureMap::zeros(5, 12, 12), &w).is_err());
    }
}
