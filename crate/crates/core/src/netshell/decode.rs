use serde::{Deserialize, Serialize};

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::{normalize_quat, Gaussian, GaussianSet, Vec3, GAUSSIAN_ATTRIBUTES};
use crate::nn::{sigmoid, softplus};

/// Pixel-aligned decoding of a 14-channel map:
///
/// | channels | attribute | activation |
/// |---|---|---|
/// | 0-1 | offset along camera x / y | `offset_scale * tanh` |
/// | 2 | depth along the view ray | `default_depth + depth_range * tanh` |
/// | 3-5 | scale | `scale_unit * softplus`, floored at `min_scale` |
/// | 6-9 | rotation (w, x, y, z) | `normalize(1 + c6, c7, c8, c9)` |
/// | 10 | opacity | sigmoid |
/// | 11-13 | color | sigmoid |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSpec {
    pub default_depth: f64,
    pub depth_range: f64,
    pub offset_scale: f64,
    pub scale_unit: f64,
    pub min_scale: f64,
    pub opacity_floor: f64,
}

impl Default for DecodeSpec {
    fn default() -> Self {
        DecodeSpec {
            default_depth: 3.0,
            depth_range: 1.0,
            offset_scale: 0.01,
            scale_unit: 1.0,
            min_scale: 1e-6,
            opacity_floor: 0.01,
        }
    }
}

impl DecodeSpec {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.default_depth,
            self.depth_range,
            self.offset_scale,
            self.scale_unit,
            self.min_scale,
            self.opacity_floor,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("decode spec values must be finite"));
        }
        if self.scale_unit <= 0.0 || self.min_scale <= 0.0 {
            return Err(Error::invalid("scale_unit and min_scale must be positive"));
        }
        if self.depth_range < 0.0 || self.offset_scale < 0.0 {
            return Err(Error::invalid("depth_range and offset_scale must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.opacity_floor) {
            return Err(Error::invalid("opacity_floor must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One Gaussian per pixel whose opacity reaches the floor, in row-major
/// pixel order.
pub fn decode_gaussian_map(map: &FeatureMap, camera: &OrthoCamera, spec: &DecodeSpec) -> Result<GaussianSet> {
    spec.validate()?;
    let (c, h, w) = map.shape();
    if c != GAUSSIAN_ATTRIBUTES {
        return Err(Error::shape(format!("gaussian map needs {GAUSSIAN_ATTRIBUTES} channels, got {c}")));
    }
    if h != camera.height || w != camera.width {
        return Err(Error::shape(format!(
            "map is {h}x{w} but the camera renders {}x{}",
            camera.height, camera.width
        )));
    }
    if let Some(i) = map.data().iter().position(|v| !v.is_finite()) {
        let plane = map.plane();
        return Err(Error::Validation {
            index: i % plane,
            msg: format!("non-finite value in channel {}", i / plane),
        });
    }
    let rt = camera.rotation.transpose();
    let (right, up) = (rt * Vec3::x(), rt * Vec3::y());
    let dir = camera.view_direction();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let ch = |k: usize| map.get(k, y, x);
            let opacity = sigmoid(ch(10));
            if opacity < spec.opacity_floor || opacity <= 0.0 {
                continue;
            }
            let depth = spec.default_depth + spec.depth_range * ch(2).tanh();
            let center = camera.pixel_ray_origin(y, x)
                + dir * depth
                + right * (spec.offset_scale * ch(0).tanh())
                + up * (spec.offset_scale * ch(1).tanh());
            let scale = Vec3::new(ch(3), ch(4), ch(5)).map(|v| (spec.scale_unit * softplus(v)).max(spec.min_scale));
            let rotation = normalize_quat([1.0 + ch(6), ch(7), ch(8), ch(9)]).unwrap_or([1.0, 0.0, 0.0, 0.0]);
            let color = Vec3::new(sigmoid(ch(11)), sigmoid(ch(12)), sigmoid(ch(13)));
            let g = Gaussian {
                center,
                scale,
                rotation,
                opacity,
                color,
            };
            g.validate(y * w + x)?;
            out.push(g);
        }
    }
    Ok(GaussianSet::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_camera_rig, Rig};
    use proptest::prelude::*;

    fn cam(n: usize) -> OrthoCamera {
        make_camera_rig(Rig::Ring8, n, 1.0).unwrap().swap_remove(1)
    }

    #[test]
    fn zero_map_identities() {
        let c = cam(4);
        let set = decode_gaussian_map(&FeatureMap::zeros(14, 4, 4), &c, &DecodeSpec::default()).unwrap();
        assert_eq!(set.len(), 16);
        for (i, g) in set.gaussians.iter().enumerate() {
            let o = c.pixel_ray_origin(i / 4, i % 4);
            assert!((g.center - (o + c.view_direction() * 3.0)).norm() < 1e-12);
            assert_eq!(g.opacity, 0.5);
            assert!((g.scale.x - 2f64.ln()).abs() < 1e-15);
            assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
            let (_, _, d) = c.project(&g.center);
            assert!((d - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_opacity_dropped() {
        let mut m = FeatureMap::zeros(14, 3, 3);
        m.set(10, 1, 2, -20.0);
        let set = decode_gaussian_map(&m, &cam(3), &DecodeSpec::default()).unwrap();
        assert_eq!(set.len(), 8);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = FeatureMap::zeros(14, 3, 3);
        m.set(4, 2, 1, f64::NAN);
        let err = decode_gaussian_map(&m, &cam(3), &DecodeSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Validation { index: 7, .. }));
    }

    proptest! {
        #[test]
        fn random_maps_decode_valid(vals in proptest::collection::vec(-60.0f64..60.0, 14 * 9)) {
            let m = FeatureMap::from_vec(14, 3, 3, vals).unwrap();
            let set = decode_gaussian_map(&m, &cam(3), &DecodeSpec::default()).unwrap();
            prop_assert!(set.validate().is_ok());
        }
    }
}
