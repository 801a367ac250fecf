//! Orthographic cameras.
//!
//! World to camera is `p_cam = R p_world + t`. The camera looks down its
//! local `-z`, so depth is `-p_cam.z`. Image rows grow downward: camera `+y`
//! maps to row 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub half_width: f64,
    pub half_height: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl OrthoCamera {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        half_width: f64,
        half_height: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = OrthoCamera {
            rotation,
            translation,
            half_width,
            half_height,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking along `forward` with the given `up` hint.
    pub fn looking(
        eye: Vec3,
        forward: Vec3,
        up: Vec3,
        half_extent: f64,
        size: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let back = -forward.try_normalize(1e-12).ok_or_else(|| Error::invalid("zero view direction"))?;
        let right = up
            .cross(&back)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector parallel to view direction"))?;
        let true_up = back.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), true_up.transpose(), back.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation, half_extent, half_extent, size, size, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera has non-finite pose"));
        }
        if (r * r.transpose() - Mat3::identity()).amax() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        if !(self.far > self.near) {
            return Err(Error::invalid(format!("far {} must exceed near {}", self.far, self.near)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        if !(self.half_width > 0.0 && self.half_height > 0.0) {
            return Err(Error::invalid("half extents must be positive"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_resolution(&self, other: &OrthoCamera) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Viewing direction in world space.
    pub fn view_direction(&self) -> Vec3 {
        self.rotation.transpose() * Vec3::new(0.0, 0.0, -1.0)
    }

    /// Pixels per scene unit along image x and y.
    pub fn pixel_scale(&self) -> (f64, f64) {
        (
            self.width as f64 / (2.0 * self.half_width),
            self.height as f64 / (2.0 * self.half_height),
        )
    }

    /// Continuous image coordinates `(u, v)` of a camera-space point; pixel
    /// `(row, col)` has its center at `(col + 0.5, row + 0.5)`.
    pub fn cam_to_image(&self, pc: &Vec3) -> (f64, f64) {
        let u = (pc.x / self.half_width + 1.0) * 0.5 * self.width as f64;
        let v = (1.0 - pc.y / self.half_height) * 0.5 * self.height as f64;
        (u, v)
    }

    /// World point -> `(u, v, depth)`.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let pc = self.to_camera(p);
        let (u, v) = self.cam_to_image(&pc);
        (u, v, -pc.z)
    }

    /// Jacobian rows of `(u, v)` with respect to the world point.
    pub fn image_jacobian(&self) -> (Vec3, Vec3) {
        let (sx, sy) = self.pixel_scale();
        let r0 = Vec3::new(self.rotation[(0, 0)], self.rotation[(0, 1)], self.rotation[(0, 2)]);
        let r1 = Vec3::new(self.rotation[(1, 0)], self.rotation[(1, 1)], self.rotation[(1, 2)]);
        (r0 * sx, r1 * (-sy))
    }

    /// Camera-space `(x, y)` of a pixel center.
    pub fn pixel_center_cam(&self, row: usize, col: usize) -> (f64, f64) {
        let x = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * self.half_width;
        let y = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * self.half_height;
        (x, y)
    }

    /// World-space ray origin of a pixel on the camera plane (depth 0).
    pub fn pixel_ray_origin(&self, row: usize, col: usize) -> Vec3 {
        let (x, y) = self.pixel_center_cam(row, col);
        self.rotation.transpose() * (Vec3::new(x, y, 0.0) - self.translation)
    }

    /// Nearest pixel `(row, col)` for a camera-space point, if on screen.
    pub fn nearest_pixel(&self, pc: &Vec3) -> Option<(usize, usize)> {
        let (u, v) = self.cam_to_image(pc);
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        (col < self.width && row < self.height).then_some((row, col))
    }

    /// The same camera rendering at another resolution.
    pub fn with_size(&self, width: usize, height: usize) -> Result<Self> {
        let mut c = self.clone();
        c.width = width;
        c.height = height;
        c.validate()?;
        Ok(c)
    }

    /// Camera after rotating the whole scene by `rot` about the origin.
    pub fn rotated_with_scene(&self, rot: &Mat3) -> OrthoCamera {
        OrthoCamera {
            rotation: self.rotation * rot.transpose(),
            ..self.clone()
        }
    }
}

/// Named camera rigs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rig {
    /// Front (-z), left (-x) and top (-y) axis-aligned views.
    Front3,
    /// Eight views at 45 degree azimuth steps, elevation 0.
    Ring8,
}

impl std::str::FromStr for Rig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front3" => Ok(Rig::Front3),
            "ring8" => Ok(Rig::Ring8),
            other => Err(Error::invalid(format!("unknown camera rig `{other}` (expected front3 or ring8)"))),
        }
    }
}

/// Builds the cameras of a rig framing the cube `[-extent, extent]^3`.
pub fn make_camera_rig(rig: Rig, size: usize, extent: f64) -> Result<Vec<OrthoCamera>> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::invalid(format!("rig extent must be positive, got {extent}")));
    }
    if size == 0 {
        return Err(Error::invalid("rig image size must be at least 1"));
    }
    let dist = 3.0 * extent;
    let (near, far) = (0.0, 6.0 * extent);
    let y_up = Vec3::new(0.0, 1.0, 0.0);
    let views: Vec<(Vec3, Vec3)> = match rig {
        Rig::Front3 => vec![
            (Vec3::new(0.0, 0.0, -1.0), y_up),
            (Vec3::new(-1.0, 0.0, 0.0), y_up),
            (Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 0.0, -1.0)),
        ],
        Rig::Ring8 => (0..8)
            .map(|k| {
                let theta = k as f64 * std::f64::consts::FRAC_PI_4;
                (Vec3::new(-theta.sin(), 0.0, -theta.cos()), y_up)
            })
            .collect(),
    };
    views
        .into_iter()
        .map(|(dir, up)| OrthoCamera::looking(-dir * dist, dir, up, extent, size, near, far))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring8_directions_cancel() {
        let cams = make_camera_rig(Rig::Ring8, 16, 1.0).unwrap();
        assert_eq!(cams.len(), 8);
        let sum: Vec3 = cams.iter().map(|c| c.view_direction()).sum();
        assert!(sum.norm() < 1e-12, "{sum:?}");
    }

    #[test]
    fn front3_is_orthogonal() {
        let cams = make_camera_rig(Rig::Front3, 16, 1.0).unwrap();
        let d: Vec<Vec3> = cams.iter().map(|c| c.view_direction()).collect();
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(d[i].dot(&d[j]).abs() < 1e-12);
            }
        }
        assert!((d[0] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((d[1] - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((d[2] - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(make_camera_rig(Rig::Ring8, 16, 0.0).is_err());
    }

    #[test]
    fn unknown_rig_rejected() {
        assert!("ring9".parse::<Rig>().is_err());
        assert_eq!("front3".parse::<Rig>().unwrap(), Rig::Front3);
    }

    #[test]
    fn center_projects_to_middle() {
        let cam = &make_camera_rig(Rig::Front3, 3, 1.0).unwrap()[0];
        let pc = cam.to_camera(&Vec3::zeros());
        assert_eq!(cam.nearest_pixel(&pc), Some((1, 1)));
        assert!((-pc.z - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_origin_projects_back_to_pixel_center() {
        let cam = &make_camera_rig(Rig::Ring8, 8, 1.3).unwrap()[3];
        let o = cam.pixel_ray_origin(2, 5);
        let (u, v, d) = cam.project(&o);
        assert!((u - 5.5).abs() < 1e-12 && (v - 2.5).abs() < 1e-12 && d.abs() < 1e-12);
    }

    #[test]
    fn invalid_camera_rejected() {
        let bad = OrthoCamera::new(Mat3::identity() * 2.0, Vec3::zeros(), 1.0, 1.0, 4, 4, 0.0, 1.0);
        assert!(bad.is_err());
        let bad = OrthoCamera::new(Mat3::identity(), Vec3::zeros(), 1.0, 1.0, 4, 4, 1.0, 1.0);
        assert!(bad.is_err());
    }
}
