//! 3D Gaussian primitives.
//!
//! Scales and opacity are kept in linear (activated) space. The log/logit
//! encodings used by splat files only exist at the PLY boundary.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of scalar attributes per Gaussian: center(3) + scale(3) +
/// rotation(4) + opacity(1) + color(3).
pub const GAUSSIAN_ATTRIBUTES: usize = 14;

const QUAT_TOL: f64 = 1e-6;

/// Unit quaternion in (w, x, y, z) order.
pub type Quat = [f64; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vec3,
    pub scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
    /// RGB in color mode, `(n + 1) / 2` in normal mode.
    pub color: Vec3,
}

impl Gaussian {
    /// Builds a Gaussian, normalizing the quaternion and validating the rest.
    pub fn new(center: Vec3, scale: Vec3, rotation: Quat, opacity: f64, color: Vec3) -> Result<Self> {
        let mut g = Gaussian {
            center,
            scale,
            rotation,
            opacity,
            color,
        };
        g.rotation = normalize_quat(rotation)
            .ok_or_else(|| Error::invalid("rotation quaternion has zero norm"))?;
        g.validate(0)?;
        Ok(g)
    }

    pub fn isotropic(center: Vec3, sigma: f64, opacity: f64, color: Vec3) -> Result<Self> {
        Self::new(center, Vec3::repeat(sigma), [1.0, 0.0, 0.0, 0.0], opacity, color)
    }

    /// Checks every invariant; `index` is reported in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation { index, msg });
        let all = self
            .center
            .iter()
            .chain(self.scale.iter())
            .chain(self.rotation.iter())
            .chain(std::iter::once(&self.opacity))
            .chain(self.color.iter());
        for v in all {
            if !v.is_finite() {
                return fail("non-finite attribute (NaN or inf)".into());
            }
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return fail(format!("scale must be strictly positive, got {:?}", self.scale.as_slice()));
        }
        let n = quat_norm(self.rotation);
        if (n - 1.0).abs() > QUAT_TOL {
            return fail(format!("rotation quaternion norm {n} is not 1"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return fail(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail(format!("color {:?} outside [0, 1]", self.color.as_slice()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_mat_unchecked(self.rotation)
    }

    /// `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s2 = Mat3::from_diagonal(&self.scale.component_mul(&self.scale));
        let mut cov = r * s2 * r.transpose();
        // exact symmetry
        for i in 0..3 {
            for j in (i + 1)..3 {
                let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = m;
                cov[(j, i)] = m;
            }
        }
        cov
    }

    /// Applies a rigid rotation about the origin.
    pub fn rotated(&self, rot: &Mat3) -> Result<Gaussian> {
        let qr = rotmat_to_quaternion(rot)?;
        Ok(Gaussian {
            center: rot * self.center,
            rotation: normalize_quat(quat_mul(qr, self.rotation)).unwrap_or([1.0, 0.0, 0.0, 0.0]),
            ..self.clone()
        })
    }
}

pub fn covariance(g: &Gaussian) -> Mat3 {
    g.covariance()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
    pub units: String,
}

impl Default for GaussianSet {
    fn default() -> Self {
        GaussianSet {
            gaussians: Vec::new(),
            units: "cm".to_string(),
        }
    }
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianSet {
            gaussians,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        Ok(())
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Empty("empty gaussian set".into()))
        } else {
            Ok(())
        }
    }
}

fn quat_norm(q: Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize_quat(q: Quat) -> Option<Quat> {
    let n = quat_norm(q);
    if !(n > 1e-300) || !n.is_finite() {
        return None;
    }
    Some([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quaternion_to_rotmat(q: Quat) -> Result<Mat3> {
    let n = quat_norm(q);
    if !n.is_finite() || (n - 1.0).abs() > QUAT_TOL {
        return Err(Error::invalid(format!("quaternion norm {n} is not 1")));
    }
    Ok(quat_to_mat_unchecked(q))
}

fn quat_to_mat_unchecked(q: Quat) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Inverse of [`quaternion_to_rotmat`] with `w >= 0`.
pub fn rotmat_to_quaternion(m: &Mat3) -> Result<Quat> {
    let should_be_identity = m * m.transpose();
    if (should_be_identity - Mat3::identity()).amax() > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("matrix is not a proper rotation"));
    }
    let trace = m.trace();
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = normalize_quat(q).ok_or_else(|| Error::invalid("degenerate rotation"))?;
    Ok(if q[0] < 0.0 { [-q[0], -q[1], -q[2], -q[3]] } else { q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn unit_quat() -> impl Strategy<Value = Quat> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |q| quat_norm(*q) > 1e-3)
            .prop_map(|q| normalize_quat(q).unwrap())
    }

    #[test]
    fn identity_quaternion() {
        let r = quaternion_to_rotmat([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn half_turn_about_x() {
        let r = quaternion_to_rotmat([0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(quaternion_to_rotmat([1.0, 1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn diagonal_covariance() {
        let g = Gaussian::new(
            Vec3::zeros(),
            Vec3::new(1.0, 2.0, 3.0),
            [1.0, 0.0, 0.0, 0.0],
            1.0,
            Vec3::zeros(),
        )
        .unwrap();
        assert_eq!(g.covariance(), Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut g = Gaussian::isotropic(Vec3::zeros(), 1.0, 0.5, Vec3::repeat(0.5)).unwrap();
        g.scale.x = 0.0;
        assert!(g.validate(3).is_err());
        g.scale.x = 1.0;
        g.opacity = f64::NAN;
        match g.validate(7) {
            Err(Error::Validation { index, .. }) => assert_eq!(index, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn rotmat_is_orthonormal(q in unit_quat()) {
            let r = quaternion_to_rotmat(q).unwrap();
            prop_assert!((r * r.transpose() - Mat3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rotmat_quaternion_roundtrip(q in unit_quat()) {
            let r = quaternion_to_rotmat(q).unwrap();
            let back = quaternion_to_rotmat(rotmat_to_quaternion(&r).unwrap()).unwrap();
            prop_assert!((r - back).amax() < 1e-9);
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            q in unit_quat(),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            let g = Gaussian::new(Vec3::zeros(), Vec3::from(s), q, 0.5, Vec3::zeros()).unwrap();
            let cov = g.covariance();
            prop_assert_eq!(cov, cov.transpose());
            let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
            }
        }

        #[test]
        fn covariance_is_rotation_equivariant(
            q in unit_quat(),
            qr in unit_quat(),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            let g = Gaussian::new(Vec3::zeros(), Vec3::from(s), q, 0.5, Vec3::zeros()).unwrap();
            let rot = quaternion_to_rotmat(qr).unwrap();
            let lhs = g.rotated(&rot).unwrap().covariance();
            let rhs = rot * g.covariance() * rot.transpose();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn rotated_keeps_identity() {
        let g = Gaussian::isotropic(Vec3::new(1.0, 0.0, 0.0), 0.1, 0.5, Vec3::zeros()).unwrap();
        let r = Mat3::identity();
        let h = g.rotated(&r).unwrap();
        assert_relative_eq!(h.center, g.center);
    }
}
