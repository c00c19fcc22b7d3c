//! Small SO(3) helpers: the wedge/vee pair and rotation-matrix utilities.

use nalgebra::{Matrix3, Vector3};

/// Wedge operator: maps `v` to the antisymmetric matrix with
/// `skew(v) * x = v × x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] on antisymmetric matrices.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation-vector logarithm of a rotation matrix.
pub fn rot_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-10 {
        return vee(&(r - r.transpose())) * 0.5;
    }
    if (std::f64::consts::PI - angle) < 1e-6 {
        // Near π the antisymmetric part degenerates; use the symmetric form.
        let b = (r + Matrix3::identity()) * 0.5;
        let axis = Vector3::new(b[(0, 0)].sqrt(), b[(1, 1)].sqrt(), b[(2, 2)].sqrt());
        // Fix signs from the off-diagonal terms.
        let mut a = axis;
        if b[(0, 1)] < 0.0 {
            a.y = -a.y;
        }
        if b[(0, 2)] < 0.0 {
            a.z = -a.z;
        }
        return a.normalize() * angle;
    }
    vee(&(r - r.transpose())) * (0.5 * angle / angle.sin())
}

/// Projects a near-orthonormal matrix back onto SO(3) with two polar
/// iterations; drift from RK4 steps is restored to ~1e-15.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut m = *r;
    for _ in 0..2 {
        m = m * (Matrix3::identity() * 1.5 - 0.5 * (m.transpose() * m));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::UnitQuat;

    #[test]
    fn skew_is_antisymmetric_and_annihilates_argument() {
        let v = Vector3::new(0.3, -1.2, 2.0);
        let s = skew(&v);
        assert!((s + s.transpose()).norm() < 1e-15);
        assert!((s * v).norm() < 1e-15);
    }

    #[test]
    fn vee_inverts_skew() {
        let v = Vector3::new(-0.4, 0.9, 0.1);
        assert!((vee(&skew(&v)) - v).norm() < 1e-15);
    }

    #[test]
    fn log_recovers_rotation_vector() {
        for (axis, angle) in [
            (Vector3::z(), 0.8),
            (Vector3::new(0.6, 0.8, 0.0), 2.9),
            (Vector3::x(), 1e-8),
        ] {
            let r = UnitQuat::from_axis_angle(&axis, angle).to_rot().transpose();
            // transpose: to_rot is frame-transform; log of the active rotation.
            let w = rot_log(&r);
            assert!((w - axis * angle).norm() < 1e-6 * angle.max(1e-8));
        }
    }

    #[test]
    fn orthonormalize_restores_so3() {
        let r = UnitQuat::new(0.2, 0.3, -0.1, 0.92).to_rot();
        let drifted = r * 1.000001;
        let fixed = orthonormalize(&drifted);
        assert!((fixed.transpose() * fixed - Matrix3::identity()).norm() < 1e-12);
    }
}
