//! JPL-convention unit quaternions.
//!
//! Memory order is `[x, y, z, w]` (scalar last). A quaternion `q_A_B`
//! represents the rotation of frame B into frame A, and its rotation
//! matrix acts on coordinates: `v_A = R(q_A_B) * v_B`. Composition
//! follows the matrix order, `R(q1 * q2) = R(q1) * R(q2)`.
//!
//! The matrix form is
//!
//! ```text
//! R(q) = (2w² - 1)·I - 2w·skew(v) + 2·v·vᵀ,   q = [v; w]
//! ```
//!
//! Error states use the small-angle retraction `q = dq ⊗ q̂` with
//! `dq ≈ [dθ/2; 1]` renormalized, so the 3-vector error `dθ` lives in
//! the *end* (local) frame of the quaternion.

use nalgebra::{Matrix3, Vector3, Vector4};

use super::so3::skew;

/// Unit quaternion, JPL convention (scalar last).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    xyzw: Vector4<f64>,
}

impl UnitQuat {
    /// Identity rotation.
    pub fn identity() -> Self {
        Self { xyzw: Vector4::new(0.0, 0.0, 0.0, 1.0) }
    }

    /// Builds from components and renormalizes.
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { xyzw: Vector4::new(x, y, z, w) }.normalized()
    }

    /// Rotation of `angle` radians about the unit axis `axis`.
    ///
    /// `R(from_axis_angle(u, a))` transforms coordinates into a frame
    /// rotated by `+a` about `u`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let half = 0.5 * angle;
        let v = axis * half.sin();
        Self::new(v.x, v.y, v.z, half.cos())
    }

    /// Rotation about the z axis by `psi` (the 1-DOF map quaternion form).
    pub fn from_yaw(psi: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), psi)
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.xyzw.fixed_rows::<3>(0).into_owned()
    }

    pub fn scalar(&self) -> f64 {
        self.xyzw.w
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        self.xyzw
    }

    /// Renormalizes; drift after any operation is kept below 1e-12.
    pub fn normalized(&self) -> Self {
        let n = self.xyzw.norm();
        Self { xyzw: self.xyzw / n }
    }

    pub fn norm_error(&self) -> f64 {
        (self.xyzw.norm() - 1.0).abs()
    }

    /// Conjugate; equal to the inverse for unit quaternions.
    pub fn inverse(&self) -> Self {
        Self { xyzw: Vector4::new(-self.xyzw.x, -self.xyzw.y, -self.xyzw.z, self.xyzw.w) }
    }

    /// JPL quaternion product: `R(self * rhs) = R(self) * R(rhs)`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (qv, qw) = (self.vector(), self.scalar());
        let (pv, pw) = (rhs.vector(), rhs.scalar());
        let v = qw * pv + pw * qv - qv.cross(&pv);
        let w = qw * pw - qv.dot(&pv);
        Self::new(v.x, v.y, v.z, w)
    }

    /// Rotation matrix: `v_end = R * v_start`.
    pub fn to_rot(&self) -> Matrix3<f64> {
        let v = self.vector();
        let w = self.scalar();
        (2.0 * w * w - 1.0) * Matrix3::identity() - 2.0 * w * skew(&v)
            + 2.0 * v * v.transpose()
    }

    /// Closest unit quaternion to a rotation matrix (Shepperd's method).
    pub fn from_rot(r: &Matrix3<f64>) -> Self {
        let tr = r.trace();
        // Pick the largest of w², x², y², z² for numerical safety.
        let cand = [tr, r[(0, 0)], r[(1, 1)], r[(2, 2)]];
        let which = cand
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // JPL matrix has off-diagonal terms with signs flipped relative to
        // the Hamilton form; derived directly from to_rot().
        let (x, y, z, w) = match which {
            0 => {
                let w = 0.5 * (1.0 + tr).sqrt();
                let s = 1.0 / (4.0 * w);
                (
                    (r[(1, 2)] - r[(2, 1)]) * s,
                    (r[(2, 0)] - r[(0, 2)]) * s,
                    (r[(0, 1)] - r[(1, 0)]) * s,
                    w,
                )
            }
            1 => {
                let x = 0.5 * (1.0 + 2.0 * r[(0, 0)] - tr).sqrt();
                let s = 1.0 / (4.0 * x);
                (
                    x,
                    (r[(0, 1)] + r[(1, 0)]) * s,
                    (r[(2, 0)] + r[(0, 2)]) * s,
                    (r[(1, 2)] - r[(2, 1)]) * s,
                )
            }
            2 => {
                let y = 0.5 * (1.0 + 2.0 * r[(1, 1)] - tr).sqrt();
                let s = 1.0 / (4.0 * y);
                (
                    (r[(0, 1)] + r[(1, 0)]) * s,
                    y,
                    (r[(1, 2)] + r[(2, 1)]) * s,
                    (r[(2, 0)] - r[(0, 2)]) * s,
                )
            }
            _ => {
                let z = 0.5 * (1.0 + 2.0 * r[(2, 2)] - tr).sqrt();
                let s = 1.0 / (4.0 * z);
                (
                    (r[(2, 0)] + r[(0, 2)]) * s,
                    (r[(1, 2)] + r[(2, 1)]) * s,
                    z,
                    (r[(0, 1)] - r[(1, 0)]) * s,
                )
            }
        };
        Self::new(x, y, z, w)
    }

    /// Error-state retraction `dq ⊗ q̂` with `dq ≈ [dθ/2; 1]` renormalized.
    pub fn boxplus(&self, dtheta: &Vector3<f64>) -> Self {
        let dq = Self::new(0.5 * dtheta.x, 0.5 * dtheta.y, 0.5 * dtheta.z, 1.0);
        dq.mul(self)
    }

    /// Inverse retraction: the exact rotation-vector error `dθ` such that
    /// `other = exp(dθ) ⊗ self` to machine precision.
    pub fn boxminus(&self, other: &Self) -> Vector3<f64> {
        // self = q, other = q̂; dq = q ⊗ q̂⁻¹.
        let mut dq = self.mul(&other.inverse());
        if dq.scalar() < 0.0 {
            dq = Self { xyzw: -dq.xyzw };
        }
        let v = dq.vector();
        let vn = v.norm();
        if vn < 1e-300 {
            return Vector3::zeros();
        }
        let angle = 2.0 * vn.atan2(dq.scalar());
        v / vn * angle
    }

    /// Quaternion kinematics `q̇ = ½ Ω(ω) q` as a raw 4-vector derivative.
    ///
    /// `ω` is the angular rate in the quaternion's end (local) frame.
    pub fn derivative(&self, omega: &Vector3<f64>) -> Vector4<f64> {
        let v = self.vector();
        let w = self.scalar();
        let vd = 0.5 * (w * omega - omega.cross(&v));
        let wd = -0.5 * omega.dot(&v);
        Vector4::new(vd.x, vd.y, vd.z, wd)
    }

    /// Rebuilds from an unnormalized 4-vector (used by RK4 integrators).
    pub fn from_vector4(v: Vector4<f64>) -> Self {
        Self { xyzw: v }.normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rot_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn identity_times_q_is_q() {
        let q = UnitQuat::from_axis_angle(&Vector3::new(0.6, 0.8, 0.0), 0.7);
        let p = UnitQuat::identity().mul(&q);
        assert_abs_diff_eq!((p.as_vector4() - q.as_vector4()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn q_times_inverse_is_identity() {
        let q = UnitQuat::from_axis_angle(&Vector3::new(0.0, 0.6, 0.8), 1.3);
        let p = q.mul(&q.inverse());
        assert_abs_diff_eq!(p.scalar().abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.vector().norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn two_quarter_turns_make_half_turn() {
        // Oracle: compose rotation matrices and convert back.
        let q90 = UnitQuat::from_yaw(std::f64::consts::FRAC_PI_2);
        let q180 = q90.mul(&q90);
        let oracle = UnitQuat::from_rot(&(q90.to_rot() * q90.to_rot()));
        assert_abs_diff_eq!(q180.vector().z.abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q180.scalar(), 0.0, epsilon = 1e-12);
        assert!(rot_err(&q180.to_rot(), &oracle.to_rot()) < 1e-12);
    }

    #[test]
    fn product_matrix_matches_matrix_product() {
        let a = UnitQuat::from_axis_angle(&Vector3::new(1.0, 0.0, 0.0), 0.3);
        let b = UnitQuat::from_axis_angle(&Vector3::new(0.0, 0.70710678, 0.70710678), -1.1);
        assert!(rot_err(&a.mul(&b).to_rot(), &(a.to_rot() * b.to_rot())) < 1e-10);
    }

    #[test]
    fn rot_roundtrip() {
        let q = UnitQuat::new(0.1, -0.4, 0.2, 0.88);
        let back = UnitQuat::from_rot(&q.to_rot());
        assert!(rot_err(&back.to_rot(), &q.to_rot()) < 1e-12);
    }

    #[test]
    fn boxplus_zero_is_noop() {
        let q = UnitQuat::new(0.3, 0.1, -0.2, 0.9);
        let p = q.boxplus(&Vector3::zeros());
        assert_abs_diff_eq!((p.as_vector4() - q.as_vector4()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn boxplus_boxminus_first_order_consistent() {
        let q = UnitQuat::new(0.3, 0.1, -0.2, 0.9);
        for delta in [
            Vector3::new(1e-4, 0.0, 0.0),
            Vector3::new(-3e-5, 5e-5, 2e-5),
            Vector3::new(0.0, 0.0, 9e-5),
        ] {
            let d = q.boxplus(&delta).boxminus(&q);
            assert!((d - delta).norm() <= 1e-8 * delta.norm());
        }
    }

    #[test]
    fn rotation_matrix_is_special_orthogonal() {
        let q = UnitQuat::new(-0.5, 0.5, 0.5, 0.5);
        let r = q.to_rot();
        assert!(rot_err(&(r.transpose() * r), &Matrix3::identity()) < 1e-10);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-10);
    }
}
