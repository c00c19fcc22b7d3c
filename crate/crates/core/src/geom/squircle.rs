//! Squircle (rounded box) implicit geometry.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned squircle: interpolates between an ellipsoid (`squareness`
/// = 0) and a box as `squareness → 1`.
///
/// The implicit function used everywhere is the p-norm blend
///
/// ```text
/// F(p) = ( |u|^q + |v|^q + |w|^q )^(2/q) - 1,    q = 2 / (1 - s)
/// ```
///
/// with `(u, v, w) = (p - center) / half_extents` componentwise. At
/// `s = 0` this is exactly the ellipsoid form `‖d‖² - 1`; as `s → 1` the
/// exponent grows and the level set approaches the box. `F` is negative
/// strictly inside, zero on the boundary, positive outside, and strictly
/// increasing along rays from the center, so the sign is globally valid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SquircleShape {
    /// Center, m.
    pub center: [f64; 3],
    /// Half extents (a, b, c) along x, y, z, m.
    pub half_extents: [f64; 3],
    /// Squareness s in [0, 1).
    pub squareness: f64,
}

impl SquircleShape {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>, squareness: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&squareness),
            "squareness must lie in [0, 1)"
        );
        assert!(half_extents.iter().all(|&e| e > 0.0));
        Self {
            center: center.into(),
            half_extents: half_extents.into(),
            squareness,
        }
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn half_extents_vec(&self) -> Vector3<f64> {
        Vector3::from(self.half_extents)
    }

    /// p-norm exponent for the current squareness.
    fn exponent(&self) -> f64 {
        2.0 / (1.0 - self.squareness)
    }

    /// Implicit function value; see the type-level docs for the formula.
    pub fn implicit(&self, p: &Vector3<f64>) -> f64 {
        let c = self.center_vec();
        let e = self.half_extents_vec();
        let d = Vector3::new(
            (p.x - c.x) / e.x,
            (p.y - c.y) / e.y,
            (p.z - c.z) / e.z,
        );
        let q = self.exponent();
        let s = d.x.abs().powf(q) + d.y.abs().powf(q) + d.z.abs().powf(q);
        s.powf(2.0 / q) - 1.0
    }

    /// Gradient of [`Self::implicit`]; nonzero on the boundary.
    pub fn implicit_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let c = self.center_vec();
        let e = self.half_extents_vec();
        let d = Vector3::new(
            (p.x - c.x) / e.x,
            (p.y - c.y) / e.y,
            (p.z - c.z) / e.z,
        );
        let q = self.exponent();
        let s = d.x.abs().powf(q) + d.y.abs().powf(q) + d.z.abs().powf(q);
        if s == 0.0 {
            return Vector3::zeros();
        }
        let outer = (2.0 / q) * s.powf(2.0 / q - 1.0);
        let term = |di: f64, ei: f64| -> f64 {
            outer * q * di.abs().powf(q - 1.0) * di.signum() / ei
        };
        Vector3::new(term(d.x, e.x), term(d.y, e.y), term(d.z, e.z))
    }

    /// Distance along the ray `center + t·dir` (unit `dir`) to the
    /// boundary. The implicit is strictly increasing along rays, so the
    /// root is unique; solved by bracketing bisection to ~1e-13 relative.
    pub fn ray_boundary_distance(&self, dir: &Vector3<f64>) -> f64 {
        let c = self.center_vec();
        let f = |t: f64| self.implicit(&(c + dir * t));
        let mut hi = self.half_extents_vec().norm();
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Radius of the inscribed sphere (reached along the shortest axis).
    pub fn inscribed_radius(&self) -> f64 {
        let e = self.half_extents_vec();
        e.x.min(e.y).min(e.z)
    }

    /// Radius of a sphere containing the squircle (box half-diagonal).
    pub fn bounding_radius(&self) -> f64 {
        self.half_extents_vec().norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn shape() -> SquircleShape {
        SquircleShape::new(
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::new(2.0, 1.0, 0.75),
            0.9,
        )
    }

    #[test]
    fn center_is_inside() {
        assert!(shape().implicit(&Vector3::new(1.0, -2.0, 0.5)) < 0.0);
    }

    #[test]
    fn far_point_is_outside() {
        let s = shape();
        let far = s.center_vec() + Vector3::new(10.0 * 2.0, 0.0, 0.0);
        assert!(s.implicit(&far) > 0.0);
    }

    #[test]
    fn zero_squareness_reduces_to_ellipsoid() {
        let s = SquircleShape::new(
            Vector3::new(0.3, 0.0, -1.0),
            Vector3::new(1.5, 2.0, 0.5),
            0.0,
        );
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let d = Vector3::new(
                (p.x - 0.3) / 1.5,
                p.y / 2.0,
                (p.z + 1.0) / 0.5,
            );
            let ellipsoid = d.norm_squared() - 1.0;
            assert!((s.implicit(&p) - ellipsoid).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_changes_once_along_crossing_segment() {
        let s = shape();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            // Segment from the center out to far past the boundary.
            let mut crossings = 0;
            let mut prev = s.implicit(&s.center_vec());
            for i in 1..=400 {
                let p = s.center_vec() + dir * (10.0 * i as f64 / 400.0);
                let v = s.implicit(&p);
                if prev < 0.0 && v >= 0.0 {
                    crossings += 1;
                }
                prev = v;
            }
            assert_eq!(crossings, 1);
        }
    }

    #[test]
    fn ray_distance_lands_on_boundary() {
        let s = shape();
        let dir = Vector3::new(0.4, -0.8, 0.45).normalize();
        let t = s.ray_boundary_distance(&dir);
        let p = s.center_vec() + dir * t;
        assert!(s.implicit(&p).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = shape();
        let p = Vector3::new(2.5, -1.2, 0.9);
        let g = s.implicit_gradient(&p);
        let h = 1e-7;
        for i in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            let fd = (s.implicit(&pp) - s.implicit(&pm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "axis {i}: {fd} vs {}", g[i]);
        }
    }
}
