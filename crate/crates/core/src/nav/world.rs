//! Workspace geometry for the navigation function.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::SquircleShape;

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("query point is inside an obstacle or outside the workspace")]
    OutOfDomain,
    #[error("gradient vanished (critical point)")]
    CriticalPoint,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// A workspace boundary or interior obstacle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Sphere { center: [f64; 3], radius: f64 },
    Squircle(SquircleShape),
}

impl Obstacle {
    pub fn center(&self) -> Vector3<f64> {
        match self {
            Obstacle::Sphere { center, .. } => Vector3::from(*center),
            Obstacle::Squircle(s) => s.center_vec(),
        }
    }

    /// Dimensionless implicit: negative inside, zero on the boundary.
    /// For spheres this is `‖p-c‖²/ρ² - 1`.
    pub fn implicit_hat(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Obstacle::Sphere { center, radius } => {
                (p - Vector3::from(*center)).norm_squared() / (radius * radius) - 1.0
            }
            Obstacle::Squircle(s) => s.implicit(p),
        }
    }

    /// Length scale whose square converts the dimensionless implicit to
    /// m² units; for spheres the scaled form is exactly `‖p-c‖² - ρ²`.
    pub fn scale(&self) -> f64 {
        match self {
            Obstacle::Sphere { radius, .. } => *radius,
            Obstacle::Squircle(s) => s.inscribed_radius(),
        }
    }

    /// Radius of the model sphere an *interior* obstacle maps onto.
    pub fn inscribed_radius(&self) -> f64 {
        match self {
            Obstacle::Sphere { radius, .. } => *radius,
            Obstacle::Squircle(s) => s.inscribed_radius(),
        }
    }

    /// Radius of the model sphere the *boundary* maps onto.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Obstacle::Sphere { radius, .. } => *radius,
            Obstacle::Squircle(s) => s.bounding_radius(),
        }
    }

    /// Distance from the center to the surface along unit `dir`.
    pub fn ray_boundary_distance(&self, dir: &Vector3<f64>) -> f64 {
        match self {
            Obstacle::Sphere { radius, .. } => *radius,
            Obstacle::Squircle(s) => s.ray_boundary_distance(dir),
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Obstacle::Sphere { center, radius } => {
                let c = Vector3::from(*center);
                let r = Vector3::repeat(*radius);
                (c - r, c + r)
            }
            Obstacle::Squircle(s) => {
                let c = s.center_vec();
                let e = s.half_extents_vec();
                (c - e, c + e)
            }
        }
    }

    fn is_sphere(&self) -> bool {
        matches!(self, Obstacle::Sphere { .. })
    }
}

/// Navigation-function tuning parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavParams {
    /// Sharpness exponent κ ≥ 1 (even values keep the function defined
    /// inside the goal bubble).
    pub kappa: u32,
    /// Analytic-switch parameter λ of the sphere-world function.
    pub lambda: f64,
    /// Sharpness of the star-to-sphere switches.
    pub lambda_sq: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        Self { kappa: 6, lambda: 1.0e4, lambda_sq: 1.0e4 }
    }
}

/// Workspace boundary, interior obstacles, parameters, and the goal
/// bubble radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavWorld {
    pub boundary: Obstacle,
    pub obstacles: Vec<Obstacle>,
    pub params: NavParams,
    /// Goal manifold radius around the target, m.
    pub bubble_radius: f64,
}

impl NavWorld {
    /// Obstacle function value β_i in m² units. Index 0 is the boundary
    /// (positive inside the workspace), indices 1.. the interior
    /// obstacles (positive outside each obstacle).
    pub fn beta_i(&self, i: usize, p: &Vector3<f64>) -> f64 {
        if i == 0 {
            let s = self.boundary.scale();
            -self.boundary.implicit_hat(p) * s * s
        } else {
            let ob = &self.obstacles[i - 1];
            let s = ob.scale();
            ob.implicit_hat(p) * s * s
        }
    }

    pub fn n_betas(&self) -> usize {
        1 + self.obstacles.len()
    }

    /// Product of all obstacle functions; positive in the free-space
    /// interior, zero on any boundary.
    pub fn obstacle_product(&self, p: &Vector3<f64>) -> f64 {
        (0..self.n_betas()).map(|i| self.beta_i(i, p)).product()
    }

    /// Dimensionless implicit values used by the diffeomorphism switches,
    /// boundary first (sign flipped so all are positive in free space).
    pub fn beta_hats(&self, p: &Vector3<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_betas());
        v.push(-self.boundary.implicit_hat(p));
        for ob in &self.obstacles {
            v.push(ob.implicit_hat(p));
        }
        v
    }

    /// True when every obstacle and the boundary are spheres, in which
    /// case the star-to-sphere map is the identity.
    pub fn is_sphere_world(&self) -> bool {
        self.boundary.is_sphere() && self.obstacles.iter().all(|o| o.is_sphere())
    }

    /// Representative workspace length scale used for finite-difference
    /// steps.
    pub fn scale(&self) -> f64 {
        self.boundary.bounding_radius()
    }

    pub fn in_free_space(&self, p: &Vector3<f64>) -> bool {
        self.beta_hats(p).iter().all(|&b| b > 0.0)
    }

    /// Structural invariants: strictly positive bubble radius, obstacles
    /// pairwise disjoint and strictly inside the boundary. Disjointness
    /// uses conservative axis-aligned bounding boxes.
    pub fn validate(&self) -> Result<(), NavError> {
        if !(self.bubble_radius > 0.0) {
            return Err(NavError::InvalidWorld("bubble radius must be positive".into()));
        }
        if self.params.kappa < 1 {
            return Err(NavError::InvalidWorld("kappa must be >= 1".into()));
        }
        if !(self.params.lambda > 0.0) || !(self.params.lambda_sq > 0.0) {
            return Err(NavError::InvalidWorld("lambda parameters must be positive".into()));
        }
        let (bmin, bmax) = self.boundary.aabb();
        for (i, ob) in self.obstacles.iter().enumerate() {
            let (omin, omax) = ob.aabb();
            for axis in 0..3 {
                if omin[axis] <= bmin[axis] || omax[axis] >= bmax[axis] {
                    return Err(NavError::InvalidWorld(format!(
                        "obstacle {i} is not strictly inside the boundary"
                    )));
                }
            }
            for (j, other) in self.obstacles.iter().enumerate().skip(i + 1) {
                let (pmin, pmax) = other.aabb();
                let disjoint = (0..3).any(|a| omax[a] < pmin[a] || pmax[a] < omin[a]);
                if !disjoint {
                    return Err(NavError::InvalidWorld(format!(
                        "obstacles {i} and {j} overlap (bounding boxes intersect)"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn three_sphere_world() -> NavWorld {
        NavWorld {
            boundary: Obstacle::Sphere { center: [0.0, 0.0, 0.0], radius: 10.0 },
            obstacles: vec![
                Obstacle::Sphere { center: [4.0, 0.0, 0.0], radius: 1.5 },
                Obstacle::Sphere { center: [-3.0, 3.0, 1.0], radius: 1.0 },
                Obstacle::Sphere { center: [0.0, -4.0, -2.0], radius: 2.0 },
            ],
            params: NavParams::default(),
            bubble_radius: 0.7,
        }
    }

    #[test]
    fn beta_zero_on_obstacle_surface() {
        let w = three_sphere_world();
        let p = Vector3::new(5.5, 0.0, 0.0); // on obstacle 1
        assert!(w.obstacle_product(&p).abs() < 1e-10);
    }

    #[test]
    fn beta_positive_in_open_space() {
        let w = three_sphere_world();
        assert!(w.obstacle_product(&Vector3::new(0.0, 4.0, 0.0)) > 0.0);
    }

    #[test]
    fn product_matches_factorwise_evaluation() {
        let w = three_sphere_world();
        let p = Vector3::new(1.0, 2.0, -1.0);
        let product: f64 = (0..w.n_betas()).map(|i| w.beta_i(i, &p)).product();
        assert!((w.obstacle_product(&p) - product).abs() <= 1e-12 * product.abs());
    }

    #[test]
    fn validation_rejects_overlap_and_escape() {
        let mut w = three_sphere_world();
        w.obstacles.push(Obstacle::Sphere { center: [4.5, 0.0, 0.0], radius: 1.0 });
        assert!(matches!(w.validate(), Err(NavError::InvalidWorld(_))));
        let mut w2 = three_sphere_world();
        w2.obstacles[0] = Obstacle::Sphere { center: [9.5, 0.0, 0.0], radius: 1.5 };
        assert!(matches!(w2.validate(), Err(NavError::InvalidWorld(_))));
        assert!(three_sphere_world().validate().is_ok());
    }
}
