//! Star-world to sphere-world transformation.
//!
//! The workspace is first normalized by the affine map
//! `S(p) = (p - c₀) ⊘ e₀` (componentwise by the boundary half-extents),
//! which sends the boundary to a unit squircle so that the subsequent
//! radial deformation is direction-uniform. In normalized coordinates
//! each body gets a per-obstacle ray scaling `T_i` onto its model
//! sphere, blended by analytic switches:
//!
//! ```text
//! h̃(q) = s_d(q)·q + Σ_i s_i(q)·T_i(q),        s_d = 1 - Σ_i s_i
//! s_i(q) = b̄_i / (b̄_i + C_SW·λ_sq·β̂_i),       b̄_i = Π_{j≠i} β̂_j
//! T_i(q) = c_i + (ρ_i / t_i*(u))·(q - c_i),    u = (q - c_i)/‖q - c_i‖
//! ```
//!
//! and the result is returned at physical scale through the uniform map
//! `h(p) = c₀ + ρ̄·h̃(S(p))` with `ρ̄ = (e₀ₓ·e₀ᵧ·e₀ᵤ)^(1/3)`. On body
//! `i`'s surface `s_i = 1` and every other switch vanishes exactly, so
//! surfaces land exactly on their model spheres; for a sphere world the
//! whole construction collapses to the identity.

use nalgebra::Vector3;

use super::world::{NavError, NavWorld, Obstacle};
use crate::geom::SquircleShape;

/// Switch sharpness scale: λ_sq enters the switches directly, so the
/// reference default 1e4 keeps the deformation shells thin and the
/// field away from surfaces close to the sphere-world field.
const C_SW: f64 = 1.0;

/// The normalized obstacle set and the model sphere world, in physical
/// output coordinates (`center + ρ̄ · normalized`).
#[derive(Debug, Clone)]
pub struct ModelWorld {
    pub center: Vector3<f64>,
    pub extents: Vector3<f64>,
    pub rho_bar: f64,
    pub scaled_boundary: Obstacle,
    pub scaled_obstacles: Vec<Obstacle>,
    /// Model spheres in output coordinates, boundary first.
    pub spheres: Vec<(Vector3<f64>, f64)>,
}

fn scale_obstacle(ob: &Obstacle, center: &Vector3<f64>, extents: &Vector3<f64>) -> Obstacle {
    let (c, he, s) = match ob {
        Obstacle::Sphere { center: c, radius } => {
            (Vector3::from(*c), Vector3::repeat(*radius), 0.0)
        }
        Obstacle::Squircle(q) => (q.center_vec(), q.half_extents_vec(), q.squareness),
    };
    let cs = (c - center).component_div(extents);
    let hs = he.component_div(extents);
    Obstacle::Squircle(SquircleShape::new(cs, hs, s))
}

impl NavWorld {
    /// Builds the normalized world and its model spheres.
    pub fn model(&self) -> ModelWorld {
        let center = self.boundary.center();
        let extents = match &self.boundary {
            Obstacle::Sphere { radius, .. } => Vector3::repeat(*radius),
            Obstacle::Squircle(s) => s.half_extents_vec(),
        };
        let rho_bar = (extents.x * extents.y * extents.z).cbrt();
        let scaled_boundary = scale_obstacle(&self.boundary, &center, &extents);
        let scaled_obstacles: Vec<Obstacle> = self
            .obstacles
            .iter()
            .map(|o| scale_obstacle(o, &center, &extents))
            .collect();
        let mut spheres = Vec::with_capacity(1 + scaled_obstacles.len());
        spheres.push((center, rho_bar * scaled_boundary.bounding_radius()));
        for so in &scaled_obstacles {
            spheres.push((center + rho_bar * so.center(), rho_bar * so.inscribed_radius()));
        }
        ModelWorld { center, extents, rho_bar, scaled_boundary, scaled_obstacles, spheres }
    }
}

impl ModelWorld {
    fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center).component_div(&self.extents)
    }

    /// Dimensionless implicits in normalized coordinates, boundary first
    /// (positive in free space).
    fn beta_hats(&self, q: &Vector3<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.scaled_obstacles.len());
        v.push(-self.scaled_boundary.implicit_hat(q));
        for o in &self.scaled_obstacles {
            v.push(o.implicit_hat(q));
        }
        v
    }
}

/// Applies the star-to-sphere diffeomorphism.
///
/// Errors with [`NavError::OutOfDomain`] when `p` lies inside an
/// obstacle or outside the workspace (any β̂ < 0).
pub fn star_to_sphere(world: &NavWorld, p: &Vector3<f64>) -> Result<Vector3<f64>, NavError> {
    let model = world.model();
    star_to_sphere_with(world, &model, p)
}

/// As [`star_to_sphere`] with a prebuilt model (hot path).
pub fn star_to_sphere_with(
    world: &NavWorld,
    model: &ModelWorld,
    p: &Vector3<f64>,
) -> Result<Vector3<f64>, NavError> {
    let q = model.normalize(p);
    // Points exactly on a surface can round a hair inside; clamp those to
    // the boundary rather than rejecting them.
    let hats: Vec<f64> = model
        .beta_hats(&q)
        .iter()
        .map(|&b| if b > -1e-12 { b.max(0.0) } else { b })
        .collect();
    if hats.iter().any(|&b| b < 0.0) {
        return Err(NavError::OutOfDomain);
    }
    if world.is_sphere_world() {
        return Ok(*p);
    }
    let n = hats.len();
    let mut h = Vector3::zeros();
    let mut switch_sum = 0.0;
    for i in 0..n {
        let bbar: f64 = (0..n).filter(|&j| j != i).map(|j| hats[j]).product();
        let denom = bbar + C_SW * world.params.lambda_sq * hats[i];
        let s_i = if denom > 0.0 { bbar / denom } else { 1.0 };
        let (body, model_radius): (&Obstacle, f64) = if i == 0 {
            (&model.scaled_boundary, model.scaled_boundary.bounding_radius())
        } else {
            let ob = &model.scaled_obstacles[i - 1];
            (ob, ob.inscribed_radius())
        };
        let c_i = body.center();
        let offset = q - c_i;
        let dist = offset.norm();
        let t_i = if dist < 1e-12 {
            c_i
        } else {
            let dir = offset / dist;
            let t_star = body.ray_boundary_distance(&dir);
            c_i + offset * (model_radius / t_star)
        };
        h += t_i * s_i;
        switch_sum += s_i;
    }
    h += q * (1.0 - switch_sum);
    Ok(model.center + model.rho_bar * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::world::NavParams;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sphere_world() -> NavWorld {
        NavWorld {
            boundary: Obstacle::Sphere { center: [0.0, 0.0, 0.0], radius: 10.0 },
            obstacles: vec![
                Obstacle::Sphere { center: [4.0, 0.0, 0.0], radius: 1.5 },
                Obstacle::Sphere { center: [-3.0, 3.0, 1.0], radius: 1.0 },
            ],
            params: NavParams::default(),
            bubble_radius: 0.7,
        }
    }

    fn squircle_world() -> NavWorld {
        NavWorld {
            boundary: Obstacle::Squircle(SquircleShape::new(
                Vector3::new(0.0, 0.0, 2.5),
                Vector3::new(10.0, 10.0, 2.5),
                0.95,
            )),
            obstacles: vec![
                Obstacle::Squircle(SquircleShape::new(
                    Vector3::new(5.0, 1.0, 1.5),
                    Vector3::new(2.0, 2.0, 1.45),
                    0.9,
                )),
                Obstacle::Squircle(SquircleShape::new(
                    Vector3::new(-4.0, -4.0, 1.5),
                    Vector3::new(1.5, 1.5, 1.45),
                    0.9,
                )),
            ],
            params: NavParams::default(),
            bubble_radius: 0.7,
        }
    }

    #[test]
    fn sphere_world_maps_identically() {
        let w = sphere_world();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-7.0..7.0),
                rng.random_range(-7.0..7.0),
                rng.random_range(-7.0..7.0),
            );
            if !w.in_free_space(&p) {
                continue;
            }
            let h = star_to_sphere(&w, &p).unwrap();
            assert!((h - p).norm() < 1e-12);
        }
    }

    #[test]
    fn obstacle_surface_maps_onto_model_sphere() {
        let w = squircle_world();
        let model = w.model();
        let ob = &w.obstacles[0];
        let (m_center, m_radius) = model.spheres[1];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let t = ob.ray_boundary_distance(&dir);
            let p = ob.center() + dir * t;
            let h = star_to_sphere(&w, &p).unwrap();
            assert!(
                ((h - m_center).norm() - m_radius).abs() < 1e-9,
                "surface point did not land on the model sphere"
            );
        }
    }

    #[test]
    fn boundary_surface_maps_onto_bounding_sphere() {
        let w = squircle_world();
        let model = w.model();
        let (m_center, m_radius) = model.spheres[0];
        let c = w.boundary.center();
        let dir = Vector3::new(0.3, -0.8, 0.52).normalize();
        let t = w.boundary.ray_boundary_distance(&dir);
        let h = star_to_sphere(&w, &(c + dir * t)).unwrap();
        assert!(((h - m_center).norm() - m_radius).abs() < 1e-9);
    }

    #[test]
    fn map_is_injective_on_samples() {
        let w = squircle_world();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut points = Vec::new();
        let mut images = Vec::new();
        while points.len() < 200 {
            let p = Vector3::new(
                rng.random_range(-9.0..9.0),
                rng.random_range(-9.0..9.0),
                rng.random_range(0.2..4.8),
            );
            if !w.in_free_space(&p) {
                continue;
            }
            points.push(p);
            images.push(star_to_sphere(&w, &p).unwrap());
        }
        // 10^4 ordered pairs: no two distinct points may collide.
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let dp = (points[i] - points[j]).norm();
                let dh = (images[i] - images[j]).norm();
                assert!(
                    dh > 1e-9 * dp,
                    "collision: {} vs {} ({dp} apart -> {dh})",
                    points[i],
                    points[j],
                );
            }
        }
    }

    #[test]
    fn rejects_points_inside_obstacles() {
        let w = squircle_world();
        assert_eq!(
            star_to_sphere(&w, &Vector3::new(5.0, 1.0, 1.5)).unwrap_err(),
            NavError::OutOfDomain
        );
    }

    #[test]
    fn image_stays_inside_model_ball() {
        let w = squircle_world();
        let model = w.model();
        let (m_center, m_radius) = model.spheres[0];
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..500 {
            let p = Vector3::new(
                rng.random_range(-9.9..9.9),
                rng.random_range(-9.9..9.9),
                rng.random_range(0.05..4.95),
            );
            if !w.in_free_space(&p) {
                continue;
            }
            let h = star_to_sphere(&w, &p).unwrap();
            assert!((h - m_center).norm() <= m_radius + 1e-9);
        }
    }

    #[test]
    fn model_spheres_are_disjoint_and_contained() {
        let model = squircle_world().model();
        let (bc, br) = model.spheres[0];
        for i in 1..model.spheres.len() {
            let (c, r) = model.spheres[i];
            assert!((c - bc).norm() + r < br, "obstacle sphere {i} escapes the boundary");
            for j in (i + 1)..model.spheres.len() {
                let (c2, r2) = model.spheres[j];
                assert!((c - c2).norm() > r + r2, "model spheres {i} and {j} overlap");
            }
        }
    }
}
