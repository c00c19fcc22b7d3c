//! Navigation-function evaluation and the velocity reference field.

use nalgebra::{Matrix3, Vector3};
use statrs::function::erf::erf;

use super::diffeo::{star_to_sphere_with, ModelWorld};
use super::world::{NavError, NavWorld};

/// Goal cost `J = ‖p - p_T‖² - r²`.
pub fn goal_cost(p: &Vector3<f64>, p_target: &Vector3<f64>, bubble_radius: f64) -> f64 {
    (p - p_target).norm_squared() - bubble_radius * bubble_radius
}

fn sphere_beta(spheres: &[(Vector3<f64>, f64)], i: usize, x: &Vector3<f64>) -> f64 {
    let (c, r) = spheres[i];
    let d2 = (x - c).norm_squared();
    if i == 0 {
        r * r - d2
    } else {
        d2 - r * r
    }
}

fn sphere_beta_grad(spheres: &[(Vector3<f64>, f64)], i: usize, x: &Vector3<f64>) -> Vector3<f64> {
    let (c, _) = spheres[i];
    if i == 0 {
        -2.0 * (x - c)
    } else {
        2.0 * (x - c)
    }
}

/// Sphere-world navigation function
/// `φ̃ = J / (J^κ + λ·β)^(1/κ)` evaluated at model coordinates.
///
/// Zero exactly on the goal manifold (`J = 0`), one exactly on obstacle
/// boundaries (`β = 0`, `J > 0`). Errors when the query is inside an
/// obstacle (some β_i < 0).
pub fn nav_value_sphere(
    world: &NavWorld,
    x: &Vector3<f64>,
    x_target: &Vector3<f64>,
) -> Result<f64, NavError> {
    let spheres = world.model().spheres;
    let mut beta = 1.0;
    for i in 0..spheres.len() {
        let b = sphere_beta(&spheres, i, x);
        if b < 0.0 {
            return Err(NavError::OutOfDomain);
        }
        beta *= b;
    }
    let j = goal_cost(x, x_target, world.bubble_radius);
    let kappa = world.params.kappa as i32;
    let arg = j.powi(kappa) + world.params.lambda * beta;
    if arg <= 0.0 {
        return Err(NavError::OutOfDomain);
    }
    Ok(j / arg.powf(1.0 / kappa as f64))
}

/// Analytic gradient of [`nav_value_sphere`] with respect to `x`.
fn nav_grad_sphere(
    world: &NavWorld,
    x: &Vector3<f64>,
    x_target: &Vector3<f64>,
) -> Result<Vector3<f64>, NavError> {
    nav_grad_sphere_with(world, &world.model().spheres, x, x_target)
}

fn nav_grad_sphere_with(
    world: &NavWorld,
    spheres: &[(Vector3<f64>, f64)],
    x: &Vector3<f64>,
    x_target: &Vector3<f64>,
) -> Result<Vector3<f64>, NavError> {
    let spheres = spheres.to_vec();
    let n = spheres.len();
    let betas: Vec<f64> = (0..n).map(|i| sphere_beta(&spheres, i, x)).collect();
    if betas.iter().any(|&b| b < 0.0) {
        return Err(NavError::OutOfDomain);
    }
    let beta: f64 = betas.iter().product();
    let mut grad_beta = Vector3::zeros();
    for i in 0..n {
        let others: f64 = (0..n).filter(|&j| j != i).map(|j| betas[j]).product();
        grad_beta += others * sphere_beta_grad(&spheres, i, x);
    }
    let j = goal_cost(x, x_target, world.bubble_radius);
    let grad_j = 2.0 * (x - x_target);
    let kappa = world.params.kappa as i32;
    let kf = kappa as f64;
    let arg = j.powi(kappa) + world.params.lambda * beta;
    if arg <= 0.0 {
        return Err(NavError::OutOfDomain);
    }
    let grad_arg = kf * j.powi(kappa - 1) * grad_j + world.params.lambda * grad_beta;
    let a = arg.powf(-1.0 / kf);
    Ok(a * grad_j - (j / kf) * arg.powf(-1.0 / kf - 1.0) * grad_arg)
}

/// Composed navigation function `φ(p) = φ̃(h(p), h(p_T))`.
pub fn nav_value(
    world: &NavWorld,
    p: &Vector3<f64>,
    p_target: &Vector3<f64>,
) -> Result<f64, NavError> {
    let model = world.model();
    let x = star_to_sphere_with(world, &model, p)?;
    let xt = star_to_sphere_with(world, &model, p_target)?;
    nav_value_sphere_with(world, &model, &x, &xt)
}

fn nav_value_sphere_with(
    world: &NavWorld,
    model: &ModelWorld,
    x: &Vector3<f64>,
    x_target: &Vector3<f64>,
) -> Result<f64, NavError> {
    let mut beta = 1.0;
    for i in 0..model.spheres.len() {
        let b = sphere_beta(&model.spheres, i, x);
        if b < 0.0 {
            return Err(NavError::OutOfDomain);
        }
        beta *= b;
    }
    let j = goal_cost(x, x_target, world.bubble_radius);
    let kappa = world.params.kappa as i32;
    let arg = j.powi(kappa) + world.params.lambda * beta;
    if arg <= 0.0 {
        return Err(NavError::OutOfDomain);
    }
    Ok(j / arg.powf(1.0 / kappa as f64))
}

/// Gradient of the composed navigation function with respect to `p`:
/// the sphere-world part is analytic, the diffeomorphism Jacobian comes
/// from central differences on `h` (step `1e-6` of the workspace scale).
pub fn grad_phi(
    world: &NavWorld,
    p: &Vector3<f64>,
    p_target: &Vector3<f64>,
) -> Result<Vector3<f64>, NavError> {
    if world.is_sphere_world() {
        return nav_grad_sphere(world, p, p_target);
    }
    let model = world.model();
    let x = star_to_sphere_with(world, &model, p)?;
    let xt = star_to_sphere_with(world, &model, p_target)?;
    let g_model = nav_grad_sphere_with(world, &model.spheres, &x, &xt)?;
    let h = 1e-6 * world.scale();
    let mut jac = Matrix3::zeros();
    for axis in 0..3 {
        let mut pp = *p;
        let mut pm = *p;
        pp[axis] += h;
        pm[axis] -= h;
        let col = (star_to_sphere_with(world, &model, &pp)?
            - star_to_sphere_with(world, &model, &pm)?)
            / (2.0 * h);
        jac.set_column(axis, &col);
    }
    Ok(jac.transpose() * g_model)
}

/// Pure finite-difference gradient of `φ`; the independent route used to
/// cross-check [`grad_phi`].
pub fn grad_phi_fd(
    world: &NavWorld,
    p: &Vector3<f64>,
    p_target: &Vector3<f64>,
) -> Result<Vector3<f64>, NavError> {
    let h = 1e-6 * world.scale();
    let mut g = Vector3::zeros();
    for axis in 0..3 {
        let mut pp = *p;
        let mut pm = *p;
        pp[axis] += h;
        pm[axis] -= h;
        g[axis] =
            (nav_value(world, &pp, p_target)? - nav_value(world, &pm, p_target)?) / (2.0 * h);
    }
    Ok(g)
}

/// Velocity reference with a critical-point flag.
#[derive(Debug, Clone, Copy)]
pub struct VelocityRef {
    pub velocity: Vector3<f64>,
    /// Set when ‖∇φ‖ < 1e-12 and the reference was zeroed.
    pub critical: bool,
}

/// Velocity reference
/// `v_d = -erf(k·(‖p - p_T‖ - r)) · ∇φ/‖∇φ‖ · v_max`.
pub fn desired_velocity(
    world: &NavWorld,
    p: &Vector3<f64>,
    p_target: &Vector3<f64>,
    k: f64,
    v_max: f64,
) -> Result<VelocityRef, NavError> {
    let g = grad_phi(world, p, p_target)?;
    let gn = g.norm();
    if gn < 1e-12 {
        return Ok(VelocityRef { velocity: Vector3::zeros(), critical: true });
    }
    let dist = (p - p_target).norm();
    let speed = erf(k * (dist - world.bubble_radius)) * v_max;
    Ok(VelocityRef { velocity: -(g / gn) * speed, critical: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SquircleShape;
    use crate::nav::world::{NavParams, Obstacle};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sphere_world() -> NavWorld {
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
    fn goal_cost_values() {
        let p = Vector3::new(1.0, 0.0, 0.0);
        let t = Vector3::zeros();
        assert_eq!(goal_cost(&p, &t, 1.0), 0.0);
        assert_eq!(goal_cost(&t, &t, 1.0), -1.0);
        assert_eq!(goal_cost(&(2.0 * p), &t, 1.0), 3.0);
    }

    #[test]
    fn nav_value_zero_on_goal_manifold() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        let p = target + Vector3::new(w.bubble_radius, 0.0, 0.0);
        let v = nav_value_sphere(&w, &p, &target).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn nav_value_one_on_obstacle_boundary() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        let p = Vector3::new(5.5, 0.0, 0.0); // on obstacle 1
        let v = nav_value_sphere(&w, &p, &target).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nav_value_in_unit_interval_in_interior() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 500 {
            let p = Vector3::new(
                rng.random_range(-9.0..9.0),
                rng.random_range(-9.0..9.0),
                rng.random_range(-9.0..9.0),
            );
            if !w.in_free_space(&p) || goal_cost(&p, &target, w.bubble_radius) < 1e-3 {
                continue;
            }
            let v = nav_value_sphere(&w, &p, &target).unwrap();
            assert!(v > 0.0 && v < 1.0, "phi={v} at {p}");
            checked += 1;
        }
    }

    #[test]
    fn nav_value_rejects_inside_obstacle() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        assert_eq!(
            nav_value_sphere(&w, &Vector3::new(4.0, 0.0, 0.0), &target).unwrap_err(),
            NavError::OutOfDomain
        );
    }

    #[test]
    fn gradient_routes_agree() {
        // Analytic-plus-chain-rule route vs plain finite differences.
        for (w, zmin, zmax) in [
            (sphere_world(), -9.0f64, 9.0),
            (squircle_world(), 0.3, 4.7),
        ] {
            let target = Vector3::new(0.0, 5.0, zmin.max(0.5));
            let mut rng = ChaCha12Rng::seed_from_u64(29);
            let mut checked = 0;
            while checked < 1000 {
                let p = Vector3::new(
                    rng.random_range(-9.0..9.0),
                    rng.random_range(-9.0..9.0),
                    rng.random_range(zmin..zmax),
                );
                if !w.in_free_space(&p) || (p - target).norm() < 1.0 {
                    continue;
                }
                // Stay clear of boundaries so both FD stencils remain in-domain.
                if w.beta_hats(&p).iter().any(|&b| b < 1e-3) {
                    continue;
                }
                let g1 = grad_phi(&w, &p, &target).unwrap();
                let g2 = grad_phi_fd(&w, &p, &target).unwrap();
                let rel = (g1 - g2).norm() / g1.norm().max(g2.norm()).max(1e-300);
                assert!(rel <= 1e-4, "rel={rel} at {p} (|g|={})", g1.norm());
                checked += 1;
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let w = sphere_world();
        let shift = Vector3::new(3.2, -1.1, 0.7);
        let mut w2 = w.clone();
        let translate = |o: &Obstacle| match o {
            Obstacle::Sphere { center, radius } => Obstacle::Sphere {
                center: (Vector3::from(*center) + shift).into(),
                radius: *radius,
            },
            Obstacle::Squircle(s) => Obstacle::Squircle(SquircleShape::new(
                s.center_vec() + shift,
                s.half_extents_vec(),
                s.squareness,
            )),
        };
        w2.boundary = translate(&w.boundary);
        w2.obstacles = w.obstacles.iter().map(translate).collect();
        let target = Vector3::new(0.0, 5.0, 0.0);
        for p in [
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(-6.0, 0.0, 2.0),
            Vector3::new(2.0, -6.0, -1.0),
        ] {
            let a = nav_value(&w, &p, &target).unwrap();
            let b = nav_value(&w2, &(p + shift), &(target + shift)).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn desired_velocity_magnitudes() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        // On the bubble: zero speed.
        let p = target + Vector3::new(w.bubble_radius, 0.0, 0.0);
        let v = desired_velocity(&w, &p, &target, 1.0, 6.0).unwrap();
        assert!(v.velocity.norm() < 1e-12 && !v.critical);
        // One meter outside the bubble with k = 1: erf(1) * v_max.
        let p2 = target + Vector3::new(w.bubble_radius + 1.0, 0.0, 0.0);
        let v2 = desired_velocity(&w, &p2, &target, 1.0, 6.0).unwrap();
        assert!((v2.velocity.norm() - erf(1.0) * 6.0).abs() < 1e-9);
        assert!((v2.velocity.norm() - 5.0563).abs() < 1e-3);
    }

    #[test]
    fn desired_speed_saturates_far_away() {
        let w = sphere_world();
        let target = Vector3::new(0.0, 5.0, 0.0);
        let p = Vector3::new(0.0, -9.0, 0.0);
        let v = desired_velocity(&w, &p, &target, 3.0, 6.0).unwrap();
        assert!((v.velocity.norm() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_flow_reaches_bubble_from_random_starts() {
        // Navigation-function convergence: 100 random starts, normalized
        // gradient descent, every run must enter the bubble without
        // touching an obstacle.
        let w = sphere_world();
        let target = Vector3::new(6.0, 2.0, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let mut runs = 0;
        while runs < 100 {
            let p0 = Vector3::new(
                rng.random_range(-9.0..9.0),
                rng.random_range(-9.0..9.0),
                rng.random_range(-9.0..9.0),
            );
            if !w.in_free_space(&p0) || (p0 - Vector3::zeros()).norm() > 9.5 {
                continue;
            }
            runs += 1;
            let mut p = p0;
            let mut reached = false;
            let mut min_clearance = f64::INFINITY;
            for _ in 0..20_000 {
                if goal_cost(&p, &target, w.bubble_radius) <= 0.0 {
                    reached = true;
                    break;
                }
                let g = grad_phi(&w, &p, &target).unwrap();
                let gn = g.norm();
                assert!(gn > 0.0);
                p -= g / gn * 0.02;
                for (i, ob) in w.obstacles.iter().enumerate() {
                    let Obstacle::Sphere { center, radius } = ob else { unreachable!() };
                    let clear = (p - Vector3::from(*center)).norm() - radius;
                    min_clearance = min_clearance.min(clear);
                    assert!(clear > 0.0, "collision with obstacle {i} from start {p0}");
                }
            }
            assert!(reached, "flow from {p0} did not reach the bubble");
            assert!(min_clearance > 0.0);
        }
    }
}
