//! Deterministic placement of features, landmarks, and occluder boxes.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::config::{ScenarioConfig, ScenarioMode};
use crate::nav::Obstacle;
use crate::sensors::{Aabb, WorldMap};

/// Samples a point on the boundary surface pulled inward by `inset`.
fn boundary_point(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng, inset: f64) -> Vector3<f64> {
    let b = &cfg.world.boundary;
    let c = b.center();
    let dir = random_dir(rng);
    let t = b.ray_boundary_distance(&dir);
    c + dir * (t - inset).max(0.1)
}

fn obstacle_point(ob: &Obstacle, rng: &mut ChaCha12Rng, offset: f64) -> Vector3<f64> {
    let c = ob.center();
    let dir = random_dir(rng);
    let t = ob.ray_boundary_distance(&dir);
    c + dir * (t + offset)
}

fn random_dir(rng: &mut ChaCha12Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn chase_surface_point(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Vector3<f64> {
    let (bmin, bmax) = cfg.world.boundary.aabb();
    let pick: f64 = rng.random();
    if pick < 0.45 {
        boundary_point(cfg, rng, 0.05)
    } else if pick < 0.70 {
        // Floor scatter.
        loop {
            let p = Vector3::new(
                rng.random_range(bmin.x * 0.95..bmax.x * 0.95),
                rng.random_range(bmin.y * 0.95..bmax.y * 0.95),
                0.05,
            );
            if cfg.world.in_free_space(&p) {
                return p;
            }
        }
    } else {
        let idx = rng.random_range(0..cfg.world.obstacles.len());
        obstacle_point(&cfg.world.obstacles[idx], rng, 0.05)
    }
}

fn hallway_surface_point(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Vector3<f64> {
    let h = &cfg.hallway;
    let x = rng.random_range(-5.0..h.length_m);
    let pick: f64 = rng.random();
    if pick < 0.6 {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        Vector3::new(x, side * h.half_width_m, rng.random_range(0.2..h.wall_height_m))
    } else {
        Vector3::new(x, rng.random_range(-h.half_width_m..h.half_width_m), 0.0)
    }
}

/// Generates the world content for a scenario, deterministically from
/// the given RNG stream. Occluder boxes are the obstacle bounding boxes
/// shrunk slightly so surface features are not occluded by their own
/// obstacle.
pub fn generate_world_content(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> WorldMap {
    let mut map = WorldMap::default();
    let sample = |cfg: &ScenarioConfig, rng: &mut ChaCha12Rng| match cfg.mode {
        ScenarioMode::Chase => chase_surface_point(cfg, rng),
        ScenarioMode::EstimationOnly => hallway_surface_point(cfg, rng),
    };
    for _ in 0..cfg.content.feature_count {
        map.features.push(sample(cfg, rng).into());
    }
    for _ in 0..cfg.content.landmark_count {
        map.landmarks.push(sample(cfg, rng).into());
    }
    if cfg.mode == ScenarioMode::Chase {
        for ob in &cfg.world.obstacles {
            let (min, max) = ob.aabb();
            let shrink = Vector3::repeat(0.01);
            map.occluders.push(Aabb::new(min + shrink, max - shrink));
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn content_is_deterministic_and_sized() {
        let cfg = ScenarioConfig::default_chase();
        let gen = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            generate_world_content(&cfg, &mut rng)
        };
        let a = gen(5);
        let b = gen(5);
        assert_eq!(a.features, b.features);
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.features.len(), 1550);
        assert_eq!(a.landmarks.len(), 160);
        assert_eq!(a.occluders.len(), 3);
    }

    #[test]
    fn hallway_features_line_the_corridor() {
        let cfg = ScenarioConfig::default_hallway();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let map = generate_world_content(&cfg, &mut rng);
        for f in &map.features {
            assert!(f[0] >= -5.0 && f[0] <= cfg.hallway.length_m);
            assert!(f[1].abs() <= cfg.hallway.half_width_m + 1e-9);
        }
        assert!(map.occluders.is_empty());
    }
}
