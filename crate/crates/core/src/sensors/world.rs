//! World content visible to the cameras and the occlusion test.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Axis-aligned occluder box, m.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min: min.into(), max: max.into() }
    }
}

/// Slab test: does the open segment `a → b` pass through the box?
///
/// The parameter range is trimmed at both ends so that a bearing ray is
/// not occluded by the surface its endpoint sits on.
pub fn segment_hits_box(a: &Vector3<f64>, b: &Vector3<f64>, aabb: &Aabb) -> bool {
    let dir = b - a;
    let mut t0 = 1e-6_f64;
    let mut t1 = 1.0 - 1e-3_f64;
    for axis in 0..3 {
        let lo = aabb.min[axis];
        let hi = aabb.max[axis];
        if dir[axis].abs() < 1e-15 {
            if a[axis] < lo || a[axis] > hi {
                return false;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (mut ta, mut tb) = ((lo - a[axis]) * inv, (hi - a[axis]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Unknown features and known landmarks (both in the map frame) plus the
/// occluder boxes approximating the obstacles.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldMap {
    /// Unknown feature positions, m (map frame).
    pub features: Vec<[f64; 3]>,
    /// Known landmark positions, m (map frame, exact by assumption).
    pub landmarks: Vec<[f64; 3]>,
    pub occluders: Vec<Aabb>,
}

impl WorldMap {
    pub fn feature(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.features[i])
    }

    pub fn landmark(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.landmarks[i])
    }

    pub fn occluded(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
        self.occluders.iter().any(|b| segment_hits_box(from, to, b))
    }
}

/// Instantaneous rigid-body truth used to drive the sensor models:
/// world-frame kinematics plus body rates.
#[derive(Debug, Clone, Copy)]
pub struct RigidTruth {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Angular velocity in the body frame, rad/s.
    pub omega: Vector3<f64>,
}

impl RigidTruth {
    /// Ideal gyro and specific-force readings: `(ω, Rᵀ(a - g))`.
    pub fn imu_ideal(&self) -> (Vector3<f64>, Vector3<f64>) {
        let a_body = self.rotation.transpose() * (self.acceleration - crate::gravity_vec());
        (self.omega, a_body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_boxes_means_visible() {
        let map = WorldMap::default();
        assert!(!map.occluded(&Vector3::zeros(), &Vector3::new(5.0, 0.0, 0.0)));
    }

    #[test]
    fn box_between_blocks() {
        let b = Aabb::new(Vector3::new(1.0, -1.0, -1.0), Vector3::new(2.0, 1.0, 1.0));
        assert!(segment_hits_box(&Vector3::zeros(), &Vector3::new(5.0, 0.0, 0.0), &b));
        assert!(!segment_hits_box(&Vector3::zeros(), &Vector3::new(0.0, 5.0, 0.0), &b));
    }

    #[test]
    fn endpoint_inside_box_is_occluded() {
        // Enumerated against the slab parameter range: a point strictly
        // inside the box intersects at t < 1 - 1e-3.
        let b = Aabb::new(Vector3::new(1.0, -1.0, -1.0), Vector3::new(3.0, 1.0, 1.0));
        assert!(segment_hits_box(&Vector3::zeros(), &Vector3::new(2.0, 0.0, 0.0), &b));
    }

    #[test]
    fn point_on_box_face_is_not_self_occluded() {
        let b = Aabb::new(Vector3::new(1.0, -1.0, -1.0), Vector3::new(3.0, 1.0, 1.0));
        // Feature sits on the near face; the trimmed segment must miss.
        assert!(!segment_hits_box(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), &b));
    }
}
