//! IMU measurement synthesis.
//!
//! Measurement model: `ω_m = ω + b_w + n_w`, `a_m = a_sf + b_a + n_a`
//! where `a_sf = Rᵀ(a - g)` is the true specific force in the body
//! frame. Biases evolve as continuous-time random walks; continuous
//! noise densities map to discrete samples as `σ_d = density/√dt` and
//! walks as `σ_walk·√dt`.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One timestamped IMU reading; `tick` counts IMU periods from scenario
/// start so that timestamps are exact rate multiples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub tick: u64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn time(&self, rate_hz: f64) -> f64 {
        self.tick as f64 / rate_hz
    }
}

/// Noise densities and current bias state of the simulated IMU.
///
/// The default densities are commodity-MEMS class values (the reference
/// system does not publish its own): gyro 1.7e-4 rad/s/√Hz, accel
/// 2e-3 m/s²/√Hz, bias walks 1e-5 and 3e-4.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSensorModel {
    pub gyro_noise_density: f64,
    pub accel_noise_density: f64,
    pub gyro_walk_density: f64,
    pub accel_walk_density: f64,
    pub rate_hz: f64,
    #[serde(default)]
    pub bias_gyro: [f64; 3],
    #[serde(default)]
    pub bias_accel: [f64; 3],
}

impl Default for ImuSensorModel {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1.7e-4,
            accel_noise_density: 2.0e-3,
            gyro_walk_density: 1.0e-5,
            accel_walk_density: 3.0e-4,
            rate_hz: 200.0,
            bias_gyro: [0.0; 3],
            bias_accel: [0.0; 3],
        }
    }
}

impl ImuSensorModel {
    pub fn noise_free(&self) -> bool {
        self.gyro_noise_density == 0.0
            && self.accel_noise_density == 0.0
            && self.gyro_walk_density == 0.0
            && self.accel_walk_density == 0.0
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Corrupts an ideal `(ω, specific force)` pair and advances the bias
    /// random walks by one period.
    pub fn sample<R: Rng>(
        &mut self,
        tick: u64,
        ideal_gyro: &Vector3<f64>,
        ideal_accel: &Vector3<f64>,
        rng: &mut R,
    ) -> ImuSample {
        let dt = self.dt();
        let randn3 = |rng: &mut R| {
            Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            )
        };
        let sigma_g = self.gyro_noise_density / dt.sqrt();
        let sigma_a = self.accel_noise_density / dt.sqrt();
        let gyro = ideal_gyro + Vector3::from(self.bias_gyro) + randn3(rng) * sigma_g;
        let accel = ideal_accel + Vector3::from(self.bias_accel) + randn3(rng) * sigma_a;
        let bw = Vector3::from(self.bias_gyro) + randn3(rng) * (self.gyro_walk_density * dt.sqrt());
        let ba =
            Vector3::from(self.bias_accel) + randn3(rng) * (self.accel_walk_density * dt.sqrt());
        self.bias_gyro = bw.into();
        self.bias_accel = ba.into();
        ImuSample { tick, gyro, accel }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::RigidTruth;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn stationary_reads_gravity_reaction() {
        let truth = RigidTruth {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            rotation: Matrix3::identity(),
            omega: Vector3::zeros(),
        };
        let (w, a) = truth.imu_ideal();
        let mut model = ImuSensorModel {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_walk_density: 0.0,
            accel_walk_density: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let s = model.sample(0, &w, &a, &mut rng);
        assert!((s.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-12);
        assert!(s.gyro.norm() < 1e-12);
    }

    #[test]
    fn identical_seeds_reproduce_stream() {
        let run = |seed: u64| {
            let mut model = ImuSensorModel::default();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..100)
                .map(|t| {
                    model.sample(t, &Vector3::new(0.1, 0.0, -0.2), &Vector3::new(0.0, 0.0, 9.81), &mut rng)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn bias_walk_variance_grows_linearly() {
        // Var(b after N steps) = N·dt·density² within 5 sigma over 500 seeds.
        let n_steps = 400;
        let density = 1.0e-3;
        let dt = 1.0 / 200.0;
        let mut final_biases = Vec::new();
        for seed in 0..500u64 {
            let mut model = ImuSensorModel {
                gyro_walk_density: density,
                gyro_noise_density: 0.0,
                accel_noise_density: 0.0,
                accel_walk_density: 0.0,
                ..Default::default()
            };
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            for t in 0..n_steps {
                model.sample(t, &Vector3::zeros(), &Vector3::zeros(), &mut rng);
            }
            final_biases.push(model.bias_gyro[0]);
        }
        let var: f64 =
            final_biases.iter().map(|b| b * b).sum::<f64>() / final_biases.len() as f64;
        let expected = n_steps as f64 * dt * density * density;
        // Sample variance of N gaussians: sd ≈ expected·√(2/N).
        let tol = 5.0 * expected * (2.0 / 500.0_f64).sqrt();
        assert!(
            (var - expected).abs() < tol,
            "var {var} vs expected {expected} (tol {tol})"
        );
    }
}
