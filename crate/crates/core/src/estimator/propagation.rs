//! Mean and covariance propagation.
//!
//! The mean integrates the estimate dynamics with RK4 across each IMU
//! interval (measurements linearly interpolated at the half step). The
//! error-state transition matrix Φ integrates the variational equation
//! `Φ̇ = F·Φ` through the same stages, so Φ is the exact Jacobian of the
//! discrete mean map to integrator order. The discrete noise uses the
//! trapezoidal continuous-to-discrete mapping
//! `Q_step = ½·dt·(Φ·N·Φᵀ + N)` with `N = G·Q_c·Gᵀ`.

use nalgebra::{SMatrix, Vector3, Vector4};

use super::state::{EstimatorError, FilterState, ImuMeanState, ImuNoiseParams};
use crate::geom::skew;
use crate::gravity_vec;
use crate::sensors::ImuSample;
use crate::target::{process_noise, transition_matrix};

pub type Matrix15 = SMatrix<f64, 15, 15>;

/// Accumulated propagation across an IMU window.
#[derive(Debug, Clone)]
pub struct ImuPropagation {
    pub mean: ImuMeanState,
    pub phi: Matrix15,
    pub q: Matrix15,
}

#[derive(Clone, Copy)]
struct MeanDeriv {
    q_dot: Vector4<f64>,
    v_dot: Vector3<f64>,
    p_dot: Vector3<f64>,
}

fn mean_derivative(m: &ImuMeanState, gyro: &Vector3<f64>, accel: &Vector3<f64>) -> MeanDeriv {
    let w_hat = gyro - m.bias_gyro;
    let a_hat = accel - m.bias_accel;
    MeanDeriv {
        q_dot: m.q_ig.derivative(&w_hat),
        v_dot: m.rot_ig().transpose() * a_hat + gravity_vec(),
        p_dot: m.velocity,
    }
}

/// Error-state Jacobian at the given mean and measurement.
fn f_matrix(m: &ImuMeanState, gyro: &Vector3<f64>, accel: &Vector3<f64>) -> Matrix15 {
    let w_hat = gyro - m.bias_gyro;
    let a_hat = accel - m.bias_accel;
    let rt = m.rot_ig().transpose();
    let mut f = Matrix15::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&w_hat)));
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-nalgebra::Matrix3::identity()));
    f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-rt * skew(&a_hat)));
    f.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-rt));
    f.fixed_view_mut::<3, 3>(12, 6)
        .copy_from(&nalgebra::Matrix3::identity());
    f
}

/// Continuous noise mapped through G: constant because `RᵀR = I`.
fn noise_matrix(noise: &ImuNoiseParams) -> Matrix15 {
    let mut n = Matrix15::zeros();
    let blocks = [
        noise.gyro_noise * noise.gyro_noise,
        noise.gyro_walk * noise.gyro_walk,
        noise.accel_noise * noise.accel_noise,
        noise.accel_walk * noise.accel_walk,
    ];
    for (b, s2) in blocks.iter().enumerate() {
        for k in 0..3 {
            n[(3 * b + k, 3 * b + k)] = *s2;
        }
    }
    n
}

fn advance(m: &ImuMeanState, d: &MeanDeriv, h: f64) -> ImuMeanState {
    ImuMeanState {
        q_ig: crate::geom::UnitQuat::from_vector4(m.q_ig.as_vector4() + d.q_dot * h),
        bias_gyro: m.bias_gyro,
        velocity: m.velocity + d.v_dot * h,
        bias_accel: m.bias_accel,
        position: m.position + d.p_dot * h,
    }
}

/// One RK4 step over `[t, t+dt]` given the boundary measurements; returns
/// the new mean and the step transition matrix.
pub fn imu_step(
    mean: &ImuMeanState,
    start: &ImuSample,
    end: &ImuSample,
    dt: f64,
) -> (ImuMeanState, Matrix15) {
    let mid_gyro = 0.5 * (start.gyro + end.gyro);
    let mid_accel = 0.5 * (start.accel + end.accel);

    let d1 = mean_derivative(mean, &start.gyro, &start.accel);
    let x2 = advance(mean, &d1, 0.5 * dt);
    let d2 = mean_derivative(&x2, &mid_gyro, &mid_accel);
    let x3 = advance(mean, &d2, 0.5 * dt);
    let d3 = mean_derivative(&x3, &mid_gyro, &mid_accel);
    let x4 = advance(mean, &d3, dt);
    let d4 = mean_derivative(&x4, &end.gyro, &end.accel);

    let mut next = ImuMeanState {
        q_ig: crate::geom::UnitQuat::from_vector4(
            mean.q_ig.as_vector4()
                + (d1.q_dot + d2.q_dot * 2.0 + d3.q_dot * 2.0 + d4.q_dot) * (dt / 6.0),
        ),
        bias_gyro: mean.bias_gyro,
        velocity: mean.velocity
            + (d1.v_dot + d2.v_dot * 2.0 + d3.v_dot * 2.0 + d4.v_dot) * (dt / 6.0),
        bias_accel: mean.bias_accel,
        position: mean.position
            + (d1.p_dot + d2.p_dot * 2.0 + d3.p_dot * 2.0 + d4.p_dot) * (dt / 6.0),
    };
    next.q_ig = next.q_ig.normalized();

    // Variational RK4 with F evaluated at the stage states.
    let f1 = f_matrix(mean, &start.gyro, &start.accel);
    let f2 = f_matrix(&x2, &mid_gyro, &mid_accel);
    let f3 = f_matrix(&x3, &mid_gyro, &mid_accel);
    let f4 = f_matrix(&x4, &end.gyro, &end.accel);
    let eye = Matrix15::identity();
    let k1 = f1;
    let k2 = f2 * (eye + k1 * (0.5 * dt));
    let k3 = f3 * (eye + k2 * (0.5 * dt));
    let k4 = f4 * (eye + k3 * dt);
    let phi = eye + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    (next, phi)
}

/// Propagates the IMU mean, transition matrix, and discrete noise across
/// a window of samples (consecutive pairs form the integration steps).
pub fn propagate_imu_window(
    mean: &ImuMeanState,
    samples: &[ImuSample],
    rate_hz: f64,
    noise: &ImuNoiseParams,
) -> Result<ImuPropagation, EstimatorError> {
    let mut out = ImuPropagation {
        mean: mean.clone(),
        phi: Matrix15::identity(),
        q: Matrix15::zeros(),
    };
    let n_mat = noise_matrix(noise);
    for pair in samples.windows(2) {
        if pair[1].tick <= pair[0].tick {
            return Err(EstimatorError::NonMonotoneTime);
        }
        let dt = (pair[1].tick - pair[0].tick) as f64 / rate_hz;
        let (next, phi) = imu_step(&out.mean, &pair[0], &pair[1], dt);
        let q_step = (phi * n_mat * phi.transpose() + n_mat) * (0.5 * dt);
        out.q = phi * out.q * phi.transpose() + q_step;
        out.phi = phi * out.phi;
        out.mean = next;
    }
    Ok(out)
}

/// Propagates the full filter state across an IMU window: mean via RK4,
/// target via its transition matrix, covariance via
/// `P ← Ψ·P·Ψᵀ + Q` with `Ψ = blockdiag(Φ, A, I)`.
pub fn propagate(
    state: &mut FilterState,
    samples: &[ImuSample],
    rate_hz: f64,
) -> Result<(), EstimatorError> {
    if samples.len() < 2 {
        return Ok(());
    }
    let prop = propagate_imu_window(&state.imu, samples, rate_hz, &state.config.imu_noise)?;
    let dt_total = (samples.last().unwrap().tick - samples[0].tick) as f64 / rate_hz;

    let t_dim = state.target_dim();
    let (a_target, q_target) = if let Some(t) = &state.target {
        let a = transition_matrix(t.order, dt_total).expect("dt >= 0");
        let q = process_noise(t.order, dt_total, t.sigma_c).expect("dt > 0");
        (Some(a), Some(q))
    } else {
        (None, None)
    };

    // Rows: leading blocks through Φ and A.
    let d = state.dim();
    let phi_dyn = nalgebra::DMatrix::from_fn(15, 15, |r, c| prop.phi[(r, c)]);
    let top = &phi_dyn * state.cov.rows(0, 15);
    state.cov.rows_mut(0, 15).copy_from(&top);
    if let Some(a) = &a_target {
        let mid = a * state.cov.rows(15, t_dim);
        state.cov.rows_mut(15, t_dim).copy_from(&mid);
    }
    // Columns.
    let left = state.cov.columns(0, 15) * phi_dyn.transpose();
    state.cov.columns_mut(0, 15).copy_from(&left);
    if let Some(a) = &a_target {
        let mid = state.cov.columns(15, t_dim) * a.transpose();
        state.cov.columns_mut(15, t_dim).copy_from(&mid);
    }
    // Additive noise on the propagated blocks only.
    for r in 0..15 {
        for c in 0..15 {
            state.cov[(r, c)] += prop.q[(r, c)];
        }
    }
    if let Some(q) = &q_target {
        for r in 0..t_dim {
            for c in 0..t_dim {
                state.cov[(15 + r, 15 + c)] += q[(r, c)];
            }
        }
    }
    crate::linalg::symmetrize(&mut state.cov);
    debug_assert_eq!(state.cov.nrows(), d);

    state.imu = prop.mean;
    if let Some(t) = state.target.take() {
        state.target = Some(t.propagate(dt_total).expect("dt >= 0"));
    }
    state.time = samples.last().unwrap().tick as f64 / rate_hz;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::state::FilterConfig;
    use crate::geom::UnitQuat;
    use crate::target::TargetKinematics;
    use nalgebra::DVector;

    fn test_mean() -> ImuMeanState {
        ImuMeanState {
            q_ig: UnitQuat::from_axis_angle(&Vector3::new(0.3, -0.5, 0.81).normalize(), 0.6),
            bias_gyro: Vector3::new(0.01, -0.005, 0.002),
            velocity: Vector3::new(0.5, -0.2, 0.1),
            bias_accel: Vector3::new(0.05, 0.02, -0.03),
            position: Vector3::new(1.0, 2.0, 3.0),
        }
    }

    fn wiggly_window(n: usize) -> Vec<ImuSample> {
        (0..n as u64)
            .map(|t| {
                let s = t as f64 * 0.005;
                ImuSample {
                    tick: t,
                    gyro: Vector3::new(0.3 * (2.0 * s).sin(), -0.2, 0.5 * s.cos()),
                    accel: Vector3::new(0.5, 9.6 + 0.3 * (3.0 * s).sin(), 1.0 * s.cos()),
                }
            })
            .collect()
    }

    #[test]
    fn phi_matches_finite_difference_of_propagation_map() {
        let mean = test_mean();
        let window = wiggly_window(11);
        let noise = ImuNoiseParams::default();
        let prop = propagate_imu_window(&mean, &window, 200.0, &noise).unwrap();

        // Finite differences through boxplus on each of the 15 error dims.
        let mut state = FilterState::new(mean.clone(), FilterConfig::default(), 0.0);
        let eps = 1e-6;
        for col in 0..15 {
            let mut sp = state.clone();
            let mut sm = state.clone();
            let mut d = DVector::zeros(15);
            d[col] = eps;
            sp.boxplus(&d).unwrap();
            d[col] = -eps;
            sm.boxplus(&d).unwrap();
            let fp = propagate_imu_window(&sp.imu, &window, 200.0, &noise).unwrap();
            let fm = propagate_imu_window(&sm.imu, &window, 200.0, &noise).unwrap();
            let sp_out = FilterState::new(fp.mean, FilterConfig::default(), 0.0);
            let sm_out = FilterState::new(fm.mean, FilterConfig::default(), 0.0);
            let fd = sp_out.boxminus(&sm_out) / (2.0 * eps);
            for row in 0..15 {
                let err = (fd[row] - prop.phi[(row, col)]).abs();
                let scale = prop.phi.norm();
                assert!(
                    err <= 1e-5 * scale.max(1.0),
                    "phi({row},{col}): fd {} vs {}",
                    fd[row],
                    prop.phi[(row, col)]
                );
            }
        }
        let _ = state.boxplus(&DVector::zeros(15));
    }

    #[test]
    fn stationary_gravity_only_does_not_drift() {
        let mean = ImuMeanState {
            q_ig: UnitQuat::identity(),
            bias_gyro: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            position: Vector3::new(1.0, -2.0, 0.5),
        };
        let samples: Vec<ImuSample> = (0..=200u64)
            .map(|t| ImuSample {
                tick: t,
                gyro: Vector3::zeros(),
                accel: Vector3::new(0.0, 0.0, 9.81),
            })
            .collect();
        let prop =
            propagate_imu_window(&mean, &samples, 200.0, &ImuNoiseParams::default()).unwrap();
        assert!((prop.mean.position - mean.position).norm() <= 1e-9);
        assert!(prop.mean.velocity.norm() <= 1e-9);
    }

    #[test]
    fn zero_noise_keeps_static_blocks_and_grows_target() {
        let mut state = FilterState::new(test_mean(), FilterConfig::default(), 0.0);
        state.config.imu_noise =
            ImuNoiseParams { gyro_noise: 0.0, accel_noise: 0.0, gyro_walk: 0.0, accel_walk: 0.0 };
        state.target = Some(TargetKinematics::new(
            1,
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.2, 0.0, 0.0]),
            0.3,
        ));
        state.cov = nalgebra::DMatrix::zeros(21, 21);
        state.augment_clone(0);
        state.map = Some(super::super::state::MapTransform {
            yaw: 0.1,
            p_m_in_g: Vector3::zeros(),
        });
        let n = state.cov.nrows();
        let mut cov = nalgebra::DMatrix::zeros(n + 4, n + 4);
        cov.view_mut((0, 0), (n, n)).copy_from(&state.cov);
        state.cov = cov;

        let window = wiggly_window(5);
        propagate(&mut state, &window, 200.0).unwrap();
        // With zero initial covariance and zero IMU noise, only the target
        // block picks up process noise.
        let t_off = 15;
        for r in 0..state.dim() {
            for c in 0..state.dim() {
                let in_target = (t_off..t_off + 6).contains(&r) && (t_off..t_off + 6).contains(&c);
                if !in_target {
                    assert!(
                        state.cov[(r, c)].abs() < 1e-15,
                        "({r},{c}) = {}",
                        state.cov[(r, c)]
                    );
                }
            }
        }
        let q_expected = process_noise(1, 4.0 / 200.0, 0.3).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert!((state.cov[(t_off + r, t_off + c)] - q_expected[(r, c)]).abs() < 1e-12);
            }
        }
        // Constant-velocity target advanced by v*dt.
        let t = state.target.as_ref().unwrap();
        assert!((t.position() - Vector3::new(1.0 + 0.2 * 0.02, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_monotone_time() {
        let mean = test_mean();
        let mut samples = wiggly_window(3);
        samples[2].tick = samples[1].tick;
        assert!(matches!(
            propagate_imu_window(&mean, &samples, 200.0, &ImuNoiseParams::default()),
            Err(EstimatorError::NonMonotoneTime)
        ));
    }
}
