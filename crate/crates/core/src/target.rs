//! Order-n constant-derivative target kinematics: state transition,
//! closed-form discrete process noise, propagation, and the bearing
//! measurement-count rule for initialization.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TargetModelError {
    #[error("time step must be non-negative, got {0}")]
    NegativeDt(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
}

/// Constant-derivative target model of order `n`: the state stacks the
/// position and its first `n` derivatives (dimension `3(n+1)`), and white
/// noise of intensity `sigma_c` drives the `(n+1)`-th derivative.
#[derive(Debug, Clone)]
pub struct TargetKinematics {
    pub order: usize,
    /// Stacked state `[p; p⁽¹⁾; …; p⁽ⁿ⁾]`, units m, m/s, m/s², …
    pub state: DVector<f64>,
    /// Continuous noise intensity on the (n+1)-th derivative, per √s.
    pub sigma_c: f64,
}

impl TargetKinematics {
    pub fn new(order: usize, state: DVector<f64>, sigma_c: f64) -> Self {
        assert_eq!(state.len(), 3 * (order + 1), "state dimension must be 3(n+1)");
        Self { order, state, sigma_c }
    }

    pub fn dim(&self) -> usize {
        3 * (self.order + 1)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.state[0], self.state[1], self.state[2])
    }

    /// Propagates the mean through `dt`: `T' = A(dt) · T`.
    pub fn propagate(&self, dt: f64) -> Result<Self, TargetModelError> {
        let a = transition_matrix(self.order, dt)?;
        Ok(Self {
            order: self.order,
            state: &a * &self.state,
            sigma_c: self.sigma_c,
        })
    }
}

/// State transition matrix: block `(i, j)` is `Δt^(j-i)/(j-i)! · I₃` for
/// `j ≥ i`, zero below the diagonal.
pub fn transition_matrix(order: usize, dt: f64) -> Result<DMatrix<f64>, TargetModelError> {
    if dt < 0.0 {
        return Err(TargetModelError::NegativeDt(dt));
    }
    let nb = order + 1;
    let mut a = DMatrix::<f64>::zeros(3 * nb, 3 * nb);
    for i in 0..nb {
        for j in i..nb {
            let k = j - i;
            let coeff = dt.powi(k as i32) / factorial(k);
            for axis in 0..3 {
                a[(3 * i + axis, 3 * j + axis)] = coeff;
            }
        }
    }
    Ok(a)
}

/// Discrete process noise with zero-based block entries
/// `Q_ij = σ² Δt^(2N-i-j+1) / ((N-i)!(N-j)!(2N-i-j+1)) · I₃`.
pub fn process_noise(
    order: usize,
    dt: f64,
    sigma_c: f64,
) -> Result<DMatrix<f64>, TargetModelError> {
    if dt <= 0.0 {
        return Err(TargetModelError::NonPositiveDt(dt));
    }
    let n = order;
    let nb = order + 1;
    let s2 = sigma_c * sigma_c;
    let mut q = DMatrix::<f64>::zeros(3 * nb, 3 * nb);
    for i in 0..nb {
        for j in 0..nb {
            let pow = (2 * n + 1) as i32 - i as i32 - j as i32;
            let val = s2 * dt.powi(pow)
                / (factorial(n - i) * factorial(n - j) * pow as f64);
            for axis in 0..3 {
                q[(3 * i + axis, 3 * j + axis)] = val;
            }
        }
    }
    Ok(q)
}

/// Smallest number of bearing measurements `M` with `2M ≥ 3(n+1)`: a
/// constant-position target needs 2, constant velocity 3, constant
/// acceleration 5.
pub fn required_measurements(order: usize) -> usize {
    3 * (order + 1) / 2 + usize::from(3 * (order + 1) % 2 != 0)
}

/// Stacked linear system relating camera positions to the initial target
/// state and per-image depths:
/// `p_cam_j = -d_j·b_j + Σ_i Δt_j^i/i! · p_T0^(i)`.
///
/// Row block `j` of the returned `3M × (3(n+1) + M)` matrix holds
/// `[I, Δt_j I, Δt_j²/2 I, …, 0 … -b_j … 0]`; the unknown vector stacks
/// the initial target state followed by the depths.
pub fn stacked_bearing_system(
    order: usize,
    times_since_first: &[f64],
    bearings_global: &[Vector3<f64>],
) -> DMatrix<f64> {
    assert_eq!(times_since_first.len(), bearings_global.len());
    let m = times_since_first.len();
    let nb = order + 1;
    let cols = 3 * nb + m;
    let mut y = DMatrix::<f64>::zeros(3 * m, cols);
    for (j, (&dt, b)) in times_since_first.iter().zip(bearings_global).enumerate() {
        for i in 0..nb {
            let coeff = dt.powi(i as i32) / factorial(i);
            for axis in 0..3 {
                y[(3 * j + axis, 3 * i + axis)] = coeff;
            }
        }
        for axis in 0..3 {
            y[(3 * j + axis, 3 * nb + j)] = -b[axis];
        }
    }
    y
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Series matrix exponential; exact here because the continuous-time
    /// system matrix is nilpotent.
    fn expm_series(b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = b.nrows();
        let mut acc = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=30 {
            term = (&term * b) / k as f64;
            acc += &term;
            if term.norm() < 1e-300 {
                break;
            }
        }
        acc
    }

    /// Continuous-time system matrix of the constant-derivative model.
    fn ct_system(order: usize) -> DMatrix<f64> {
        let nb = order + 1;
        let mut b = DMatrix::<f64>::zeros(3 * nb, 3 * nb);
        for i in 0..order {
            for axis in 0..3 {
                b[(3 * i + axis, 3 * (i + 1) + axis)] = 1.0;
            }
        }
        b
    }

    /// Gauss-Legendre quadrature of `∫₀^Δt B(δ)B(δ)ᵀ dδ`; the integrand is
    /// polynomial of degree ≤ 2N so 16 nodes are exact to machine eps.
    fn quadrature_process_noise(order: usize, dt: f64, sigma: f64) -> DMatrix<f64> {
        let nb = order + 1;
        let bvec = |delta: f64| {
            let mut b = DMatrix::<f64>::zeros(3 * nb, 3);
            for i in 0..nb {
                let k = order - i;
                let coeff = delta.powi(k as i32) / factorial(k);
                for axis in 0..3 {
                    b[(3 * i + axis, axis)] = coeff;
                }
            }
            b
        };
        // 16-point Gauss-Legendre on [0, dt] via composite 4-point rule.
        let nodes4 = [
            -0.8611363115940526,
            -0.3399810435848563,
            0.3399810435848563,
            0.8611363115940526,
        ];
        let weights4 = [
            0.3478548451374538,
            0.6521451548625461,
            0.6521451548625461,
            0.3478548451374538,
        ];
        let mut q = DMatrix::<f64>::zeros(3 * nb, 3 * nb);
        let segments = 4;
        for s in 0..segments {
            let a = dt * s as f64 / segments as f64;
            let b_end = dt * (s + 1) as f64 / segments as f64;
            let half = 0.5 * (b_end - a);
            let mid = 0.5 * (a + b_end);
            for (x, w) in nodes4.iter().zip(weights4) {
                let delta = mid + half * x;
                let bm = bvec(delta);
                q += (&bm * bm.transpose()) * (w * half);
            }
        }
        q * (sigma * sigma)
    }

    #[test]
    fn transition_n1_matches_printed_blocks() {
        let a = transition_matrix(1, 0.1).unwrap();
        for axis in 0..3 {
            assert_eq!(a[(axis, axis)], 1.0);
            assert_eq!(a[(axis, 3 + axis)], 0.1);
            assert_eq!(a[(3 + axis, axis)], 0.0);
            assert_eq!(a[(3 + axis, 3 + axis)], 1.0);
        }
    }

    #[test]
    fn transition_zero_dt_is_identity() {
        for n in 0..=3 {
            let a = transition_matrix(n, 0.0).unwrap();
            assert!((a - DMatrix::identity(3 * (n + 1), 3 * (n + 1))).norm() < 1e-15);
        }
    }

    #[test]
    fn transition_matches_matrix_exponential() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for n in 0..=3 {
            for _ in 0..5 {
                let dt = rng.random_range(0.01..2.0);
                let a = transition_matrix(n, dt).unwrap();
                let e = expm_series(&(ct_system(n) * dt));
                assert!((a - e).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_rejects_negative_dt() {
        assert_eq!(
            transition_matrix(1, -0.1).unwrap_err(),
            TargetModelError::NegativeDt(-0.1)
        );
    }

    #[test]
    fn process_noise_n1_unit_blocks() {
        // Oracle: quadrature of ∫ B Bᵀ.
        let q = process_noise(1, 1.0, 1.0).unwrap();
        let oracle = quadrature_process_noise(1, 1.0, 1.0);
        assert!((&q - &oracle).amax() < 1e-12);
        for axis in 0..3 {
            assert!((q[(axis, axis)] - 1.0 / 3.0).abs() < 1e-15);
            assert!((q[(axis, 3 + axis)] - 0.5).abs() < 1e-15);
            assert!((q[(3 + axis, axis)] - 0.5).abs() < 1e-15);
            assert!((q[(3 + axis, 3 + axis)] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn process_noise_n0_is_scalar_integral() {
        let q = process_noise(0, 0.37, 2.0).unwrap();
        let expect = 4.0 * 0.37;
        assert!((q - DMatrix::identity(3, 3) * expect).norm() < 1e-14);
    }

    #[test]
    fn process_noise_matches_quadrature_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for n in 0..=3 {
            for _ in 0..5 {
                let dt = rng.random_range(0.05..1.5);
                let sigma = rng.random_range(0.1..3.0);
                let q = process_noise(n, dt, sigma).unwrap();
                let oracle = quadrature_process_noise(n, dt, sigma);
                assert!((&q - &oracle).amax() < 1e-10, "n={n} dt={dt}");
            }
        }
    }

    #[test]
    fn process_noise_composition_semigroup() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for n in 0..=3 {
            let d1 = rng.random_range(0.05..0.8);
            let d2 = rng.random_range(0.05..0.8);
            let sigma = 0.7;
            let q_total = process_noise(n, d1 + d2, sigma).unwrap();
            let a2 = transition_matrix(n, d2).unwrap();
            let composed = &a2 * process_noise(n, d1, sigma).unwrap() * a2.transpose()
                + process_noise(n, d2, sigma).unwrap();
            assert!((q_total - composed).amax() < 1e-9);
        }
    }

    #[test]
    fn process_noise_positive_definite() {
        for n in 0..=4 {
            let q = process_noise(n, 0.25, 0.5).unwrap();
            let eigs = q.symmetric_eigenvalues();
            assert!(eigs.iter().all(|&e| e > 0.0), "n={n}: {eigs:?}");
        }
    }

    #[test]
    fn propagate_constant_velocity() {
        let state = DVector::from_vec(vec![1.0, 2.0, 3.0, 0.5, -0.5, 0.1]);
        let t = TargetKinematics::new(1, state, 0.0);
        let t2 = t.propagate(2.0).unwrap();
        assert!((t2.position() - Vector3::new(2.0, 1.0, 3.2)).norm() < 1e-14);
        let unchanged = t.propagate(0.0).unwrap();
        assert!((unchanged.state - t.state).norm() < 1e-15);
    }

    #[test]
    fn propagate_half_steps_compose() {
        let state = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.3, 0.2, -0.4, 0.01, 0.0, 0.02]);
        let t = TargetKinematics::new(2, state, 0.0);
        let full = t.propagate(0.8).unwrap();
        let halves = t.propagate(0.4).unwrap().propagate(0.4).unwrap();
        assert!((full.state - halves.state).amax() < 1e-12);
    }

    #[test]
    fn measurement_counts_match_rule() {
        assert_eq!(required_measurements(0), 2);
        assert_eq!(required_measurements(1), 3);
        assert_eq!(required_measurements(2), 5);
        assert_eq!(required_measurements(3), 6);
    }

    #[test]
    fn stacked_system_rank_at_required_and_below() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for n in 0..=2 {
            for _ in 0..50 {
                let m = required_measurements(n);
                let make = |count: usize, rng: &mut ChaCha12Rng| {
                    let times: Vec<f64> =
                        (0..count).map(|i| i as f64 * 0.5 + rng.random_range(0.0..0.1)).collect();
                    let bearings: Vec<Vector3<f64>> = (0..count)
                        .map(|_| {
                            Vector3::new(
                                rng.random_range(-1.0..1.0),
                                rng.random_range(-1.0..1.0),
                                rng.random_range(0.2..1.0),
                            )
                            .normalize()
                        })
                        .collect();
                    stacked_bearing_system(n, &times, &bearings)
                };
                let y_full = make(m, &mut rng);
                let y_deficient = make(m - 1, &mut rng);
                let rank = |y: &DMatrix<f64>| {
                    let svd = y.clone().svd(false, false);
                    let smax = svd.singular_values.max();
                    svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
                };
                assert_eq!(rank(&y_full), y_full.ncols(), "n={n} should be full rank");
                assert!(rank(&y_deficient) < y_deficient.ncols(), "n={n} should be deficient");
            }
        }
    }
}
