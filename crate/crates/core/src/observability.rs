//! Numerical observability analysis of the robot+target system.
//!
//! The observability matrix is built from the estimator's own transition
//! matrices along a simulated generic trajectory, with measurement
//! Jacobians evaluated at the true states (ideal-EKF setting): row block
//! `k` is `H_k · Ψ(k, 1)`. The analytic nullspace candidates are then
//! verified against it numerically.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimator::{point_jacobians, propagate_imu_window, ImuMeanState, ImuNoiseParams};
use crate::geom::{skew, UnitQuat};
use crate::gravity_vec;
use crate::linalg::left_nullspace;
use crate::sensors::{CameraRig, ImuSample};
use crate::target::transition_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    /// Bearings to the moving target only.
    TargetOnly,
    /// Target bearings plus static-feature bearings (features
    /// marginalized through the nullspace projection).
    Mixed,
}

/// Scenario for one observability run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityProblem {
    /// Number of imaging epochs K (≥ 10 for a meaningful rank).
    pub epochs: usize,
    /// Target model order n.
    pub order: usize,
    pub mode: MeasurementMode,
}

impl Default for ObservabilityProblem {
    fn default() -> Self {
        Self { epochs: 20, order: 1, mode: MeasurementMode::TargetOnly }
    }
}

/// Results of one run: measured rank/nullity and the residuals of the
/// analytic nullspace directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub mode: MeasurementMode,
    pub order: usize,
    pub epochs: usize,
    pub state_dim: usize,
    pub rank: usize,
    pub nullity: usize,
    pub matrix_norm: f64,
    /// ‖M·N_i‖ for N1 (3 cols), N2 (1 col), N3 (3 cols, order ≥ 1).
    pub residual_n1: f64,
    pub residual_n2: f64,
    pub residual_n3: Option<f64>,
    /// Dimension of span{N1, N2, N3}.
    pub analytic_span: usize,
}

/// True robot and target state at one imaging epoch.
pub struct Epoch {
    pub imu: ImuMeanState,
    pub target: DVector<f64>,
}

/// Generic excitation trajectory: the truth is defined as the exact
/// integral of analytic body-rate and specific-force profiles, so the
/// accumulated Φ is the exact linearization of the flow.
fn simulate_truth(problem: &ObservabilityProblem, cam_dt: f64) -> (Vec<Epoch>, Vec<DMatrix<f64>>) {
    let imu_rate = 200.0;
    let steps_per_epoch = (cam_dt * imu_rate).round() as u64;
    let gyro = |t: f64| {
        Vector3::new(
            0.35 * (1.3 * t).sin(),
            0.30 * (0.9 * t + 0.4).cos(),
            0.40 * (0.7 * t).sin(),
        )
    };
    let accel = |t: f64| {
        Vector3::new(
            0.6 * (1.1 * t).sin(),
            0.5 * (0.8 * t + 1.0).cos(),
            9.81 + 0.4 * (0.6 * t).sin(),
        )
    };
    let mut imu = ImuMeanState {
        q_ig: UnitQuat::from_axis_angle(&Vector3::new(0.1, 0.2, 0.975).normalize(), 0.2),
        bias_gyro: Vector3::zeros(),
        velocity: Vector3::new(0.3, -0.1, 0.05),
        bias_accel: Vector3::zeros(),
        position: Vector3::zeros(),
    };
    let t_dim = 3 * (problem.order + 1);
    let mut target = DVector::zeros(t_dim);
    target[0] = 5.0;
    target[1] = 0.5;
    target[2] = 0.3;
    if problem.order >= 1 {
        target[3] = 0.25;
        target[4] = -0.15;
    }
    if problem.order >= 2 {
        target[6] = 0.03;
        target[7] = 0.02;
    }
    let noise = ImuNoiseParams { gyro_noise: 0.0, accel_noise: 0.0, gyro_walk: 0.0, accel_walk: 0.0 };
    let a_epoch = transition_matrix(problem.order, cam_dt).unwrap();

    let mut epochs = vec![Epoch { imu: imu.clone(), target: target.clone() }];
    let mut psis = Vec::new();
    for k in 0..(problem.epochs - 1) {
        let t0 = k as f64 * cam_dt;
        let samples: Vec<ImuSample> = (0..=steps_per_epoch)
            .map(|s| {
                let tick = k as u64 * steps_per_epoch + s;
                let t = t0 + s as f64 / imu_rate;
                ImuSample { tick, gyro: gyro(t), accel: accel(t) }
            })
            .collect();
        let prop = propagate_imu_window(&imu, &samples, imu_rate, &noise).unwrap();
        imu = prop.mean;
        target = &a_epoch * &target;
        let d = 15 + t_dim;
        let mut psi = DMatrix::zeros(d, d);
        for r in 0..15 {
            for c in 0..15 {
                psi[(r, c)] = prop.phi[(r, c)];
            }
        }
        psi.view_mut((15, 15), (t_dim, t_dim)).copy_from(&a_epoch);
        psis.push(psi);
        epochs.push(Epoch { imu: imu.clone(), target: target.clone() });
    }
    (epochs, psis)
}

fn target_rows(rig: &CameraRig, e: &Epoch, t_dim: usize) -> DMatrix<f64> {
    let d = 15 + t_dim;
    let pos = Vector3::new(e.target[0], e.target[1], e.target[2]);
    let pj = point_jacobians(rig, 0, &e.imu.q_ig, &e.imu.position, &pos)
        .expect("target must stay in front of the camera on this trajectory");
    let mut h = DMatrix::zeros(2, d);
    h.view_mut((0, 0), (2, 3)).copy_from(&pj.h_theta);
    h.view_mut((0, 12), (2, 3)).copy_from(&pj.h_p);
    h.view_mut((0, 15), (2, 3)).copy_from(&pj.h_point);
    h
}

/// Builds the stacked observability matrix `[H_k · Ψ(k,1)]`.
pub fn build_observability_matrix(
    problem: &ObservabilityProblem,
    rig: &CameraRig,
) -> (DMatrix<f64>, Vec<Epoch>) {
    let cam_dt = 0.25;
    let (epochs, psis) = simulate_truth(problem, cam_dt);
    let t_dim = 3 * (problem.order + 1);
    let d = 15 + t_dim;

    let mut psi_prod = vec![DMatrix::<f64>::identity(d, d)];
    for psi in &psis {
        let last = psi_prod.last().unwrap();
        psi_prod.push(psi * last);
    }

    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    for (k, e) in epochs.iter().enumerate() {
        blocks.push(target_rows(rig, e, t_dim) * &psi_prod[k]);
    }
    if problem.mode == MeasurementMode::Mixed {
        // Static features scattered ahead of the path; their position
        // error is projected out exactly as in the MSCKF update.
        let features = [
            Vector3::new(7.0, 1.5, 0.8),
            Vector3::new(8.0, -1.0, -0.4),
            Vector3::new(7.5, 2.0, -0.8),
            Vector3::new(9.0, 0.0, 1.2),
            Vector3::new(7.0, -2.0, 0.3),
            Vector3::new(8.5, 1.0, -1.0),
        ];
        for f in &features {
            let m = epochs.len();
            let mut h_rows = DMatrix::zeros(2 * m, d);
            let mut h_f = DMatrix::zeros(2 * m, 3);
            for (k, e) in epochs.iter().enumerate() {
                let pj = point_jacobians(rig, 0, &e.imu.q_ig, &e.imu.position, f)
                    .expect("feature must stay in front of the camera");
                let mut h = DMatrix::zeros(2, d);
                h.view_mut((0, 0), (2, 3)).copy_from(&pj.h_theta);
                h.view_mut((0, 12), (2, 3)).copy_from(&pj.h_p);
                h_rows.view_mut((2 * k, 0), (2, d)).copy_from(&(h * &psi_prod[k]));
                h_f.view_mut((2 * k, 0), (2, 3)).copy_from(&pj.h_point);
            }
            let q2 = left_nullspace(&h_f);
            blocks.push(q2.transpose() * h_rows);
        }
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(rows, d);
    let mut at = 0;
    for b in &blocks {
        m.view_mut((at, 0), (b.nrows(), d)).copy_from(b);
        at += b.nrows();
    }
    (m, epochs)
}

/// Analytic unobservable direction candidates at the initial state:
/// joint translation (N1, 3 cols), rotation about gravity (N2, 1 col),
/// and joint initial velocity (N3, 3 cols, target order ≥ 1).
pub fn nullspace_directions(
    initial: &ImuMeanState,
    target0: &DVector<f64>,
    order: usize,
) -> (DMatrix<f64>, DVector<f64>, Option<DMatrix<f64>>) {
    let t_dim = 3 * (order + 1);
    let d = 15 + t_dim;
    let g = gravity_vec();

    let mut n1 = DMatrix::zeros(d, 3);
    for k in 0..3 {
        n1[(12 + k, k)] = 1.0; // robot position
        n1[(15 + k, k)] = 1.0; // target position
    }

    let mut n2 = DVector::zeros(d);
    let r1g = initial.rot_ig() * g;
    let vg = -skew(&initial.velocity) * g;
    let pg = -skew(&initial.position) * g;
    for k in 0..3 {
        n2[k] = r1g[k];
        n2[6 + k] = vg[k];
        n2[12 + k] = pg[k];
    }
    for i in 0..=order {
        let block = Vector3::new(target0[3 * i], target0[3 * i + 1], target0[3 * i + 2]);
        let rotated = -skew(&block) * g;
        for k in 0..3 {
            n2[15 + 3 * i + k] = rotated[k];
        }
    }

    let n3 = if order >= 1 {
        let mut n3 = DMatrix::zeros(d, 3);
        for k in 0..3 {
            n3[(6 + k, k)] = 1.0; // robot velocity
            n3[(18 + k, k)] = 1.0; // target first derivative
        }
        Some(n3)
    } else {
        None
    };
    (n1, n2, n3)
}

/// Runs the full analysis and verification.
pub fn run_observability(problem: &ObservabilityProblem) -> ObservabilityReport {
    let rig = CameraRig::default();
    let (m, epochs) = build_observability_matrix(problem, &rig);
    let t_dim = 3 * (problem.order + 1);
    let d = 15 + t_dim;
    let m_norm = m.norm();

    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-8 * smax).count();
    let nullity = d - rank;

    let (n1, n2, n3) = nullspace_directions(&epochs[0].imu, &epochs[0].target, problem.order);
    let residual_n1 = (&m * &n1).norm();
    let residual_n2 = (&m * &n2).norm();
    let residual_n3 = n3.as_ref().map(|n| (&m * n).norm());

    // Dimension of the analytic span.
    let cols = 3 + 1 + if n3.is_some() { 3 } else { 0 };
    let mut span = DMatrix::zeros(d, cols);
    span.view_mut((0, 0), (d, 3)).copy_from(&n1);
    span.view_mut((0, 3), (d, 1)).copy_from(&n2);
    if let Some(n3) = &n3 {
        span.view_mut((0, 4), (d, 3)).copy_from(n3);
    }
    let svd_span = span.svd(false, false);
    let span_max = svd_span.singular_values.max();
    let analytic_span = svd_span
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * span_max)
        .count();

    ObservabilityReport {
        mode: problem.mode,
        order: problem.order,
        epochs: problem.epochs,
        state_dim: d,
        rank,
        nullity,
        matrix_norm: m_norm,
        residual_n1,
        residual_n2,
        residual_n3,
        analytic_span,
    }
}

impl ObservabilityReport {
    /// Plain-text report block, one run per call.
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            MeasurementMode::TargetOnly => "target-only",
            MeasurementMode::Mixed => "features+target",
        };
        let n3 = self
            .residual_n3
            .map(|r| format!("{r:.3e}"))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "mode={mode} order={} epochs={} dim={} rank={} nullity={} span={} |M|={:.3e} \
             |M N1|={:.3e} |M N2|={:.3e} |M N3|={n3}\n",
            self.order,
            self.epochs,
            self.state_dim,
            self.rank,
            self.nullity,
            self.analytic_span,
            self.matrix_norm,
            self.residual_n1,
            self.residual_n2,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_epoch_matrix_is_h1() {
        let problem = ObservabilityProblem { epochs: 1, order: 1, mode: MeasurementMode::TargetOnly };
        let rig = CameraRig::default();
        let (m, epochs) = build_observability_matrix(&problem, &rig);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 15 + 6);
        let h1 = target_rows(&rig, &epochs[0], 6);
        assert!((m - h1).norm() < 1e-15);
    }

    #[test]
    fn column_count_tracks_order() {
        for order in 0..=2 {
            let problem =
                ObservabilityProblem { epochs: 3, order, mode: MeasurementMode::TargetOnly };
            let (m, _) = build_observability_matrix(&problem, &CameraRig::default());
            assert_eq!(m.ncols(), 15 + 3 * (order + 1));
        }
    }

    #[test]
    fn target_only_nullspace_verified_for_orders() {
        for order in 0..=2 {
            let problem = ObservabilityProblem {
                epochs: 20,
                order,
                mode: MeasurementMode::TargetOnly,
            };
            let r = run_observability(&problem);
            let tol = 1e-6 * r.matrix_norm;
            assert!(r.residual_n1 <= tol, "order {order}: N1 {} vs {tol}", r.residual_n1);
            assert!(r.residual_n2 <= tol, "order {order}: N2 {}", r.residual_n2);
            if let Some(n3) = r.residual_n3 {
                assert!(n3 <= tol, "order {order}: N3 {n3}");
            }
            let expected_span = if order >= 1 { 7 } else { 4 };
            assert_eq!(r.analytic_span, expected_span, "order {order}");
            // Measured nullity. For order 2 the lab consistently finds two
            // directions beyond span{N1,N2,N3}: tilting the whole system
            // about a horizontal axis leaves the bearings unchanged once
            // the gravity mismatch (a constant apparent acceleration) is
            // absorbed by the target's acceleration state, so the full
            // 3-DOF rotation gauge joins the nullspace.
            let expected_nullity = match order {
                0 => 4,
                1 => 7,
                _ => 9,
            };
            assert_eq!(r.nullity, expected_nullity, "order {order}: nullity");
        }
    }

    #[test]
    fn mixed_mode_reduces_nullity_to_four() {
        let problem =
            ObservabilityProblem { epochs: 20, order: 1, mode: MeasurementMode::Mixed };
        let r = run_observability(&problem);
        let tol = 1e-6 * r.matrix_norm;
        assert!(r.residual_n1 <= tol);
        assert!(r.residual_n2 <= tol);
        // N3 must leave the nullspace once features pin the velocity.
        assert!(r.residual_n3.unwrap() > 100.0 * tol, "N3 = {:?}", r.residual_n3);
        assert_eq!(r.nullity, 4);
    }
}
