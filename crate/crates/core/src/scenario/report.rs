//! Run reports: per-epoch time series (CSV) and the summary document
//! (JSON). All float formatting uses shortest-roundtrip encoding, so a
//! given report is byte-reproducible.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One camera-epoch record of truth, estimate, and 3σ bounds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub t: f64,
    /// 1 = hover, 2 = chase, 3 = final hover (0 for estimation-only).
    pub phase: u8,
    pub truth_p: [f64; 3],
    pub est_p: [f64; 3],
    /// 3σ bounds on the position components.
    pub sigma3_p: [f64; 3],
    pub truth_target: [f64; 3],
    pub est_target: Option<[f64; 3]>,
    pub sigma3_target: Option<[f64; 3]>,
    pub rel_dist_true: f64,
    pub rel_dist_est: Option<f64>,
    /// 6-DOF robot pose NEES.
    pub nees_pose: f64,
    /// 3-DOF target position NEES.
    pub nees_target: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionSummary {
    pub feasible: bool,
    pub exponent_p: f64,
    pub e_f: f64,
    pub e_m: f64,
    pub pm_bound: f64,
    pub gamma: f64,
    pub log_likelihood_ratio: f64,
    pub counts: usize,
    pub decision_h1: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub mode: String,
    /// Always "estimated": the planner never sees the truth state.
    pub planner_input: String,
    pub duration_s: f64,
    pub chase_start_t: Option<f64>,
    pub chase_end_t: Option<f64>,
    pub map_init_t: Option<f64>,
    pub target_init_t: Option<f64>,
    /// RMSE over the evaluation window (chase phase, excluding the first
    /// 2 s after target initialization).
    pub rmse_robot: f64,
    pub rmse_target: f64,
    pub final_robot_error: f64,
    pub final_target_error: f64,
    pub max_robot_error: f64,
    pub nees_robot_mean: f64,
    pub nees_target_mean: f64,
    pub steady_rel_dist_mean: Option<f64>,
    pub steady_rel_dist_err_mean: Option<f64>,
    pub min_true_target_distance: f64,
    pub interception: bool,
    pub collisions: usize,
    pub min_obstacle_clearance: f64,
    pub gate_rejections: u64,
    pub critical_point_flags: usize,
    pub saddle_perturbations: usize,
    pub msckf_tracks_used: usize,
    pub msckf_tracks_dropped: usize,
    pub max_nullspace_residual: f64,
    /// Smallest covariance eigenvalue seen at any epoch.
    pub min_cov_eigenvalue: f64,
    pub detection: Option<DetectionSummary>,
    pub events: Vec<String>,
}

/// Full product of one scenario run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub summary: RunSummary,
    pub epochs: Vec<EpochRecord>,
}

fn opt3(v: &Option<[f64; 3]>, i: usize) -> String {
    v.map(|x| format!("{}", x[i])).unwrap_or_else(|| "nan".into())
}

fn opt(v: &Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "nan".into())
}

impl RunReport {
    /// Plot-ready CSV time series, one row per camera epoch.
    pub fn timeseries_csv(&self) -> String {
        let mut out = String::from(
            "t,phase,truth_px,truth_py,truth_pz,est_px,est_py,est_pz,\
             sigma3_px,sigma3_py,sigma3_pz,truth_tx,truth_ty,truth_tz,\
             est_tx,est_ty,est_tz,sigma3_tx,sigma3_ty,sigma3_tz,\
             rel_dist_true,rel_dist_est,nees_pose,nees_target\n",
        );
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.t,
                e.phase,
                e.truth_p[0],
                e.truth_p[1],
                e.truth_p[2],
                e.est_p[0],
                e.est_p[1],
                e.est_p[2],
                e.sigma3_p[0],
                e.sigma3_p[1],
                e.sigma3_p[2],
                e.truth_target[0],
                e.truth_target[1],
                e.truth_target[2],
                opt3(&e.est_target, 0),
                opt3(&e.est_target, 1),
                opt3(&e.est_target, 2),
                opt3(&e.sigma3_target, 0),
                opt3(&e.sigma3_target, 1),
                opt3(&e.sigma3_target, 2),
                e.rel_dist_true,
                opt(&e.rel_dist_est),
                e.nees_pose,
                opt(&e.nees_target),
            )
            .unwrap();
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serialization cannot fail")
    }

    /// Writes `summary.json` and `timeseries.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let summary = dir.join("summary.json");
        let csv = dir.join("timeseries.csv");
        std::fs::write(&summary, self.summary_json())?;
        std::fs::write(&csv, self.timeseries_csv())?;
        Ok(vec![summary, csv])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_count_matches_epochs() {
        let report = RunReport {
            summary: RunSummary {
                name: "t".into(),
                seed: 0,
                mode: "chase".into(),
                planner_input: "estimated".into(),
                duration_s: 1.0,
                chase_start_t: None,
                chase_end_t: None,
                map_init_t: None,
                target_init_t: None,
                rmse_robot: 0.0,
                rmse_target: 0.0,
                final_robot_error: 0.0,
                final_target_error: 0.0,
                max_robot_error: 0.0,
                nees_robot_mean: 0.0,
                nees_target_mean: 0.0,
                steady_rel_dist_mean: None,
                steady_rel_dist_err_mean: None,
                min_true_target_distance: 0.0,
                interception: false,
                collisions: 0,
                min_obstacle_clearance: 0.0,
                gate_rejections: 0,
                critical_point_flags: 0,
                saddle_perturbations: 0,
                msckf_tracks_used: 0,
                msckf_tracks_dropped: 0,
                max_nullspace_residual: 0.0,
                min_cov_eigenvalue: 0.0,
                detection: None,
                events: vec![],
            },
            epochs: vec![EpochRecord {
                t: 0.05,
                phase: 1,
                truth_p: [0.0; 3],
                est_p: [0.0; 3],
                sigma3_p: [0.0; 3],
                truth_target: [0.0; 3],
                est_target: None,
                sigma3_target: None,
                rel_dist_true: 1.0,
                rel_dist_est: None,
                nees_pose: 0.0,
                nees_target: None,
            }],
        };
        let csv = report.timeseries_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.contains("nan"));
    }
}
