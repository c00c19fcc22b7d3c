//! Monte Carlo batches and the missed-detection bound sweep.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::config::ScenarioConfig;
use super::report::RunReport;
use super::runner::{run_scenario, ScenarioError};
use crate::radiation::{perceived_rates, solve_detection, SampledSignal};

/// Compact per-run row of a batch report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRunRow {
    pub seed: u64,
    pub completed: bool,
    pub error: Option<String>,
    pub interception: bool,
    pub collisions: usize,
    pub rmse_robot: f64,
    pub rmse_target: f64,
    pub nees_robot_mean: f64,
    pub nees_target_mean: f64,
    pub steady_rel_dist_mean: Option<f64>,
    pub steady_rel_dist_err_mean: Option<f64>,
    pub min_obstacle_clearance: f64,
    pub decision_h1: Option<bool>,
    pub pm_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchAggregate {
    pub n_runs: usize,
    pub n_completed: usize,
    pub n_aborted: usize,
    pub interceptions: usize,
    pub collisions_total: usize,
    pub rmse_robot_mean: f64,
    pub rmse_robot_max: f64,
    pub rmse_target_mean: f64,
    pub nees_robot_mean: f64,
    pub nees_target_mean: f64,
    pub steady_rel_dist_mean: f64,
    pub steady_rel_dist_err_mean: f64,
    pub min_obstacle_clearance: f64,
    pub detections_h1: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<BatchRunRow>,
    pub aggregate: BatchAggregate,
}

/// Draws a collision-free hover start point for a randomized run.
fn random_start(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> [f64; 3] {
    let (bmin, bmax) = cfg.world.boundary.aabb();
    loop {
        let p = Vector3::new(
            rng.random_range(bmin.x + 2.0..bmax.x - 2.0),
            rng.random_range(bmin.y + 2.0..bmax.y - 2.0),
            rng.random_range(0.4..1.2),
        );
        if !cfg.world.in_free_space(&p) {
            continue;
        }
        // Keep a margin from every obstacle and from the target start.
        let clear = cfg.world.obstacles.iter().all(|ob| {
            let c = ob.center();
            let d = (p - c).norm();
            d > ob.bounding_radius() + 1.0
        });
        let away = (p - Vector3::from(cfg.target.start)).norm() > 2.0;
        if clear && away {
            return p.into();
        }
    }
}

fn row_from_report(seed: u64, result: &Result<RunReport, ScenarioError>) -> BatchRunRow {
    match result {
        Ok(r) => BatchRunRow {
            seed,
            completed: true,
            error: None,
            interception: r.summary.interception,
            collisions: r.summary.collisions,
            rmse_robot: r.summary.rmse_robot,
            rmse_target: r.summary.rmse_target,
            nees_robot_mean: r.summary.nees_robot_mean,
            nees_target_mean: r.summary.nees_target_mean,
            steady_rel_dist_mean: r.summary.steady_rel_dist_mean,
            steady_rel_dist_err_mean: r.summary.steady_rel_dist_err_mean,
            min_obstacle_clearance: r.summary.min_obstacle_clearance,
            decision_h1: r.summary.detection.as_ref().map(|d| d.decision_h1),
            pm_bound: r.summary.detection.as_ref().map(|d| d.pm_bound),
        },
        Err(e) => BatchRunRow {
            seed,
            completed: false,
            error: Some(e.to_string()),
            interception: false,
            collisions: 0,
            rmse_robot: f64::NAN,
            rmse_target: f64::NAN,
            nees_robot_mean: f64::NAN,
            nees_target_mean: f64::NAN,
            steady_rel_dist_mean: None,
            steady_rel_dist_err_mean: None,
            min_obstacle_clearance: f64::NAN,
            decision_h1: None,
            pm_bound: None,
        },
    }
}

/// Runs `n_runs` independent scenarios with seeds `seed_base + i`
/// (optionally with randomized start positions) and aggregates. A
/// single-run failure is recorded in its row, not fatal to the batch.
pub fn run_batch(
    cfg: &ScenarioConfig,
    n_runs: usize,
    seed_base: u64,
    randomize_starts: bool,
) -> BatchReport {
    let configs: Vec<ScenarioConfig> = (0..n_runs)
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = seed_base + i as u64;
            if randomize_starts {
                let mut rng = ChaCha12Rng::seed_from_u64(c.seed ^ 0x5354_4152);
                c.uav.start = random_start(&c, &mut rng);
            }
            c
        })
        .collect();
    let rows: Vec<BatchRunRow> = configs
        .par_iter()
        .map(|c| row_from_report(c.seed, &run_scenario(c)))
        .collect();

    let done: Vec<&BatchRunRow> = rows.iter().filter(|r| r.completed).collect();
    let mean = |f: &dyn Fn(&BatchRunRow) -> f64| {
        let vals: Vec<f64> = done.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let aggregate = BatchAggregate {
        n_runs,
        n_completed: done.len(),
        n_aborted: n_runs - done.len(),
        interceptions: done.iter().filter(|r| r.interception).count(),
        collisions_total: done.iter().map(|r| r.collisions).sum(),
        rmse_robot_mean: mean(&|r| r.rmse_robot),
        rmse_robot_max: done.iter().map(|r| r.rmse_robot).fold(0.0, f64::max),
        rmse_target_mean: mean(&|r| r.rmse_target),
        nees_robot_mean: mean(&|r| r.nees_robot_mean),
        nees_target_mean: mean(&|r| r.nees_target_mean),
        steady_rel_dist_mean: mean(&|r| r.steady_rel_dist_mean.unwrap_or(f64::NAN)),
        steady_rel_dist_err_mean: mean(&|r| r.steady_rel_dist_err_mean.unwrap_or(f64::NAN)),
        min_obstacle_clearance: done
            .iter()
            .map(|r| r.min_obstacle_clearance)
            .fold(f64::INFINITY, f64::min),
        detections_h1: done.iter().filter(|r| r.decision_h1 == Some(true)).count(),
    };
    BatchReport { rows, aggregate }
}

impl BatchReport {
    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "seed,completed,interception,collisions,rmse_robot,rmse_target,nees_robot,\
             nees_target,steady_rel_dist,steady_rel_dist_err,min_clearance,decision_h1,pm_bound\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.completed,
                r.interception,
                r.collisions,
                r.rmse_robot,
                r.rmse_target,
                r.nees_robot_mean,
                r.nees_target_mean,
                r.steady_rel_dist_mean.map(|v| v.to_string()).unwrap_or_else(|| "nan".into()),
                r.steady_rel_dist_err_mean
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "nan".into()),
                r.min_obstacle_clearance,
                r.decision_h1.map(|v| v.to_string()).unwrap_or_else(|| "nan".into()),
                r.pm_bound.map(|v| v.to_string()).unwrap_or_else(|| "nan".into()),
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("batch_summary.json"),
            serde_json::to_string_pretty(self).unwrap(),
        )?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        Ok(())
    }
}

/// One row of the missed-detection bound sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub bubble_radius: f64,
    pub source_activity: f64,
    pub exponent_p: f64,
    pub e_m: f64,
    /// exp(E_M) clipped to one; 1 marks an infeasible decision.
    pub pm_bound: f64,
    pub feasible: bool,
    pub steady_rel_dist: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Radii whose chase run failed outright.
    pub failed_radii: Vec<f64>,
}

/// Reruns the chase for each bubble radius and evaluates the
/// missed-detection bound for each source activity on the estimated
/// relative-distance trajectory of that chase.
pub fn bound_sweep(cfg: &ScenarioConfig, radii: &[f64], activities: &[f64]) -> SweepReport {
    let runs: Vec<(f64, Result<RunReport, ScenarioError>)> = radii
        .par_iter()
        .map(|&r| {
            let mut c = cfg.clone();
            c.world.bubble_radius = r;
            c.uav.gains.bubble_radius = r;
            (r, run_scenario(&c))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (radius, result) in &runs {
        let report = match result {
            Ok(r) => r,
            Err(_) => {
                failed.push(*radius);
                continue;
            }
        };
        // Estimated relative distance over the detection window of the
        // chase phase.
        let chase_start = report.summary.chase_start_t.unwrap_or(0.0);
        let horizon = cfg.radiation.problem.horizon;
        let trace: Vec<(f64, f64)> = report
            .epochs
            .iter()
            .filter(|e| e.phase == 2 && e.t <= chase_start + horizon)
            .filter_map(|e| e.rel_dist_est.map(|d| (e.t - chase_start, d)))
            .collect();
        if trace.len() < 4 {
            failed.push(*radius);
            continue;
        }
        let d_est = SampledSignal::new(
            trace.iter().map(|(t, _)| *t).collect(),
            trace.iter().map(|(_, d)| *d).collect(),
        );
        for &a in activities {
            let mut problem = cfg.radiation.problem.clone();
            problem.source_activity = a;
            let (_, mu) = perceived_rates(&d_est, &problem);
            match solve_detection(&mu, &problem.background, problem.alpha) {
                Ok(s) => rows.push(SweepRow {
                    bubble_radius: *radius,
                    source_activity: a,
                    exponent_p: s.p,
                    e_m: s.e_m,
                    pm_bound: s.pm_bound,
                    feasible: s.pm_bound < 1.0,
                    steady_rel_dist: report.summary.steady_rel_dist_mean,
                }),
                Err(_) => rows.push(SweepRow {
                    bubble_radius: *radius,
                    source_activity: a,
                    exponent_p: 1.0,
                    e_m: 0.0,
                    pm_bound: 1.0,
                    feasible: false,
                    steady_rel_dist: report.summary.steady_rel_dist_mean,
                }),
            }
        }
    }
    SweepReport { rows, failed_radii: failed }
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("bubble_radius,source_activity,exponent_p,e_m,pm_bound,steady_rel_dist\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.bubble_radius,
                r.source_activity,
                r.exponent_p,
                r.e_m,
                r.pm_bound,
                r.steady_rel_dist.map(|v| v.to_string()).unwrap_or_else(|| "nan".into()),
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), self.to_csv())?;
        std::fs::write(
            dir.join("sweep_summary.json"),
            serde_json::to_string_pretty(self).unwrap(),
        )?;
        Ok(())
    }
}
