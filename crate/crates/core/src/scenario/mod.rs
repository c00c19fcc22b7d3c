//! Scenario execution: configuration, the three-phase mission runner,
//! Monte Carlo batches, the bound sweep, and report emission.

mod batch;
mod config;
mod content;
mod report;
mod runner;

pub use batch::{bound_sweep, run_batch, BatchAggregate, BatchReport, BatchRunRow, SweepReport, SweepRow};
pub use config::{
    CameraConfig, ConfigError, EstimatorConfig, HallwayConfig, MapTransformConfig, OutputConfig,
    PhasePlan, RadiationConfig, ScenarioConfig, ScenarioMode, TargetConfig, TargetMotion,
    UavConfig, WorldContentConfig,
};
pub use content::generate_world_content;
pub use report::{DetectionSummary, EpochRecord, RunReport, RunSummary};
pub use runner::{
    build_rig, initial_filter_for, replay_log, run_scenario, run_scenario_to_dir,
    take_measurement_log, Pipeline, ScenarioError,
};
