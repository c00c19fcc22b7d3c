//! Scenario configuration: a JSON document with strict schema checking
//! (unknown keys are rejected) and semantic validation with field-level
//! diagnostics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::SquircleShape;
use crate::nav::{NavParams, NavWorld, Obstacle};
use crate::plant::ControlGains;
use crate::radiation::DetectionProblem;
use crate::sensors::ImuSensorModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Full three-phase mission: hover, navigation-function chase, hover.
    Chase,
    /// Scripted-trajectory estimation validation (no planner/controller).
    EstimationOnly,
}

/// True target motion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMotion {
    /// Deterministic straight line at constant velocity.
    Line,
    /// Constant-velocity model driven by white acceleration noise of the
    /// filter's assumed intensity (used by consistency studies).
    NoisyConstantVelocity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Start position in the map frame, m.
    pub start: [f64; 3],
    /// Velocity in the map frame, m/s.
    pub velocity: [f64; 3],
    pub motion: TargetMotion,
    /// Constant-derivative model order assumed by the filter.
    pub order: usize,
    /// Filter process-noise intensity for the target.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub pitch_deg: f64,
    pub baseline_m: f64,
    pub focal_px: f64,
    pub pixel_std_px: f64,
    pub rate_hz: f64,
    pub fov_deg: f64,
    /// Deterministic cap on features processed per frame (nearest first).
    pub max_features_per_frame: usize,
    pub max_landmarks_per_frame: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            pitch_deg: 20.0,
            baseline_m: 0.11,
            focal_px: 460.0,
            pixel_std_px: 1.0,
            rate_hz: 20.0,
            fov_deg: 90.0,
            max_features_per_frame: 60,
            max_landmarks_per_frame: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldContentConfig {
    /// Unknown features scattered over workspace and obstacle surfaces.
    pub feature_count: usize,
    /// Known landmarks (map frame, exact positions).
    pub landmark_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavConfig {
    pub mass_kg: f64,
    pub inertia: [f64; 3],
    pub start: [f64; 3],
    pub hover_altitude_m: f64,
    pub gains: ControlGains,
}

impl Default for UavConfig {
    fn default() -> Self {
        Self {
            mass_kg: 1.5,
            inertia: [0.03, 0.03, 0.05],
            start: [-6.0, 1.0, 0.5],
            hover_altitude_m: 2.0,
            gains: ControlGains::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    /// Phase (i) duration; tracking must initialize within it.
    pub hover_s: f64,
    /// Margin from the workspace wall that defines "detection area
    /// crossed" for the true target (phase (ii) → (iii) trigger).
    pub detection_margin_m: f64,
    /// Total scenario duration, s.
    pub duration_s: f64,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self { hover_s: 4.0, detection_margin_m: 1.5, duration_s: 24.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub gating: bool,
    pub qr_compression: bool,
    pub max_clones: usize,
    /// Initial attitude/velocity std and bias prior stds used both to
    /// perturb the true init draw and as the filter's initial sigma.
    pub init_att_std: f64,
    pub init_vel_std: f64,
    pub init_pos_std: f64,
    pub init_bias_gyro_std: f64,
    pub init_bias_accel_std: f64,
    /// Draw the filter's initial error (and true biases) from the prior.
    pub perturb_init: bool,
    /// Bearing epochs collected before attempting target initialization.
    pub target_init_epochs: usize,
    /// Multiplier on the filter's assumed pixel noise (> 1 trades a
    /// little optimality for consistency margin).
    pub pixel_noise_inflation: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gating: true,
            qr_compression: false,
            max_clones: 8,
            init_att_std: 2e-3,
            init_vel_std: 2e-3,
            init_pos_std: 1e-4,
            init_bias_gyro_std: 2e-3,
            init_bias_accel_std: 2e-2,
            perturb_init: true,
            target_init_epochs: 6,
            pixel_noise_inflation: 1.2,
        }
    }
}

/// True 4-DOF transform between the estimator's startup frame G and the
/// map frame M (identity when no landmarks are used).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapTransformConfig {
    pub yaw_deg: f64,
    pub offset: [f64; 3],
}

impl Default for MapTransformConfig {
    fn default() -> Self {
        Self { yaw_deg: 0.0, offset: [0.0, 0.0, 0.0] }
    }
}

/// Scripted trajectory for estimation-only scenarios: a level sinusoid
/// `(s·t, amp·sin(2π·t/period), altitude)` with yaw along the path.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallwayConfig {
    pub speed_mps: f64,
    pub amplitude_m: f64,
    pub period_s: f64,
    pub altitude_m: f64,
    /// Corridor half width (walls at ±this), m.
    pub half_width_m: f64,
    pub wall_height_m: f64,
    pub length_m: f64,
}

impl Default for HallwayConfig {
    fn default() -> Self {
        Self {
            speed_mps: 1.0,
            amplitude_m: 2.0,
            period_s: 15.0,
            altitude_m: 1.5,
            half_width_m: 3.0,
            wall_height_m: 3.0,
            length_m: 70.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiationConfig {
    #[serde(flatten)]
    pub problem: DetectionProblem,
    /// Whether the simulated target actually carries the source.
    pub source_present: bool,
}

impl Default for RadiationConfig {
    fn default() -> Self {
        Self { problem: DetectionProblem::default(), source_present: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Dump the full measurement stream alongside the reports.
    pub measurement_log: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { measurement_log: false }
    }
}

/// Complete scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub mode: ScenarioMode,
    pub world: NavWorld,
    pub content: WorldContentConfig,
    pub target: TargetConfig,
    pub uav: UavConfig,
    pub imu: ImuSensorModel,
    pub camera: CameraConfig,
    pub estimator: EstimatorConfig,
    pub map_transform: MapTransformConfig,
    pub radiation: RadiationConfig,
    pub phases: PhasePlan,
    pub planner_rate_hz: f64,
    /// Only used in estimation-only mode.
    pub hallway: HallwayConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    /// The reference chase scenario: 20×20×5 m squircle workspace with
    /// two houses and a radio tower, a 1 m/s straight-line ground target,
    /// and the reference radiation constants.
    pub fn default_chase() -> Self {
        let world = NavWorld {
            boundary: Obstacle::Squircle(SquircleShape::new(
                Vector3::new(0.0, 0.0, 2.5),
                Vector3::new(10.0, 10.0, 2.5),
                0.95,
            )),
            obstacles: vec![
                Obstacle::Squircle(SquircleShape::new(
                    Vector3::new(5.0, 2.0, 1.5),
                    Vector3::new(2.0, 2.0, 1.45),
                    0.9,
                )),
                Obstacle::Squircle(SquircleShape::new(
                    Vector3::new(-5.0, 5.0, 1.5),
                    Vector3::new(1.5, 1.5, 1.45),
                    0.9,
                )),
                Obstacle::Squircle(SquircleShape::new(
                    Vector3::new(-3.0, -4.5, 2.0),
                    Vector3::new(0.6, 0.6, 1.95),
                    0.9,
                )),
            ],
            params: NavParams::default(),
            bubble_radius: 0.7,
        };
        Self {
            name: "chase_default".into(),
            seed: 1,
            mode: ScenarioMode::Chase,
            world,
            content: WorldContentConfig { feature_count: 1550, landmark_count: 160 },
            target: TargetConfig {
                start: [-8.5, -2.0, 0.3],
                velocity: [1.0, 0.0, 0.0],
                motion: TargetMotion::Line,
                order: 1,
                sigma: 0.2,
            },
            uav: UavConfig::default(),
            imu: ImuSensorModel::default(),
            camera: CameraConfig::default(),
            estimator: EstimatorConfig::default(),
            map_transform: MapTransformConfig { yaw_deg: 15.0, offset: [1.0, 2.0, 0.0] },
            radiation: RadiationConfig::default(),
            phases: PhasePlan::default(),
            planner_rate_hz: 100.0,
            hallway: HallwayConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// The hallway estimation replica: ~60 m sinusoid at 1 m/s with a
    /// constant-velocity target ahead; features only by default.
    pub fn default_hallway() -> Self {
        let mut c = Self::default_chase();
        c.name = "hallway_estimation".into();
        c.mode = ScenarioMode::EstimationOnly;
        c.content = WorldContentConfig { feature_count: 1550, landmark_count: 0 };
        c.camera.pitch_deg = 0.0;
        c.target = TargetConfig {
            start: [6.0, 0.0, 1.2],
            velocity: [1.0, 0.0, 0.0],
            motion: TargetMotion::Line,
            order: 1,
            sigma: 0.2,
        };
        c.map_transform = MapTransformConfig::default();
        c.phases = PhasePlan { hover_s: 0.0, detection_margin_m: 1.5, duration_s: 60.0 };
        c
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn imu_rate(&self) -> f64 {
        self.imu.rate_hz
    }

    /// IMU ticks per camera frame.
    pub fn camera_decimation(&self) -> u64 {
        (self.imu.rate_hz / self.camera.rate_hz).round() as u64
    }

    /// IMU ticks per planner update.
    pub fn planner_decimation(&self) -> u64 {
        (self.imu.rate_hz / self.planner_rate_hz).round() as u64
    }

    /// Semantic validation with field-path diagnostics.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if let Err(e) = self.world.validate() {
            errs.push(format!("world: {e}"));
        }
        if let Err(e) = self.uav.gains.validate() {
            errs.push(format!("uav.gains: {e}"));
        }
        for (name, rate) in [
            ("imu.rate_hz", self.imu.rate_hz),
            ("camera.rate_hz", self.camera.rate_hz),
            ("planner_rate_hz", self.planner_rate_hz),
        ] {
            if !(rate > 0.0) {
                errs.push(format!("{name}: must be positive, got {rate}"));
            }
        }
        if self.imu.rate_hz % self.camera.rate_hz != 0.0 {
            errs.push("camera.rate_hz: must divide imu.rate_hz".into());
        }
        if self.phases.hover_s < 0.0 || self.phases.duration_s <= self.phases.hover_s {
            errs.push("phases: require 0 <= hover_s < duration_s (hover -> chase -> hover)".into());
        }
        if self.target.order > 4 {
            errs.push("target.order: orders above 4 are not supported".into());
        }
        let t_start = Vector3::from(self.target.start);
        if self.mode == ScenarioMode::Chase {
            if !self.world.in_free_space(&t_start) {
                errs.push("target.start: not in free space".into());
            }
            // The scripted line must stay in free space until it crosses
            // the detection margin (after which the mission ends).
            let v = Vector3::from(self.target.velocity);
            let (bmin, bmax) = self.world.boundary.aabb();
            let m = self.phases.detection_margin_m;
            let mut t = 0.0;
            while t <= self.phases.duration_s {
                let p = t_start + v * t;
                let crossed = p.x < bmin.x + m
                    || p.x > bmax.x - m
                    || p.y < bmin.y + m
                    || p.y > bmax.y - m;
                if crossed {
                    break;
                }
                if self.world.in_free_space(&p) {
                    t += 0.25;
                } else {
                    errs.push(format!(
                        "target path leaves free space at t = {t:.2} s ({:.2}, {:.2}, {:.2})",
                        p.x, p.y, p.z
                    ));
                    break;
                }
            }
            let uav_start = Vector3::from(self.uav.start);
            if !self.world.in_free_space(&uav_start) {
                errs.push("uav.start: not in free space".into());
            }
            if self.content.landmark_count > 0 && self.content.landmark_count < 3 {
                errs.push("content.landmark_count: need 0 or at least 3".into());
            }
        }
        if !(self.radiation.problem.alpha > 0.0 && self.radiation.problem.alpha < 1.0) {
            errs.push("radiation.alpha: must lie in (0, 1)".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        ScenarioConfig::default_chase().validate().unwrap();
        ScenarioConfig::default_hallway().validate().unwrap();
    }

    #[test]
    fn json_roundtrip() {
        let c = ScenarioConfig::default_chase();
        let text = c.to_json();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ScenarioConfig::default_chase().to_json()).unwrap();
        v["bogus_key"] = serde_json::json!(1);
        let err = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn bad_rates_are_diagnosed() {
        let mut c = ScenarioConfig::default_chase();
        c.camera.rate_hz = 30.0; // does not divide 200
        match c.validate() {
            Err(ConfigError::Invalid(msgs)) => {
                assert!(msgs.iter().any(|m| m.contains("camera.rate_hz")));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn colliding_target_path_is_diagnosed() {
        let mut c = ScenarioConfig::default_chase();
        c.target.start = [-8.5, 2.0, 0.3]; // heads straight into house 1
        match c.validate() {
            Err(ConfigError::Invalid(msgs)) => {
                assert!(msgs.iter().any(|m| m.contains("target path")), "{msgs:?}");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }
}
