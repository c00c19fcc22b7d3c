//! Tightly-coupled visual-inertial localization and moving-target tracking,
//! navigation-function motion planning, geometric quadrotor control, and
//! Neyman-Pearson radiation detection, wired into a deterministic
//! desk-scale scenario simulator.
//!
//! # Frame conventions (held throughout)
//! - `M`: the inertial map frame. World geometry (obstacles, landmarks,
//!   ground truth) lives here. Gravity is `(0, 0, -9.81)` m/s².
//! - `G`: the estimator's global frame, initialized at filter startup.
//!   `M` and `G` share the gravity direction, so the transform between
//!   them has four degrees of freedom (yaw + translation).
//! - `I`: the IMU body frame; `C`: the camera frame (z forward, x right,
//!   y down).
//! - Rotation quaternions are JPL convention (scalar last). `q_I_G`
//!   ("I from G") is the rotation taking G-frame coordinates into the
//!   I frame; its matrix form satisfies `v_I = R(q_I_G) * v_G`.

pub mod estimator;
pub mod geom;
pub mod sensors;
pub mod linalg;
pub mod nav;
pub mod observability;
pub mod plant;
pub mod radiation;
pub mod scenario;
pub mod target;

pub use estimator::{FilterConfig, FilterState};
pub use geom::{SquircleShape, UnitQuat};
pub use sensors::{CameraRig, ImuSensorModel, WorldMap};
pub use nav::{NavParams, NavWorld, Obstacle};
pub use plant::{ControlGains, QuadrotorPlant};
pub use radiation::DetectionProblem;
pub use scenario::{RunReport, ScenarioConfig};
pub use target::TargetKinematics;

/// Standard gravity magnitude used by every module, m/s².
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in any z-up inertial frame (`M` or `G`), m/s².
pub fn gravity_vec() -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(0.0, 0.0, -GRAVITY)
}
