//! The tightly-coupled error-state filter: IMU+target propagation,
//! stochastic cloning, MSCKF feature updates, prior-map landmark updates,
//! and delayed initialization of the map transform and the target.
//!
//! The filter is a single-owner state machine: one thread owns the
//! [`FilterState`] and feeds it measurements in time order.

mod init;
mod msckf;
mod propagation;
mod state;
mod update;

pub use init::{
    fit_yaw_translation, init_map_transform, init_target, solve_target_ls, LandmarkWindowObs,
    TargetInitObs,
};
pub use msckf::{
    msckf_update, observation_ray, triangulate, FeatureTrack, MsckfStats, TrackManager, TrackObs,
};
pub use propagation::{imu_step, propagate, propagate_imu_window, ImuPropagation, Matrix15};
pub use state::{
    EstimatorError, FilterConfig, FilterState, ImuMeanState, ImuNoiseParams, MapTransform,
    PoseClone,
};
pub use update::{
    ekf_update, landmark_h_row, landmark_jacobians, point_jacobians, projection_jacobian,
    target_jacobians, update_landmarks, update_target, LandmarkJacobians, LandmarkUpdateStats,
    PointJacobians, TargetJacobians, UpdateOutcome,
};
