//! Synthetic sensing: IMU streams, stereo bearing measurements to
//! features/landmarks/target, box occlusion, and measurement logs.

mod camera;
mod imu;
mod log;
mod world;

pub use camera::{project, CameraRig, PinholeError};
pub use imu::{ImuSample, ImuSensorModel};
pub use log::{LogError, LogRecord, MeasurementLog, PixelKind};
pub use world::{segment_hits_box, Aabb, RigidTruth, WorldMap};
