//! Rotation and quaternion algebra, error-state retractions, and squircle
//! geometry shared by every other module.

mod quat;
mod so3;
mod squircle;

pub use quat::UnitQuat;
pub use so3::{orthonormalize, rot_log, skew, vee};
pub use squircle::SquircleShape;
