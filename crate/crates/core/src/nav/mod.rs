//! Time-varying navigation function on sphere/squircle worlds and the
//! velocity reference field derived from it.
//!
//! The planner evaluates `φ = φ̃ ∘ h`, where `φ̃` is the sphere-world
//! navigation function and `h` maps the squircle (star) world onto a
//! model sphere world: the workspace boundary onto its bounding sphere
//! and each interior obstacle onto its inscribed sphere.

mod diffeo;
mod field;
mod world;

pub use diffeo::{star_to_sphere, star_to_sphere_with, ModelWorld};
pub use field::{desired_velocity, grad_phi, grad_phi_fd, nav_value, nav_value_sphere, VelocityRef};
pub use world::{NavError, NavParams, NavWorld, Obstacle};
