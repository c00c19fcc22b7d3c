//! Ground-truth quadrotor rigid-body dynamics and the geometric
//! tracking controller.
//!
//! Sign conventions: gravity is the physical vector `g = (0, 0, -9.81)`
//! in the inertial frame, the body thrust axis is `+z` (third column of
//! the body-to-inertial rotation), and the translational dynamics are
//! `m·v̇ = m·g + f·R·e₃`. Hover equilibrium therefore gives
//! `f = m·‖g‖` exactly, which pins down how the gravity symbol enters
//! the thrust law below.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geom::{orthonormalize, rot_log, skew, vee};
use crate::gravity_vec;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("dynamics step requires dt in (0, 0.01], got {0}")]
    BadDt(f64),
    #[error("non-finite input to dynamics step")]
    NonFinite,
}

/// True vehicle state and physical parameters.
#[derive(Debug, Clone)]
pub struct QuadrotorPlant {
    /// Position in the inertial frame, m.
    pub position: Vector3<f64>,
    /// Velocity in the inertial frame, m/s.
    pub velocity: Vector3<f64>,
    /// Body-to-inertial rotation.
    pub rotation: Matrix3<f64>,
    /// Angular velocity in the body frame, rad/s.
    pub omega: Vector3<f64>,
    /// Mass, kg.
    pub mass: f64,
    /// Inertia about principal axes, kg·m².
    pub inertia: Vector3<f64>,
}

impl Default for QuadrotorPlant {
    /// Firefly-class defaults: 1.5 kg, J = diag(0.03, 0.03, 0.05).
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            omega: Vector3::zeros(),
            mass: 1.5,
            inertia: Vector3::new(0.03, 0.03, 0.05),
        }
    }
}

/// Controller gains; all strictly positive.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGains {
    pub k_v: f64,
    pub k_r: f64,
    pub k_omega: f64,
    /// Planner gain inside the erf speed profile.
    pub k_planner: f64,
    /// Speed cap for the velocity reference, m/s.
    pub v_max: f64,
    /// Safety-bubble radius around the target, m.
    pub bubble_radius: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_v: 4.0,
            k_r: 8.0,
            k_omega: 1.0,
            k_planner: 3.0,
            v_max: 6.0,
            bubble_radius: 0.7,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("k_v", self.k_v),
            ("k_r", self.k_r),
            ("k_omega", self.k_omega),
            ("k_planner", self.k_planner),
            ("v_max", self.v_max),
            ("bubble_radius", self.bubble_radius),
        ];
        for (name, v) in fields {
            if !(v > 0.0) {
                return Err(format!("gain {name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }
}

impl QuadrotorPlant {
    /// Instantaneous true body rates and specific force, the quantities an
    /// ideal IMU senses: `(ω, a_body)` with `a_body = Rᵀ(v̇ - g)`.
    pub fn imu_truth(&self, thrust: f64) -> (Vector3<f64>, Vector3<f64>) {
        let vdot = gravity_vec() + self.rotation.column(2) * (thrust / self.mass);
        let a_body = self.rotation.transpose() * (vdot - gravity_vec());
        (self.omega, a_body)
    }

    /// Advances the state by one RK4 step under constant thrust and moment.
    pub fn step(&self, thrust: f64, moment: Vector3<f64>, dt: f64) -> Result<Self, PlantError> {
        if !(dt > 0.0 && dt <= 0.01) {
            return Err(PlantError::BadDt(dt));
        }
        if !thrust.is_finite() || !moment.iter().all(|m| m.is_finite()) {
            return Err(PlantError::NonFinite);
        }
        let deriv = |p: &Self| {
            let vdot = gravity_vec() + p.rotation.column(2) * (thrust / p.mass);
            let rdot = p.rotation * skew(&p.omega);
            let j = Matrix3::from_diagonal(&p.inertia);
            let jw = j * p.omega;
            let wdot = Matrix3::from_diagonal(&Vector3::new(
                1.0 / p.inertia.x,
                1.0 / p.inertia.y,
                1.0 / p.inertia.z,
            )) * (moment - p.omega.cross(&jw));
            (p.velocity, vdot, rdot, wdot)
        };
        let advance = |p: &Self, k: &(Vector3<f64>, Vector3<f64>, Matrix3<f64>, Vector3<f64>), h: f64| Self {
            position: p.position + k.0 * h,
            velocity: p.velocity + k.1 * h,
            rotation: p.rotation + k.2 * h,
            omega: p.omega + k.3 * h,
            ..*p
        };
        let k1 = deriv(self);
        let k2 = deriv(&advance(self, &k1, 0.5 * dt));
        let k3 = deriv(&advance(self, &k2, 0.5 * dt));
        let k4 = deriv(&advance(self, &k3, dt));
        let mut next = Self {
            position: self.position
                + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0),
            velocity: self.velocity
                + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0),
            rotation: self.rotation
                + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * (dt / 6.0),
            omega: self.omega + (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * (dt / 6.0),
            ..*self
        };
        next.rotation = orthonormalize(&next.rotation);
        Ok(next)
    }
}

/// Orientation and angular-velocity tracking errors:
/// `e_R = vee(½(R_dᵀR - RᵀR_d))`, `e_ω = ω - RᵀR_d·ω_d`.
pub fn attitude_errors(
    r: &Matrix3<f64>,
    r_d: &Matrix3<f64>,
    omega: &Vector3<f64>,
    omega_d: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let e_r = vee(&((r_d.transpose() * r - r.transpose() * r_d) * 0.5));
    let e_w = omega - r.transpose() * r_d * omega_d;
    (e_r, e_w)
}

/// Thrust and moment per the geometric tracking law with velocity error
/// `e_v = v - v_d`:
///
/// ```text
/// f = (-k_v e_v - m g + m v̇_d) · (R e₃)
/// M = -k_R e_R - k_ω e_ω + ω × J ω
/// ```
#[allow(clippy::too_many_arguments)]
pub fn control_law(
    plant: &QuadrotorPlant,
    v_d: &Vector3<f64>,
    vdot_d: &Vector3<f64>,
    r_d: &Matrix3<f64>,
    omega_d: &Vector3<f64>,
    gains: &ControlGains,
) -> (f64, Vector3<f64>) {
    let e_v = plant.velocity - v_d;
    let thrust_vec = -gains.k_v * e_v - plant.mass * gravity_vec() + plant.mass * vdot_d;
    let f = thrust_vec.dot(&plant.rotation.column(2).into_owned());
    let (e_r, e_w) = attitude_errors(&plant.rotation, r_d, &plant.omega, omega_d);
    let j = Matrix3::from_diagonal(&plant.inertia);
    let m = -gains.k_r * e_r - gains.k_omega * e_w + plant.omega.cross(&(j * plant.omega));
    (f, m)
}

/// Desired total thrust vector `-k_v e_v - m g + m v̇_d` for use both in
/// the thrust law and in attitude construction.
pub fn desired_thrust_vector(
    mass: f64,
    e_v: &Vector3<f64>,
    vdot_d: &Vector3<f64>,
    gains: &ControlGains,
) -> Vector3<f64> {
    -gains.k_v * e_v - mass * gravity_vec() + mass * vdot_d
}

/// Builds the desired attitude from a thrust direction and a yaw target,
/// tracking the previous solution so that a degenerate (near-zero) thrust
/// vector holds attitude and ω_d can be formed by numerical
/// differentiation of successive solutions.
#[derive(Debug, Clone)]
pub struct AttitudeRef {
    last: Option<Matrix3<f64>>,
}

impl Default for AttitudeRef {
    fn default() -> Self {
        Self::new()
    }
}

impl AttitudeRef {
    pub fn new() -> Self {
        Self { last: None }
    }

    /// Desired rotation whose third column aligns with `thrust_vec` and
    /// whose heading column projects onto the `yaw` direction.
    pub fn attitude(&mut self, thrust_vec: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
        let norm = thrust_vec.norm();
        if norm < 1e-9 {
            return self.last.unwrap_or_else(Matrix3::identity);
        }
        let b3 = thrust_vec / norm;
        let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let b2_raw = b3.cross(&heading);
        let b2n = b2_raw.norm();
        if b2n < 1e-9 {
            // Thrust parallel to the heading; hold attitude.
            return self.last.unwrap_or_else(Matrix3::identity);
        }
        let b2 = b2_raw / b2n;
        let b1 = b2.cross(&b3);
        let r = Matrix3::from_columns(&[b1, b2, b3]);
        self.last = Some(r);
        r
    }

    /// Desired attitude and angular velocity. `ω_d` comes from numerically
    /// differencing the previous desired rotation over `dt`, in the
    /// desired body frame; the first call returns zero rates.
    pub fn update(
        &mut self,
        thrust_vec: &Vector3<f64>,
        yaw: f64,
        dt: f64,
    ) -> (Matrix3<f64>, Vector3<f64>) {
        let prev = self.last;
        let r = self.attitude(thrust_vec, yaw);
        let omega_d = match prev {
            Some(p) => rot_log(&(p.transpose() * r)) / dt,
            None => Vector3::zeros(),
        };
        (r, omega_d)
    }
}
