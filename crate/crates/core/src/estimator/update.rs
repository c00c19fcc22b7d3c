//! EKF measurement updates: the shared gain/Joseph machinery, bearing
//! Jacobians for points, prior-map landmarks, and the target.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};

use super::state::{EstimatorError, FilterState};
use crate::geom::{skew, UnitQuat};
use crate::linalg::{chi2_gate_95, symmetrize};
use crate::sensors::CameraRig;

#[derive(Debug, Clone, Copy)]
pub struct UpdateOutcome {
    pub applied: bool,
    /// Normalized innovation squared of this update.
    pub nis: f64,
}

/// Standard EKF update with chi-square gating and a Joseph-form
/// covariance update; the state mean is corrected through boxplus.
pub fn ekf_update(
    state: &mut FilterState,
    residual: &DVector<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    gate: bool,
) -> Result<UpdateOutcome, EstimatorError> {
    let d = state.dim();
    assert_eq!(h.ncols(), d, "H column layout must match the error state");
    assert_eq!(h.nrows(), residual.len());
    let pht = &state.cov * h.transpose();
    let s = h * &pht + noise;
    let chol = s
        .clone()
        .cholesky()
        .ok_or(EstimatorError::BadInnovation)?;
    let nis = residual.dot(&chol.solve(residual));
    if gate && state.config.gating {
        let threshold = chi2_gate_95(residual.len());
        if nis > threshold {
            state.gate_rejections += 1;
            return Ok(UpdateOutcome { applied: false, nis });
        }
    }
    // K = P Hᵀ S⁻¹ via the Cholesky solve.
    let k = chol.solve(&pht.transpose()).transpose();
    let delta = &k * residual;
    // P ← P - K(HP) - (HP)ᵀKᵀ + K S Kᵀ  (Joseph form, expanded).
    let hp = pht.transpose();
    let ksk = &k * &s * k.transpose();
    state.cov -= &k * &hp;
    state.cov -= (&k * &hp).transpose();
    state.cov += ksk;
    symmetrize(&mut state.cov);
    state.boxplus(&delta)?;
    Ok(UpdateOutcome { applied: true, nis })
}

/// Projection Jacobian `[[1/z, 0, -x/z²], [0, 1/z, -y/z²]]`.
pub fn projection_jacobian(p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = p_cam.z;
    Matrix2x3::new(
        1.0 / z, 0.0, -p_cam.x / (z * z),
        0.0, 1.0 / z, -p_cam.y / (z * z),
    )
}

/// Bearing measurement of a G-frame point from a stored pose, with all
/// Jacobian blocks. `None` when the prediction lands behind the camera
/// (the measurement is skipped).
#[derive(Debug, Clone)]
pub struct PointJacobians {
    pub predicted: Vector2<f64>,
    pub h_proj: Matrix2x3<f64>,
    /// With respect to the pose attitude error δθ.
    pub h_theta: Matrix2x3<f64>,
    /// With respect to the pose position error δp.
    pub h_p: Matrix2x3<f64>,
    /// With respect to the point's G position.
    pub h_point: Matrix2x3<f64>,
}

pub fn point_jacobians(
    rig: &CameraRig,
    cam: usize,
    q_ig: &UnitQuat,
    p_imu: &Vector3<f64>,
    point_g: &Vector3<f64>,
) -> Option<PointJacobians> {
    let r_ig = q_ig.to_rot();
    let in_imu = r_ig * (point_g - p_imu);
    let p_cam = rig.r_ci * in_imu + rig.p_ci_cam(cam);
    if p_cam.z <= 0.0 {
        return None;
    }
    let h_proj = projection_jacobian(&p_cam);
    let rc = rig.r_ci;
    Some(PointJacobians {
        predicted: Vector2::new(p_cam.x / p_cam.z, p_cam.y / p_cam.z),
        h_proj,
        h_theta: h_proj * rc * skew(&in_imu),
        h_p: -h_proj * rc * r_ig,
        h_point: h_proj * rc * r_ig,
    })
}

/// Prior-map landmark measurement: the five printed blocks.
#[derive(Debug, Clone)]
pub struct LandmarkJacobians {
    pub predicted: Vector2<f64>,
    pub h_proj: Matrix2x3<f64>,
    pub h_theta: Matrix2x3<f64>,
    pub h_p: Matrix2x3<f64>,
    /// Single-column yaw Jacobian.
    pub h_psi: Vector2<f64>,
    pub h_pm: Matrix2x3<f64>,
}

/// Jacobians of a landmark (known in the map frame) observed from clone
/// `clone_idx`. Requires the map transform; `Ok(None)` when the
/// prediction is behind the camera.
pub fn landmark_jacobians(
    state: &FilterState,
    rig: &CameraRig,
    landmark_m: &Vector3<f64>,
    clone_idx: usize,
    cam: usize,
) -> Result<Option<LandmarkJacobians>, EstimatorError> {
    let map = state.map.as_ref().ok_or(EstimatorError::NoMap)?;
    let clone = &state.clones[clone_idx];
    let point_g = map.map_point_to_g(landmark_m);
    let Some(pj) = point_jacobians(rig, cam, &clone.q_ig, &clone.position, &point_g) else {
        return Ok(None);
    };
    let r_mg_t = map.rot_mg().transpose();
    let e_z = Vector3::z();
    let h_psi = -pj.h_point * (r_mg_t * skew(landmark_m) * e_z);
    Ok(Some(LandmarkJacobians {
        predicted: pj.predicted,
        h_proj: pj.h_proj,
        h_theta: pj.h_theta,
        h_p: pj.h_p,
        h_psi,
        h_pm: pj.h_point,
    }))
}

/// Assembles the full-width H row pair for one landmark observation.
pub fn landmark_h_row(
    state: &FilterState,
    j: &LandmarkJacobians,
    clone_idx: usize,
) -> DMatrix<f64> {
    let d = state.dim();
    let mut h = DMatrix::zeros(2, d);
    let c_off = state.clone_offset(clone_idx);
    let m_off = state.map_offset();
    h.view_mut((0, c_off), (2, 3)).copy_from(&j.h_theta);
    h.view_mut((0, c_off + 3), (2, 3)).copy_from(&j.h_p);
    h.view_mut((0, m_off), (2, 1)).copy_from(&j.h_psi);
    h.view_mut((0, m_off + 1), (2, 3)).copy_from(&j.h_pm);
    h
}

/// Statistics from one camera epoch of landmark updates.
#[derive(Debug, Clone, Copy, Default)]
pub struct LandmarkUpdateStats {
    pub applied: usize,
    pub gated: usize,
    pub skipped_behind: usize,
}

/// Sequential per-landmark EKF updates at clone `clone_idx`; each
/// landmark stacks its (up to stereo) pixel observations.
pub fn update_landmarks(
    state: &mut FilterState,
    rig: &CameraRig,
    obs: &[(Vector3<f64>, usize, Vector2<f64>)],
    clone_idx: usize,
) -> Result<LandmarkUpdateStats, EstimatorError> {
    let mut stats = LandmarkUpdateStats::default();
    let sigma2 = state.config.pixel_std_norm * state.config.pixel_std_norm;
    // Group consecutive observations of the same landmark (callers pass
    // them grouped per landmark).
    let mut i = 0;
    while i < obs.len() {
        let lm = obs[i].0;
        let mut rows: Vec<(Vector2<f64>, LandmarkJacobians)> = Vec::new();
        let mut j = i;
        while j < obs.len() && (obs[j].0 - lm).norm() == 0.0 {
            if let Some(jac) = landmark_jacobians(state, rig, &lm, clone_idx, obs[j].1)? {
                rows.push((obs[j].2, jac));
            } else {
                stats.skipped_behind += 1;
            }
            j += 1;
        }
        if !rows.is_empty() {
            let m = 2 * rows.len();
            let mut h = DMatrix::zeros(m, state.dim());
            let mut r = DVector::zeros(m);
            for (k, (pixel, jac)) in rows.iter().enumerate() {
                h.view_mut((2 * k, 0), (2, state.dim()))
                    .copy_from(&landmark_h_row(state, jac, clone_idx));
                r[2 * k] = pixel.x - jac.predicted.x;
                r[2 * k + 1] = pixel.y - jac.predicted.y;
            }
            let noise = DMatrix::identity(m, m) * sigma2;
            let out = ekf_update(state, &r, &h, &noise, true)?;
            if out.applied {
                stats.applied += 1;
            } else {
                stats.gated += 1;
            }
        }
        i = j;
    }
    Ok(stats)
}

/// Target bearing Jacobians with respect to the current IMU pose and the
/// target position (higher derivatives enter only through propagation).
#[derive(Debug, Clone)]
pub struct TargetJacobians {
    pub predicted: Vector2<f64>,
    pub h_theta: Matrix2x3<f64>,
    pub h_p: Matrix2x3<f64>,
    pub h_pt: Matrix2x3<f64>,
}

pub fn target_jacobians(
    state: &FilterState,
    rig: &CameraRig,
    cam: usize,
) -> Result<Option<TargetJacobians>, EstimatorError> {
    let target = state.target.as_ref().ok_or(EstimatorError::NoTarget)?;
    let Some(pj) = point_jacobians(
        rig,
        cam,
        &state.imu.q_ig,
        &state.imu.position,
        &target.position(),
    ) else {
        return Ok(None);
    };
    Ok(Some(TargetJacobians {
        predicted: pj.predicted,
        h_theta: pj.h_theta,
        h_p: pj.h_p,
        h_pt: pj.h_point,
    }))
}

/// EKF update with one target pixel; skips silently when the prediction
/// is behind the camera.
pub fn update_target(
    state: &mut FilterState,
    rig: &CameraRig,
    cam: usize,
    pixel: &Vector2<f64>,
) -> Result<Option<UpdateOutcome>, EstimatorError> {
    let Some(jac) = target_jacobians(state, rig, cam)? else {
        return Ok(None);
    };
    let d = state.dim();
    let mut h = DMatrix::zeros(2, d);
    h.view_mut((0, 0), (2, 3)).copy_from(&jac.h_theta);
    h.view_mut((0, 12), (2, 3)).copy_from(&jac.h_p);
    h.view_mut((0, 15), (2, 3)).copy_from(&jac.h_pt);
    let r = DVector::from_vec(vec![
        pixel.x - jac.predicted.x,
        pixel.y - jac.predicted.y,
    ]);
    let sigma2 = state.config.pixel_std_norm * state.config.pixel_std_norm;
    let noise = DMatrix::identity(2, 2) * sigma2;
    ekf_update(state, &r, &h, &noise, true).map(Some)
}

/// Rotation matrix taking G coordinates into the given camera's frame at
/// a stored clone pose, plus the camera center in G.
pub fn clone_camera_pose(
    state: &FilterState,
    rig: &CameraRig,
    clone_idx: usize,
    cam: usize,
) -> (Matrix3<f64>, Vector3<f64>) {
    let c = &state.clones[clone_idx];
    let r_ig = c.q_ig.to_rot();
    (rig.r_cg(&r_ig), rig.camera_center(&r_ig, &c.position, cam))
}
