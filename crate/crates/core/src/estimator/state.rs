//! Filter state, error-state layout, and covariance bookkeeping.
//!
//! Error-state layout (one column per minimal-dimension error):
//!
//! ```text
//! [0..15)            IMU: δθ, δb_w, δv, δb_a, δp
//! [15..15+t)         target: δT (t = 3(n+1)), present after init
//! ...                clones: δθ_i, δp_i (6 each, up to max_clones)
//! [end-4..end)       map: δψ, δp_M, present after init
//! ```

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::UnitQuat;
use crate::target::TargetKinematics;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("correction dimension {got} does not match error-state dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-monotone measurement timestamps")]
    NonMonotoneTime,
    #[error("innovation covariance is not positive definite")]
    BadInnovation,
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("target not initialized")]
    NoTarget,
    #[error("map transform not initialized")]
    NoMap,
}

/// IMU noise densities used for covariance propagation (continuous-time,
/// per √Hz).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoiseParams {
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        Self { gyro_noise: 1.7e-4, accel_noise: 2.0e-3, gyro_walk: 1.0e-5, accel_walk: 3.0e-4 }
    }
}

/// Filter tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub imu_noise: ImuNoiseParams,
    /// Pixel noise in normalized units.
    pub pixel_std_norm: f64,
    pub target_order: usize,
    /// Continuous noise intensity of the target model.
    pub target_sigma: f64,
    pub max_clones: usize,
    /// Chi-square 95% innovation gating on point updates; strict-paper
    /// mode disables it.
    pub gating: bool,
    /// Optional QR compression of the stacked MSCKF system.
    pub qr_compression: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            imu_noise: ImuNoiseParams::default(),
            pixel_std_norm: 1.0 / 460.0,
            target_order: 1,
            target_sigma: 0.2,
            max_clones: 8,
            gating: true,
            qr_compression: false,
        }
    }
}

/// IMU mean state.
#[derive(Debug, Clone)]
pub struct ImuMeanState {
    /// Rotation taking G coordinates into the IMU frame.
    pub q_ig: UnitQuat,
    pub bias_gyro: Vector3<f64>,
    /// Velocity in G, m/s.
    pub velocity: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// Position in G, m.
    pub position: Vector3<f64>,
}

impl ImuMeanState {
    pub fn rot_ig(&self) -> Matrix3<f64> {
        self.q_ig.to_rot()
    }
}

/// Stochastic clone of a past IMU pose.
#[derive(Debug, Clone)]
pub struct PoseClone {
    pub tick: u64,
    pub q_ig: UnitQuat,
    pub position: Vector3<f64>,
}

/// 4-DOF transform between the estimator's global frame and the prior
/// map: `p_G = R(ψ)ᵀ·p_M + p_M_in_G` with `R(ψ)` the z-rotation `ᴹ_G R`.
#[derive(Debug, Clone)]
pub struct MapTransform {
    pub yaw: f64,
    /// Map origin expressed in G, m.
    pub p_m_in_g: Vector3<f64>,
}

impl MapTransform {
    /// Rotation taking G coordinates into the map frame.
    pub fn rot_mg(&self) -> Matrix3<f64> {
        UnitQuat::from_yaw(self.yaw).to_rot()
    }

    /// Landmark in map coordinates expressed in G.
    pub fn map_point_to_g(&self, p_m: &Vector3<f64>) -> Vector3<f64> {
        self.p_m_in_g + self.rot_mg().transpose() * p_m
    }

    /// G point expressed in map coordinates.
    pub fn g_point_to_map(&self, p_g: &Vector3<f64>) -> Vector3<f64> {
        self.rot_mg() * (p_g - self.p_m_in_g)
    }

    /// G vector (e.g. a velocity) expressed in map coordinates.
    pub fn g_vector_to_map(&self, v_g: &Vector3<f64>) -> Vector3<f64> {
        self.rot_mg() * v_g
    }
}

/// The tightly-coupled filter state: IMU ⊗ target ⊗ clones ⊗ map
/// transform plus the joint covariance.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub time: f64,
    pub imu: ImuMeanState,
    pub target: Option<TargetKinematics>,
    pub clones: Vec<PoseClone>,
    pub map: Option<MapTransform>,
    pub cov: DMatrix<f64>,
    pub config: FilterConfig,
    /// Count of chi-square-gated (rejected) updates.
    pub gate_rejections: u64,
}

impl FilterState {
    /// Starts the filter at a known pose with the given initial
    /// uncertainty (standard deviations for attitude, bias, velocity,
    /// position blocks).
    pub fn new(imu: ImuMeanState, config: FilterConfig, time: f64) -> Self {
        let cov = DMatrix::zeros(15, 15);
        Self { time, imu, target: None, clones: Vec::new(), map: None, cov, config, gate_rejections: 0 }
    }

    pub fn set_initial_std(
        &mut self,
        att_std: f64,
        bias_g_std: f64,
        vel_std: f64,
        bias_a_std: f64,
        pos_std: f64,
    ) {
        let stds = [att_std, bias_g_std, vel_std, bias_a_std, pos_std];
        for (b, s) in stds.iter().enumerate() {
            for k in 0..3 {
                self.cov[(3 * b + k, 3 * b + k)] = s * s;
            }
        }
    }

    pub fn target_dim(&self) -> usize {
        self.target.as_ref().map(|t| t.dim()).unwrap_or(0)
    }

    pub fn target_offset(&self) -> usize {
        15
    }

    pub fn clone_offset(&self, idx: usize) -> usize {
        15 + self.target_dim() + 6 * idx
    }

    pub fn map_offset(&self) -> usize {
        15 + self.target_dim() + 6 * self.clones.len()
    }

    pub fn dim(&self) -> usize {
        self.map_offset() + if self.map.is_some() { 4 } else { 0 }
    }

    pub fn clone_index_by_tick(&self, tick: u64) -> Option<usize> {
        self.clones.iter().position(|c| c.tick == tick)
    }

    /// Generalized update `x ← x ⊞ δ`: vectors add, quaternions retract
    /// through `δq ⊗ q̂`, the map quaternion accepts only its scalar
    /// z-axis angle.
    pub fn boxplus(&mut self, delta: &DVector<f64>) -> Result<(), EstimatorError> {
        if delta.len() != self.dim() {
            return Err(EstimatorError::DimensionMismatch {
                got: delta.len(),
                expected: self.dim(),
            });
        }
        let seg3 = |at: usize| Vector3::new(delta[at], delta[at + 1], delta[at + 2]);
        self.imu.q_ig = self.imu.q_ig.boxplus(&seg3(0));
        self.imu.bias_gyro += seg3(3);
        self.imu.velocity += seg3(6);
        self.imu.bias_accel += seg3(9);
        self.imu.position += seg3(12);
        if let Some(t) = self.target.as_mut() {
            let off = 15;
            for k in 0..t.dim() {
                t.state[k] += delta[off + k];
            }
        }
        for i in 0..self.clones.len() {
            let off = self.clone_offset(i);
            let dtheta = seg3(off);
            let c = &mut self.clones[i];
            c.q_ig = c.q_ig.boxplus(&dtheta);
            c.position += seg3(off + 3);
        }
        let map_off = self.map_offset();
        if let Some(m) = self.map.as_mut() {
            // Exact composition of the 1-DOF error quaternion
            // [0,0,δψ/2,1] with the yaw estimate.
            m.yaw += 2.0 * (0.5 * delta[map_off]).atan();
            m.p_m_in_g += seg3(map_off + 1);
        }
        Ok(())
    }

    /// Inverse retraction: the error vector `δ` with
    /// `reference ⊞ δ = self` (exact logs; used by test oracles).
    pub fn boxminus(&self, reference: &Self) -> DVector<f64> {
        assert_eq!(self.dim(), reference.dim(), "layouts must match");
        let mut d = DVector::zeros(self.dim());
        let set3 = |d: &mut DVector<f64>, at: usize, v: Vector3<f64>| {
            d[at] = v.x;
            d[at + 1] = v.y;
            d[at + 2] = v.z;
        };
        set3(&mut d, 0, self.imu.q_ig.boxminus(&reference.imu.q_ig));
        set3(&mut d, 3, self.imu.bias_gyro - reference.imu.bias_gyro);
        set3(&mut d, 6, self.imu.velocity - reference.imu.velocity);
        set3(&mut d, 9, self.imu.bias_accel - reference.imu.bias_accel);
        set3(&mut d, 12, self.imu.position - reference.imu.position);
        if let (Some(a), Some(b)) = (&self.target, &reference.target) {
            for k in 0..a.dim() {
                d[15 + k] = a.state[k] - b.state[k];
            }
        }
        for i in 0..self.clones.len() {
            let off = self.clone_offset(i);
            set3(&mut d, off, self.clones[i].q_ig.boxminus(&reference.clones[i].q_ig));
            set3(&mut d, off + 3, self.clones[i].position - reference.clones[i].position);
        }
        if let (Some(a), Some(b)) = (&self.map, &reference.map) {
            let off = self.map_offset();
            d[off] = 2.0 * (0.5 * (a.yaw - b.yaw)).tan();
            set3(&mut d, off + 1, a.p_m_in_g - b.p_m_in_g);
        }
        d
    }

    /// Stochastic cloning: appends a copy of the current IMU pose with
    /// the exact Jacobian of the cloning map (row/column duplication).
    pub fn augment_clone(&mut self, tick: u64) {
        let at = self.map_offset(); // insert before the map block
        let n = self.dim();
        let src = [0usize, 1, 2, 12, 13, 14];
        let mut cov = DMatrix::zeros(n + 6, n + 6);
        let map_idx = |i: usize| -> usize {
            if i < at {
                i
            } else if i < at + 6 {
                src[i - at]
            } else {
                i - 6
            }
        };
        for r in 0..(n + 6) {
            for c in 0..(n + 6) {
                cov[(r, c)] = self.cov[(map_idx(r), map_idx(c))];
            }
        }
        self.cov = cov;
        self.clones.push(PoseClone {
            tick,
            q_ig: self.imu.q_ig,
            position: self.imu.position,
        });
    }

    /// Marginalizes one clone by deleting its rows and columns.
    pub fn prune_clone(&mut self, idx: usize) {
        let off = self.clone_offset(idx);
        let cov = std::mem::replace(&mut self.cov, DMatrix::zeros(0, 0));
        let cov = cov.remove_rows(off, 6).remove_columns(off, 6);
        self.cov = cov;
        self.clones.remove(idx);
    }

    /// Inserts a new error block of width `w` at offset `at` with the
    /// given cross covariance (`dim_old × w`) and block covariance.
    pub fn insert_cov_block(&mut self, at: usize, cross: &DMatrix<f64>, block: &DMatrix<f64>) {
        let n = self.cov.nrows();
        let w = block.nrows();
        assert_eq!(cross.nrows(), n);
        assert_eq!(cross.ncols(), w);
        let mut cov = DMatrix::zeros(n + w, n + w);
        cov.view_mut((0, 0), (at, at)).copy_from(&self.cov.view((0, 0), (at, at)));
        cov.view_mut((0, at + w), (at, n - at))
            .copy_from(&self.cov.view((0, at), (at, n - at)));
        cov.view_mut((at + w, 0), (n - at, at))
            .copy_from(&self.cov.view((at, 0), (n - at, at)));
        cov.view_mut((at + w, at + w), (n - at, n - at))
            .copy_from(&self.cov.view((at, at), (n - at, n - at)));
        cov.view_mut((0, at), (at, w)).copy_from(&cross.view((0, 0), (at, w)));
        cov.view_mut((at + w, at), (n - at, w))
            .copy_from(&cross.view((at, 0), (n - at, w)));
        cov.view_mut((at, 0), (w, at))
            .copy_from(&cross.view((0, 0), (at, w)).transpose());
        cov.view_mut((at, at + w), (w, n - at))
            .copy_from(&cross.view((at, 0), (n - at, w)).transpose());
        cov.view_mut((at, at), (w, w)).copy_from(block);
        self.cov = cov;
    }

    /// Deletes an error block (used when marginalizing all but the
    /// active target state after delayed initialization).
    pub fn remove_cov_block(&mut self, at: usize, w: usize) {
        let cov = std::mem::replace(&mut self.cov, DMatrix::zeros(0, 0));
        self.cov = cov.remove_rows(at, w).remove_columns(at, w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_state() -> FilterState {
        let imu = ImuMeanState {
            q_ig: UnitQuat::from_yaw(0.3),
            bias_gyro: Vector3::new(0.01, -0.02, 0.005),
            velocity: Vector3::new(1.0, 0.0, -0.5),
            bias_accel: Vector3::new(0.1, 0.0, -0.05),
            position: Vector3::new(5.0, 2.0, 1.0),
        };
        let mut s = FilterState::new(imu, FilterConfig::default(), 0.0);
        s.set_initial_std(0.01, 0.001, 0.1, 0.01, 0.05);
        s
    }

    #[test]
    fn boxplus_zero_is_identity() {
        let mut s = base_state();
        let before = s.clone();
        s.boxplus(&DVector::zeros(s.dim())).unwrap();
        assert!(s.boxminus(&before).norm() < 1e-15);
    }

    #[test]
    fn boxplus_position_adds() {
        let mut s = base_state();
        let mut d = DVector::zeros(s.dim());
        d[12] = 0.5;
        d[13] = -0.25;
        let p0 = s.imu.position;
        s.boxplus(&d).unwrap();
        assert!((s.imu.position - (p0 + Vector3::new(0.5, -0.25, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn boxplus_rejects_dimension_mismatch() {
        let mut s = base_state();
        assert!(matches!(
            s.boxplus(&DVector::zeros(3)),
            Err(EstimatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn map_yaw_boxplus_matches_exact_z_rotation() {
        let mut s = base_state();
        s.map = Some(MapTransform { yaw: 0.7, p_m_in_g: Vector3::zeros() });
        s.cov = DMatrix::zeros(19, 19);
        let mut d = DVector::zeros(s.dim());
        let dpsi = 1e-6;
        d[s.map_offset()] = dpsi;
        s.boxplus(&d).unwrap();
        let exact = UnitQuat::from_yaw(dpsi).mul(&UnitQuat::from_yaw(0.7));
        let got = UnitQuat::from_yaw(s.map.as_ref().unwrap().yaw);
        assert!((got.as_vector4() - exact.as_vector4()).norm() <= 1e-12);
    }

    #[test]
    fn boxplus_boxminus_roundtrip() {
        let mut s = base_state();
        s.map = Some(MapTransform { yaw: -0.4, p_m_in_g: Vector3::new(1.0, 2.0, 0.0) });
        s.cov = DMatrix::zeros(19, 19);
        s.augment_clone(0);
        let reference = s.clone();
        let mut d = DVector::zeros(s.dim());
        for i in 0..d.len() {
            d[i] = 1e-5 * ((i as f64 + 1.0) * 0.37).sin();
        }
        s.boxplus(&d).unwrap();
        let back = s.boxminus(&reference);
        assert!((back - d).norm() <= 1e-8 * 1e-4);
    }

    #[test]
    fn clone_copies_pose_and_covariance() {
        let mut s = base_state();
        s.augment_clone(42);
        assert_eq!(s.clones.len(), 1);
        let c = &s.clones[0];
        assert_eq!(c.tick, 42);
        assert!((c.position - s.imu.position).norm() == 0.0);
        let off = s.clone_offset(0);
        // clone-IMU cross covariance equals the IMU pose covariance rows.
        for k in 0..3 {
            for j in 0..15 {
                assert_eq!(s.cov[(off + k, j)], s.cov[(k, j)]);
                assert_eq!(s.cov[(off + 3 + k, j)], s.cov[(12 + k, j)]);
            }
        }
    }

    #[test]
    fn augment_then_prune_restores_covariance() {
        let mut s = base_state();
        let p0 = s.cov.clone();
        s.augment_clone(1);
        s.prune_clone(0);
        assert_eq!(s.cov, p0);
    }
}
