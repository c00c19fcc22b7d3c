//! MSCKF feature handling: track bookkeeping, multi-view triangulation,
//! and the left-nullspace feature update.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::state::{EstimatorError, FilterState};
use super::update::{clone_camera_pose, ekf_update, point_jacobians};
use crate::linalg::{chi2_gate_95, left_nullspace, qr_split};
use crate::sensors::CameraRig;

/// One pixel observation of a tracked feature.
#[derive(Debug, Clone, Copy)]
pub struct TrackObs {
    pub tick: u64,
    pub cam: usize,
    pub pixel: Vector2<f64>,
}

/// Pixel measurements of one feature across the clone window.
#[derive(Debug, Clone)]
pub struct FeatureTrack {
    pub feature_id: usize,
    pub obs: Vec<TrackObs>,
}

impl FeatureTrack {
    /// Number of distinct imaging epochs.
    pub fn n_epochs(&self) -> usize {
        let mut ticks: Vec<u64> = self.obs.iter().map(|o| o.tick).collect();
        ticks.dedup();
        ticks.len()
    }
}

/// Accumulates observations and decides which tracks are ready for the
/// MSCKF update. Deterministic iteration (BTreeMap keyed by feature id).
#[derive(Debug, Default)]
pub struct TrackManager {
    active: BTreeMap<usize, FeatureTrack>,
}

impl TrackManager {
    pub fn observe(&mut self, feature_id: usize, tick: u64, cam: usize, pixel: Vector2<f64>) {
        self.active
            .entry(feature_id)
            .or_insert_with(|| FeatureTrack { feature_id, obs: Vec::new() })
            .obs
            .push(TrackObs { tick, cam, pixel });
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Removes and returns the tracks to process at this epoch: those not
    /// observed at `current_tick` (lost) and, when the window is full,
    /// those touching `pruned_tick`.
    pub fn take_finished(&mut self, current_tick: u64, pruned_tick: Option<u64>) -> Vec<FeatureTrack> {
        let mut done = Vec::new();
        let ids: Vec<usize> = self.active.keys().cloned().collect();
        for id in ids {
            let track = &self.active[&id];
            let lost = track.obs.last().map(|o| o.tick != current_tick).unwrap_or(true);
            let pruning = pruned_tick
                .map(|t| track.obs.first().map(|o| o.tick <= t).unwrap_or(false))
                .unwrap_or(false);
            if lost || pruning {
                done.push(self.active.remove(&id).unwrap());
            }
        }
        done
    }
}

/// Linear least-squares intersection of bearing rays `(center, unit
/// direction)`. Returns the point and the normal-matrix condition
/// number.
pub fn triangulate(
    rays: &[(Vector3<f64>, Vector3<f64>)],
) -> Result<(Vector3<f64>, f64), EstimatorError> {
    if rays.len() < 2 {
        return Err(EstimatorError::Triangulation("need at least two rays".into()));
    }
    let mut baseline: f64 = 0.0;
    for i in 0..rays.len() {
        for j in (i + 1)..rays.len() {
            baseline = baseline.max((rays[i].0 - rays[j].0).norm());
        }
    }
    if baseline <= 1e-3 {
        return Err(EstimatorError::Triangulation(format!(
            "baseline {baseline:.2e} m too small"
        )));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (c, d) in rays {
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * c;
    }
    let eigs = a.symmetric_eigenvalues();
    let (emin, emax) = (eigs.min(), eigs.max());
    if emin <= 1e-9 * emax {
        return Err(EstimatorError::Triangulation("rays are parallel (rank deficient)".into()));
    }
    let point = a.lu().solve(&b).ok_or_else(|| {
        EstimatorError::Triangulation("normal equations are singular".into())
    })?;
    Ok((point, emax / emin))
}

/// Measured bearing ray of one observation in G coordinates.
pub fn observation_ray(
    state: &FilterState,
    rig: &CameraRig,
    obs: &TrackObs,
    clone_idx: usize,
) -> (Vector3<f64>, Vector3<f64>) {
    let (r_cg, center) = clone_camera_pose(state, rig, clone_idx, obs.cam);
    let dir_cam = Vector3::new(obs.pixel.x, obs.pixel.y, 1.0).normalize();
    (center, r_cg.transpose() * dir_cam)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MsckfStats {
    pub tracks_used: usize,
    pub tracks_dropped: usize,
    pub tracks_gated: usize,
    pub stacked_rows: usize,
    /// Worst-case ‖Q₂ᵀ·H_f‖ across processed tracks.
    pub max_nullspace_residual: f64,
    pub applied: bool,
}

struct ProjectedTrack {
    residual: DVector<f64>,
    h: DMatrix<f64>,
}

/// Builds the nullspace-projected system for one track; `None` drops it
/// (triangulation failure, too few usable epochs, behind-camera).
fn project_track(
    state: &FilterState,
    rig: &CameraRig,
    track: &FeatureTrack,
    stats: &mut MsckfStats,
) -> Option<ProjectedTrack> {
    let d = state.dim();
    let mut usable: Vec<(usize, &TrackObs)> = Vec::new();
    for o in &track.obs {
        if let Some(idx) = state.clone_index_by_tick(o.tick) {
            usable.push((idx, o));
        }
    }
    let mut epochs: Vec<u64> = usable.iter().map(|(_, o)| o.tick).collect();
    epochs.dedup();
    if epochs.len() < 2 {
        return None;
    }
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = usable
        .iter()
        .map(|(idx, o)| observation_ray(state, rig, o, *idx))
        .collect();
    let (point, _cond) = triangulate(&rays).ok()?;
    let m = usable.len();
    let mut h_x = DMatrix::zeros(2 * m, d);
    let mut h_f = DMatrix::zeros(2 * m, 3);
    let mut r = DVector::zeros(2 * m);
    for (k, (idx, o)) in usable.iter().enumerate() {
        let c = &state.clones[*idx];
        let pj = point_jacobians(rig, o.cam, &c.q_ig, &c.position, &point)?;
        let off = state.clone_offset(*idx);
        h_x.view_mut((2 * k, off), (2, 3)).copy_from(&pj.h_theta);
        h_x.view_mut((2 * k, off + 3), (2, 3)).copy_from(&pj.h_p);
        h_f.view_mut((2 * k, 0), (2, 3)).copy_from(&pj.h_point);
        r[2 * k] = o.pixel.x - pj.predicted.x;
        r[2 * k + 1] = o.pixel.y - pj.predicted.y;
    }
    // Project onto the left nullspace of H_f: removes the dependency on
    // the feature error. Q₂ᵀ·H_f must vanish to machine precision.
    let q2 = left_nullspace(&h_f);
    let nullres = (q2.transpose() * &h_f).norm();
    stats.max_nullspace_residual = stats.max_nullspace_residual.max(nullres);
    Some(ProjectedTrack {
        residual: q2.transpose() * r,
        h: q2.transpose() * h_x,
    })
}

/// MSCKF update: triangulate each track, project out the feature error,
/// gate per track, stack, and apply a single EKF update. Features never
/// enter the state.
pub fn msckf_update(
    state: &mut FilterState,
    rig: &CameraRig,
    tracks: &[FeatureTrack],
) -> Result<MsckfStats, EstimatorError> {
    let mut stats = MsckfStats::default();
    let sigma2 = state.config.pixel_std_norm * state.config.pixel_std_norm;
    let mut projected: Vec<ProjectedTrack> = Vec::new();
    for track in tracks {
        match project_track(state, rig, track, &mut stats) {
            Some(pt) => {
                if state.config.gating {
                    let s = &pt.h * &state.cov * pt.h.transpose()
                        + DMatrix::identity(pt.residual.len(), pt.residual.len()) * sigma2;
                    let Some(chol) = s.cholesky() else {
                        stats.tracks_dropped += 1;
                        continue;
                    };
                    let nis = pt.residual.dot(&chol.solve(&pt.residual));
                    if nis > chi2_gate_95(pt.residual.len()) {
                        stats.tracks_gated += 1;
                        state.gate_rejections += 1;
                        continue;
                    }
                }
                projected.push(pt);
                stats.tracks_used += 1;
            }
            None => stats.tracks_dropped += 1,
        }
    }
    if projected.is_empty() {
        return Ok(stats);
    }
    let rows: usize = projected.iter().map(|p| p.residual.len()).sum();
    let d = state.dim();
    let mut h = DMatrix::zeros(rows, d);
    let mut r = DVector::zeros(rows);
    let mut at = 0;
    for p in &projected {
        let m = p.residual.len();
        h.view_mut((at, 0), (m, d)).copy_from(&p.h);
        r.rows_mut(at, m).copy_from(&p.residual);
        at += m;
    }
    // Optional QR compression of the stacked system.
    if state.config.qr_compression && rows > d {
        let (q1, _, r1) = qr_split(&h);
        r = q1.transpose() * r;
        h = r1;
    }
    stats.stacked_rows = h.nrows();
    let noise = DMatrix::identity(h.nrows(), h.nrows()) * sigma2;
    let out = ekf_update(state, &r, &h, &noise, false)?;
    stats.applied = out.applied;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::state::{FilterConfig, ImuMeanState};
    use crate::geom::UnitQuat;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn triangulation_recovers_point_from_two_views() {
        let p = Vector3::new(2.0, 1.0, 4.0);
        let c1 = Vector3::zeros();
        let c2 = Vector3::new(1.0, 0.0, 0.0);
        let rays = vec![(c1, (p - c1).normalize()), (c2, (p - c2).normalize())];
        let (est, cond) = triangulate(&rays).unwrap();
        assert!((est - p).norm() < 1e-9);
        assert!(cond.is_finite());
    }

    #[test]
    fn parallel_rays_fail() {
        let d = Vector3::new(0.0, 0.0, 1.0);
        let rays = vec![(Vector3::zeros(), d), (Vector3::new(1.0, 0.0, 0.0), d)];
        assert!(matches!(
            triangulate(&rays),
            Err(EstimatorError::Triangulation(_))
        ));
    }

    #[test]
    fn tiny_baseline_fails() {
        let p = Vector3::new(0.0, 0.0, 5.0);
        let c1 = Vector3::zeros();
        let c2 = Vector3::new(1e-5, 0.0, 0.0);
        let rays = vec![(c1, (p - c1).normalize()), (c2, (p - c2).normalize())];
        assert!(triangulate(&rays).is_err());
    }

    #[test]
    fn third_view_is_consistent() {
        let p = Vector3::new(-1.0, 2.0, 6.0);
        let centers = [
            Vector3::zeros(),
            Vector3::new(0.8, 0.1, 0.0),
            Vector3::new(-0.5, 0.9, 0.3),
        ];
        let rays2: Vec<_> = centers[..2].iter().map(|c| (*c, (p - c).normalize())).collect();
        let rays3: Vec<_> = centers.iter().map(|c| (*c, (p - c).normalize())).collect();
        let (e2, _) = triangulate(&rays2).unwrap();
        let (e3, _) = triangulate(&rays3).unwrap();
        assert!((e2 - e3).norm() < 1e-9);
    }

    /// Synthetic two-clone scene: the nullspace projection must
    /// annihilate H_f and leave 2·obs - 3 residual rows.
    #[test]
    fn projected_dimensions_and_nullspace() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let rig = CameraRig::default();
        let imu = ImuMeanState {
            q_ig: UnitQuat::identity(),
            bias_gyro: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            position: Vector3::zeros(),
        };
        let mut state = FilterState::new(imu, FilterConfig::default(), 0.0);
        state.augment_clone(0);
        state.imu.position = Vector3::new(0.4, 0.1, 0.0);
        state.augment_clone(10);
        state.cov = DMatrix::identity(state.dim(), state.dim()) * 1e-4;

        let feature = Vector3::new(5.0, 0.3, 0.6);
        let mut track = FeatureTrack { feature_id: 0, obs: Vec::new() };
        for (tick, idx) in [(0u64, 0usize), (10, 1)] {
            for cam in 0..2 {
                let c = &state.clones[idx];
                let r_ig = c.q_ig.to_rot();
                let (u, v) = rig.ideal_pixel(&r_ig, &c.position, &feature, cam, &[]).unwrap();
                let noise = 1e-4 * rng.random_range(-1.0..1.0);
                track.obs.push(TrackObs {
                    tick,
                    cam,
                    pixel: Vector2::new(u + noise, v + noise),
                });
            }
        }
        let mut stats = MsckfStats::default();
        let pt = project_track(&state, &rig, &track, &mut stats).unwrap();
        assert_eq!(pt.residual.len(), 2 * 4 - 3);
        assert!(stats.max_nullspace_residual <= 1e-10);

        let stats = msckf_update(&mut state, &rig, &[track]).unwrap();
        assert!(stats.applied);
        assert_eq!(stats.tracks_used, 1);
    }

    #[test]
    fn track_manager_closes_lost_and_pruned_tracks() {
        let mut tm = TrackManager::default();
        tm.observe(1, 0, 0, Vector2::zeros());
        tm.observe(1, 10, 0, Vector2::zeros());
        tm.observe(2, 10, 0, Vector2::zeros());
        // Feature 1 not seen at tick 20 -> closed; feature 2 still alive.
        tm.observe(2, 20, 0, Vector2::zeros());
        let done = tm.take_finished(20, None);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].feature_id, 1);
        assert_eq!(tm.n_active(), 1);
        // Window prune at tick 10 forces feature 2 out too.
        let done = tm.take_finished(20, Some(10));
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].feature_id, 2);
    }
}
