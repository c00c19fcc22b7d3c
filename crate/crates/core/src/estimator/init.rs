//! Delayed initialization of the map transform and the target.
//!
//! Both follow the same pattern: build a stacked linearized system
//! `z̃ = H_x·δx + H_new·δy + n` around an initial guess for the new
//! parameters `y`, whiten it, QR-partition `H_new`, update the existing
//! state with the nullspace rows, then solve the range rows for the new
//! block and its joint covariance. New parameters carry no prior
//! information; the batch supplies all of it.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::msckf::triangulate;
use super::state::{EstimatorError, FilterState, MapTransform};
use super::update::{landmark_jacobians, point_jacobians};
use crate::geom::UnitQuat;
use crate::linalg::{qr_split, symmetrize};
use crate::sensors::CameraRig;
use crate::target::{
    required_measurements, stacked_bearing_system, transition_matrix, process_noise,
    TargetKinematics,
};

/// Stacked linearized system for delayed initialization.
pub struct DelayedInitSystem {
    pub residual: DVector<f64>,
    pub h_x: DMatrix<f64>,
    pub h_new: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

struct NewBlock {
    /// Correction to the new parameters' initial guess.
    delta: DVector<f64>,
    /// Cross covariance with the existing state, `dim × w`.
    cross: DMatrix<f64>,
    /// New block covariance, `w × w`.
    block: DMatrix<f64>,
}

fn delayed_init_core(
    state: &mut FilterState,
    sys: &DelayedInitSystem,
) -> Result<NewBlock, EstimatorError> {
    let rows = sys.residual.len();
    let w = sys.h_new.ncols();
    assert_eq!(sys.h_x.nrows(), rows);
    assert_eq!(sys.h_x.ncols(), state.dim());
    if rows < w {
        return Err(EstimatorError::Initialization(format!(
            "{rows} measurement rows cannot constrain {w} new parameters"
        )));
    }
    // Whiten so the nullspace and range noise components decouple.
    let chol = sys
        .noise
        .clone()
        .cholesky()
        .ok_or(EstimatorError::BadInnovation)?;
    let l = chol.l();
    let solve_lower = |m: &DMatrix<f64>| l.solve_lower_triangular(m).expect("L invertible");
    let r_w = l.solve_lower_triangular(&sys.residual).expect("L invertible");
    let hx_w = solve_lower(&sys.h_x);
    let hn_w = solve_lower(&sys.h_new);

    let (q1, q2, r1) = qr_split(&hn_w);
    let scale = hn_w.norm().max(1e-300);
    for i in 0..w {
        if r1[(i, i)].abs() < 1e-10 * scale {
            return Err(EstimatorError::Initialization(
                "new-parameter block is rank deficient".into(),
            ));
        }
    }

    let z1 = q1.transpose() * &r_w;
    let h1 = q1.transpose() * &hx_w;

    // Nullspace rows update the existing state (standard EKF, no gate).
    let mut delta_x = DVector::zeros(state.dim());
    if q2.ncols() > 0 {
        let z2 = q2.transpose() * &r_w;
        let h2 = q2.transpose() * &hx_w;
        let pht = &state.cov * h2.transpose();
        let s = &h2 * &pht + DMatrix::<f64>::identity(z2.len(), z2.len());
        let chol_s = s.clone().cholesky().ok_or(EstimatorError::BadInnovation)?;
        let k = chol_s.solve(&pht.transpose()).transpose();
        delta_x = &k * &z2;
        let hp = pht.transpose();
        let ksk = &k * &s * k.transpose();
        state.cov -= &k * &hp;
        state.cov -= (&k * &hp).transpose();
        state.cov += ksk;
        symmetrize(&mut state.cov);
        state.boxplus(&delta_x)?;
    }

    // Range rows initialize the new block.
    let resid1 = &z1 - &h1 * &delta_x;
    let delta = r1
        .solve_upper_triangular(&resid1)
        .ok_or(EstimatorError::BadInnovation)?;
    let x = r1
        .solve_upper_triangular(&h1)
        .ok_or(EstimatorError::BadInnovation)?; // R1⁻¹·H1
    let r1_inv = r1
        .solve_upper_triangular(&DMatrix::identity(w, w))
        .ok_or(EstimatorError::BadInnovation)?;
    let cross = -(&state.cov * x.transpose());
    let block = &x * &state.cov * x.transpose() + &r1_inv * r1_inv.transpose();
    Ok(NewBlock { delta, cross, block })
}

/// Bearing observations of one known landmark across the clone window.
#[derive(Debug, Clone)]
pub struct LandmarkWindowObs {
    /// Landmark position in the map frame, m.
    pub landmark_m: Vector3<f64>,
    /// `(tick, camera, pixel)` tuples.
    pub obs: Vec<(u64, usize, Vector2<f64>)>,
}

/// Closed-form absolute orientation (Kabsch/SVD) restricted afterwards
/// to yaw-plus-translation: fits `p_G ≈ R·p_M + t`, extracts the yaw of
/// `R`, and refits the translation with the yaw-only rotation.
pub fn fit_yaw_translation(
    pts_m: &[Vector3<f64>],
    pts_g: &[Vector3<f64>],
) -> Result<(f64, Vector3<f64>), EstimatorError> {
    assert_eq!(pts_m.len(), pts_g.len());
    let n = pts_m.len() as f64;
    let mbar: Vector3<f64> = pts_m.iter().sum::<Vector3<f64>>() / n;
    let gbar: Vector3<f64> = pts_g.iter().sum::<Vector3<f64>>() / n;
    let mut w = Matrix3::zeros();
    for (m, g) in pts_m.iter().zip(pts_g) {
        w += (g - gbar) * (m - mbar).transpose();
    }
    let svd = w.svd(true, true);
    let u = svd.u.ok_or(EstimatorError::Initialization("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or(EstimatorError::Initialization("SVD failed".into()))?;
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let r_fit = u * fix * v_t;
    let yaw = r_fit[(1, 0)].atan2(r_fit[(0, 0)]);
    // Yaw-only rotation M -> G.
    let r4 = UnitQuat::from_yaw(yaw).to_rot().transpose();
    let t = gbar - r4 * mbar;
    Ok((yaw, t))
}

/// Whitened least-squares solve of a delayed-init system for the new
/// parameters only (state held fixed); used for Gauss-Newton refinement
/// of the initial guess before the covariance is committed.
fn solve_new_only(sys: &DelayedInitSystem) -> Result<DVector<f64>, EstimatorError> {
    let chol = sys
        .noise
        .clone()
        .cholesky()
        .ok_or(EstimatorError::BadInnovation)?;
    let l = chol.l();
    let r_w = l.solve_lower_triangular(&sys.residual).expect("L invertible");
    let hn_w = l.solve_lower_triangular(&sys.h_new).expect("L invertible");
    let (q1, _, r1) = qr_split(&hn_w);
    let w = sys.h_new.ncols();
    let scale = hn_w.norm().max(1e-300);
    for i in 0..w {
        if r1[(i, i)].abs() < 1e-10 * scale {
            return Err(EstimatorError::Initialization(
                "new-parameter block is rank deficient".into(),
            ));
        }
    }
    r1.solve_upper_triangular(&(q1.transpose() * r_w))
        .ok_or(EstimatorError::BadInnovation)
}

/// Delayed initialization of the 4-DOF map transform from a window of
/// landmark bearings: multi-view triangulation in G, point-set
/// alignment for the guess, Gauss-Newton refinement, then the batched
/// linearized system.
pub fn init_map_transform(
    state: &mut FilterState,
    rig: &CameraRig,
    windows: &[LandmarkWindowObs],
) -> Result<(), EstimatorError> {
    if state.map.is_some() {
        return Err(EstimatorError::Initialization("map transform already initialized".into()));
    }
    // Triangulate landmarks in G from their measured rays and rank them
    // by predicted depth precision sigma_d = sigma_bearing * d / angle; a
    // sliver of parallax at long range yields meters of depth error and
    // would poison the alignment.
    const MIN_RAY_ANGLE: f64 = 0.01; // rad
    let sigma_bearing = state.config.pixel_std_norm;
    let mut candidates: Vec<(f64, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for wobs in windows {
        let mut rays = Vec::new();
        for (tick, cam, pixel) in &wobs.obs {
            if let Some(idx) = state.clone_index_by_tick(*tick) {
                let c = &state.clones[idx];
                let r_ig = c.q_ig.to_rot();
                let r_cg = rig.r_cg(&r_ig);
                let center = rig.camera_center(&r_ig, &c.position, *cam);
                let dir = r_cg.transpose() * Vector3::new(pixel.x, pixel.y, 1.0).normalize();
                rays.push((center, dir));
            }
        }
        if rays.len() < 2 {
            continue;
        }
        let mut max_angle: f64 = 0.0;
        for i in 0..rays.len() {
            for j in (i + 1)..rays.len() {
                max_angle = max_angle.max(rays[i].1.dot(&rays[j].1).clamp(-1.0, 1.0).acos());
            }
        }
        if max_angle < MIN_RAY_ANGLE {
            continue;
        }
        if let Ok((p_g, _)) = triangulate(&rays) {
            let range = (p_g - rays[0].0).norm();
            candidates.push((sigma_bearing * range / max_angle, wobs.landmark_m, p_g));
        }
    }
    // Best-constrained landmarks first; the alignment needs only a
    // handful of good ones.
    candidates.retain(|c| c.0 <= 0.5);
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    candidates.truncate(10);
    if candidates.len() < 3 {
        return Err(EstimatorError::Initialization(format!(
            "need at least 3 well-conditioned triangulated landmarks, have {}",
            candidates.len()
        )));
    }
    let pts_m: Vec<Vector3<f64>> = candidates.iter().map(|c| c.1).collect();
    let pts_g: Vec<Vector3<f64>> = candidates.iter().map(|c| c.2).collect();
    // Collinear landmark sets cannot pin yaw + translation.
    {
        let n = pts_m.len() as f64;
        let mbar: Vector3<f64> = pts_m.iter().sum::<Vector3<f64>>() / n;
        let mut centered = DMatrix::zeros(pts_m.len(), 3);
        for (i, p) in pts_m.iter().enumerate() {
            centered.view_mut((i, 0), (1, 3)).copy_from(&(p - mbar).transpose());
        }
        let svals = centered.svd(false, false).singular_values;
        if svals[1] < 1e-6 * svals[0].max(1e-300) {
            return Err(EstimatorError::Initialization("landmark set is collinear".into()));
        }
    }
    let (mut yaw, mut p_m) = fit_yaw_translation(&pts_m, &pts_g)?;

    // Build the stacked system around the current guess.
    let build = |state: &FilterState,
                 yaw: f64,
                 p_m: Vector3<f64>|
     -> Result<DelayedInitSystem, EstimatorError> {
        let mut scratch = state.clone();
        scratch.map = Some(MapTransform { yaw, p_m_in_g: p_m });
        let d = state.dim();
        let mut rows_r = Vec::new();
        let mut rows_hx: Vec<DMatrix<f64>> = Vec::new();
        let mut rows_hn: Vec<DMatrix<f64>> = Vec::new();
        for wobs in windows {
            for (tick, cam, pixel) in &wobs.obs {
                let Some(idx) = state.clone_index_by_tick(*tick) else { continue };
                let Some(j) = landmark_jacobians(&scratch, rig, &wobs.landmark_m, idx, *cam)?
                else {
                    continue;
                };
                let mut hx = DMatrix::zeros(2, d);
                let off = state.clone_offset(idx);
                hx.view_mut((0, off), (2, 3)).copy_from(&j.h_theta);
                hx.view_mut((0, off + 3), (2, 3)).copy_from(&j.h_p);
                let mut hn = DMatrix::zeros(2, 4);
                hn.view_mut((0, 0), (2, 1)).copy_from(&j.h_psi);
                hn.view_mut((0, 1), (2, 3)).copy_from(&j.h_pm);
                rows_hx.push(hx);
                rows_hn.push(hn);
                rows_r.push(Vector2::new(pixel.x - j.predicted.x, pixel.y - j.predicted.y));
            }
        }
        let m = 2 * rows_r.len();
        if m < 4 {
            return Err(EstimatorError::Initialization("too few usable landmark pixels".into()));
        }
        let mut sys = DelayedInitSystem {
            residual: DVector::zeros(m),
            h_x: DMatrix::zeros(m, d),
            h_new: DMatrix::zeros(m, 4),
            noise: DMatrix::identity(m, m)
                * (state.config.pixel_std_norm * state.config.pixel_std_norm),
        };
        for (k, r) in rows_r.iter().enumerate() {
            sys.residual[2 * k] = r.x;
            sys.residual[2 * k + 1] = r.y;
            sys.h_x.view_mut((2 * k, 0), (2, d)).copy_from(&rows_hx[k]);
            sys.h_new.view_mut((2 * k, 0), (2, 4)).copy_from(&rows_hn[k]);
        }
        Ok(sys)
    };

    // Gauss-Newton refinement of the guess (state untouched) so that the
    // final linearization error is far below the committed covariance.
    for _ in 0..3 {
        let sys = build(state, yaw, p_m)?;
        let dy = solve_new_only(&sys)?;
        yaw += 2.0 * (0.5 * dy[0]).atan();
        p_m += Vector3::new(dy[1], dy[2], dy[3]);
        if dy.norm() < 1e-10 {
            break;
        }
    }

    let sys = build(state, yaw, p_m)?;
    let nb = delayed_init_core(state, &sys)?;
    let at = state.dim(); // map block goes at the end
    state.insert_cov_block(at, &nb.cross, &nb.block);
    state.map = Some(MapTransform {
        yaw: yaw + 2.0 * (0.5 * nb.delta[0]).atan(),
        p_m_in_g: p_m + Vector3::new(nb.delta[1], nb.delta[2], nb.delta[3]),
    });
    Ok(())
}

/// One target bearing used for initialization (either stereo camera).
#[derive(Debug, Clone, Copy)]
pub struct TargetInitObs {
    pub tick: u64,
    pub cam: usize,
    pub pixel: Vector2<f64>,
}

/// Least-squares recovery of the initial target state and per-image
/// depths from the stacked bearing system. Returns
/// `(initial state, depths)`.
pub fn solve_target_ls(
    order: usize,
    times_since_first: &[f64],
    bearings_g: &[Vector3<f64>],
    camera_centers: &[Vector3<f64>],
) -> Result<(DVector<f64>, Vec<f64>), EstimatorError> {
    let m = times_since_first.len();
    let y = stacked_bearing_system(order, times_since_first, bearings_g);
    let svd = y.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(EstimatorError::Initialization(format!(
            "stacked bearing system is rank deficient ({m} epochs, order {order}: needs 2M >= 3(N+1) and generic geometry)"
        )));
    }
    let mut rhs = DVector::zeros(3 * m);
    for (j, c) in camera_centers.iter().enumerate() {
        rhs[3 * j] = c.x;
        rhs[3 * j + 1] = c.y;
        rhs[3 * j + 2] = c.z;
    }
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| EstimatorError::Initialization(e.to_string()))?;
    let t_dim = 3 * (order + 1);
    let t0 = sol.rows(0, t_dim).into_owned();
    let depths = (0..m).map(|j| sol[t_dim + j]).collect();
    Ok((t0, depths))
}

/// Delayed initialization of the target: least-squares over the bearing
/// window (each stereo image counts as one measuring camera with its own
/// center), propagation of the initial guess to every epoch, a batched
/// system of bearing measurements plus motion-model pseudo-measurements,
/// and marginalization of all but the newest target state.
pub fn init_target(
    state: &mut FilterState,
    rig: &CameraRig,
    obs: &[TargetInitObs],
    imu_rate_hz: f64,
) -> Result<(), EstimatorError> {
    if state.target.is_some() {
        return Err(EstimatorError::Initialization("target already initialized".into()));
    }
    let order = state.config.target_order;
    let sigma = state.config.target_sigma;
    let t_dim = 3 * (order + 1);
    let m_req = required_measurements(order);

    // Usable images: those whose epoch still has a live clone.
    let mut images: Vec<(usize, TargetInitObs)> = Vec::new();
    for o in obs {
        if let Some(idx) = state.clone_index_by_tick(o.tick) {
            images.push((idx, *o));
        }
    }
    if images.len() < m_req {
        return Err(EstimatorError::Initialization(format!(
            "need at least {m_req} bearing measurements for order {order}, have {}",
            images.len()
        )));
    }
    // Distinct imaging epochs, oldest first.
    let mut epoch_ticks: Vec<u64> = images.iter().map(|(_, o)| o.tick).collect();
    epoch_ticks.sort_unstable();
    epoch_ticks.dedup();
    if order >= 1 && epoch_ticks.len() < 2 {
        return Err(EstimatorError::Initialization(
            "moving-target initialization needs at least two imaging epochs".into(),
        ));
    }
    let epoch_index = |tick: u64| epoch_ticks.binary_search(&tick).unwrap();
    let t0_time = epoch_ticks[0] as f64 / imu_rate_hz;
    let epoch_times: Vec<f64> =
        epoch_ticks.iter().map(|&t| t as f64 / imu_rate_hz - t0_time).collect();

    let mut times = Vec::new();
    let mut bearings = Vec::new();
    let mut centers = Vec::new();
    for (idx, o) in &images {
        let c = &state.clones[*idx];
        let r_ig = c.q_ig.to_rot();
        let r_cg = rig.r_cg(&r_ig);
        times.push(epoch_times[epoch_index(o.tick)]);
        bearings.push(r_cg.transpose() * Vector3::new(o.pixel.x, o.pixel.y, 1.0).normalize());
        centers.push(rig.camera_center(&r_ig, &c.position, o.cam));
    }
    let (t0, depths) = solve_target_ls(order, &times, &bearings, &centers)?;
    if depths.iter().any(|&d| d < 0.05) {
        return Err(EstimatorError::Initialization(
            "recovered a non-positive target depth (degenerate geometry)".into(),
        ));
    }

    // Propagate the guess to every epoch.
    let guesses: Vec<DVector<f64>> = epoch_times
        .iter()
        .map(|&dt| transition_matrix(order, dt).expect("dt >= 0") * &t0)
        .collect();

    // Batched system over y = [T_0 … T_{M-1}] (one block per epoch).
    let m_epochs = epoch_ticks.len();
    let w = t_dim * m_epochs;
    let d = state.dim();
    let pix_rows = 2 * images.len();
    let motion_rows = t_dim * (m_epochs - 1);
    let rows = pix_rows + motion_rows;
    let mut sys = DelayedInitSystem {
        residual: DVector::zeros(rows),
        h_x: DMatrix::zeros(rows, d),
        h_new: DMatrix::zeros(rows, w),
        noise: DMatrix::zeros(rows, rows),
    };
    let sigma2 = state.config.pixel_std_norm * state.config.pixel_std_norm;
    for (j, (idx, o)) in images.iter().enumerate() {
        let c = &state.clones[*idx];
        let e = epoch_index(o.tick);
        let guess_pos = Vector3::new(guesses[e][0], guesses[e][1], guesses[e][2]);
        let pj = point_jacobians(rig, o.cam, &c.q_ig, &c.position, &guess_pos).ok_or_else(|| {
            EstimatorError::Initialization("target guess is behind the camera".into())
        })?;
        let off = state.clone_offset(*idx);
        sys.h_x.view_mut((2 * j, off), (2, 3)).copy_from(&pj.h_theta);
        sys.h_x.view_mut((2 * j, off + 3), (2, 3)).copy_from(&pj.h_p);
        sys.h_new.view_mut((2 * j, t_dim * e), (2, 3)).copy_from(&pj.h_point);
        sys.residual[2 * j] = o.pixel.x - pj.predicted.x;
        sys.residual[2 * j + 1] = o.pixel.y - pj.predicted.y;
        sys.noise[(2 * j, 2 * j)] = sigma2;
        sys.noise[(2 * j + 1, 2 * j + 1)] = sigma2;
    }
    // Motion-model pseudo-measurements 0 = -T_{k+1} + A·T_k + n.
    for k in 0..(m_epochs - 1) {
        let dt = epoch_times[k + 1] - epoch_times[k];
        let a = transition_matrix(order, dt).expect("dt >= 0");
        let q = process_noise(order, dt, sigma).expect("dt > 0");
        let at = pix_rows + t_dim * k;
        sys.h_new.view_mut((at, t_dim * k), (t_dim, t_dim)).copy_from(&a);
        for i in 0..t_dim {
            sys.h_new[(at + i, t_dim * (k + 1) + i)] = -1.0;
        }
        let pred = &a * &guesses[k];
        for i in 0..t_dim {
            sys.residual[at + i] = guesses[k + 1][i] - pred[i];
        }
        sys.noise.view_mut((at, at), (t_dim, t_dim)).copy_from(&q);
    }

    let nb = delayed_init_core(state, &sys)?;
    // Keep only the newest target state; dropping the other blocks of the
    // joint covariance marginalizes them.
    let last = w - t_dim;
    let mut t_new = guesses[m_epochs - 1].clone();
    for i in 0..t_dim {
        t_new[i] += nb.delta[last + i];
    }
    let cross_last = nb.cross.columns(last, t_dim).into_owned();
    let block_last = nb.block.view((last, last), (t_dim, t_dim)).into_owned();
    state.insert_cov_block(15, &cross_last, &block_last);
    state.target = Some(TargetKinematics::new(order, t_new, sigma));
    Ok(())
}
