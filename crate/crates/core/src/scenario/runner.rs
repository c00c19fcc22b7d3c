//! Scenario execution: wires plant, sensors, estimator, planner,
//! controller, and radiation detection into the three-phase mission.
//!
//! The planner and controller consume estimator outputs only; the truth
//! state stays on the sensor side of the pipeline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig, ScenarioMode, TargetMotion};
use super::content::generate_world_content;
use super::report::{DetectionSummary, EpochRecord, RunReport, RunSummary};
use crate::estimator::{
    init_map_transform, init_target, msckf_update, propagate, update_landmarks, update_target,
    EstimatorError, FilterConfig, FilterState, ImuMeanState, ImuNoiseParams, LandmarkWindowObs,
    MapTransform, TargetInitObs, TrackManager,
};
use crate::geom::UnitQuat;
use crate::nav::{desired_velocity, NavWorld};
use crate::plant::{control_law, desired_thrust_vector, AttitudeRef, QuadrotorPlant};
use crate::radiation::{
    likelihood_ratio_test, perceived_rates, simulate_counts, solve_detection, SampledSignal,
};
use crate::sensors::{
    CameraRig, ImuSample, LogRecord, MeasurementLog, PixelKind, RigidTruth,
};
use crate::target::{process_noise, transition_matrix};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("estimator failure at t = {t}: {source}")]
    Estimator { t: f64, source: EstimatorError },
    #[error("state diverged (non-finite) at t = {t}; state dump:\n{dump}")]
    Diverged { t: f64, dump: String },
    #[error("initialization did not complete before the scenario ended ({what})")]
    InitTimeout { what: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Camera rig built from the config.
pub fn build_rig(cfg: &ScenarioConfig) -> CameraRig {
    let mut rig = CameraRig::with_pitch_deg(cfg.camera.pitch_deg);
    rig.baseline = cfg.camera.baseline_m;
    rig.focal_px = cfg.camera.focal_px;
    rig.pixel_std_px = cfg.camera.pixel_std_px;
    rig.rate_hz = cfg.camera.rate_hz;
    rig.fov_half_tan = (cfg.camera.fov_deg.to_radians() / 2.0).tan();
    rig
}

fn filter_config(cfg: &ScenarioConfig) -> FilterConfig {
    FilterConfig {
        imu_noise: ImuNoiseParams {
            gyro_noise: cfg.imu.gyro_noise_density,
            accel_noise: cfg.imu.accel_noise_density,
            gyro_walk: cfg.imu.gyro_walk_density,
            accel_walk: cfg.imu.accel_walk_density,
        },
        pixel_std_norm: cfg.camera.pixel_std_px * cfg.estimator.pixel_noise_inflation
            / cfg.camera.focal_px,
        target_order: cfg.target.order,
        target_sigma: cfg.target.sigma,
        max_clones: cfg.estimator.max_clones,
        gating: cfg.estimator.gating,
        qr_compression: cfg.estimator.qr_compression,
    }
}

/// Measurement-to-filter pipeline shared by live runs and log replay.
pub struct Pipeline {
    pub filter: FilterState,
    pub rig: CameraRig,
    pub landmarks_m: Vec<Vector3<f64>>,
    pub imu_rate: f64,
    tracks: TrackManager,
    landmark_window: BTreeMap<usize, Vec<(u64, usize, Vector2<f64>)>>,
    target_window: Vec<TargetInitObs>,
    target_init_epochs: usize,
    pending_imu: Vec<ImuSample>,
    pub events: Vec<String>,
    pub msckf_tracks_used: usize,
    pub msckf_tracks_dropped: usize,
    pub max_nullspace_residual: f64,
    pub min_cov_eigenvalue: f64,
    landmarks_enabled: bool,
}

impl Pipeline {
    pub fn new(
        cfg: &ScenarioConfig,
        filter: FilterState,
        rig: CameraRig,
        landmarks_m: Vec<Vector3<f64>>,
    ) -> Self {
        Self {
            filter,
            rig,
            landmarks_enabled: !landmarks_m.is_empty(),
            landmarks_m,
            imu_rate: cfg.imu.rate_hz,
            tracks: TrackManager::default(),
            landmark_window: BTreeMap::new(),
            target_window: Vec::new(),
            target_init_epochs: cfg.estimator.target_init_epochs.max(1),
            pending_imu: Vec::new(),
            events: Vec::new(),
            msckf_tracks_used: 0,
            msckf_tracks_dropped: 0,
            max_nullspace_residual: 0.0,
            min_cov_eigenvalue: f64::INFINITY,
        }
    }

    fn time_of(&self, tick: u64) -> f64 {
        tick as f64 / self.imu_rate
    }

    fn event(&mut self, tick: u64, text: String) {
        self.events.push(format!("t={} {}", self.time_of(tick), text));
    }

    pub fn push_imu(&mut self, sample: ImuSample) {
        self.pending_imu.push(sample);
    }

    /// Full camera-epoch processing: covariance catch-up, cloning,
    /// updates, initialization attempts, MSCKF, and window pruning.
    pub fn process_epoch(
        &mut self,
        tick: u64,
        feature_obs: &[(usize, usize, Vector2<f64>)],
        landmark_obs: &[(usize, usize, Vector2<f64>)],
        target_obs: &[(usize, Vector2<f64>)],
    ) -> Result<(), ScenarioError> {
        let t = self.time_of(tick);
        let wrap = |source: EstimatorError| ScenarioError::Estimator { t, source };
        if self.pending_imu.len() >= 2 {
            propagate(&mut self.filter, &self.pending_imu, self.imu_rate).map_err(wrap)?;
        }
        if let Some(last) = self.pending_imu.pop() {
            self.pending_imu.clear();
            self.pending_imu.push(last);
        }
        if !self.filter.imu.position.iter().all(|v| v.is_finite()) {
            return Err(ScenarioError::Diverged {
                t,
                dump: format!("{:#?}", self.filter.imu),
            });
        }

        self.filter.augment_clone(tick);
        let newest = self.filter.clones.len() - 1;

        // Feature tracks.
        for (id, cam, px) in feature_obs {
            self.tracks.observe(*id, tick, *cam, *px);
        }

        // Landmarks: accumulate for delayed init, then switch to EKF
        // updates once the transform exists.
        if self.landmarks_enabled {
            if self.filter.map.is_none() {
                for (id, cam, px) in landmark_obs {
                    self.landmark_window.entry(*id).or_default().push((tick, *cam, *px));
                }
                let oldest = self.filter.clones.first().map(|c| c.tick).unwrap_or(0);
                for obs in self.landmark_window.values_mut() {
                    obs.retain(|(t, _, _)| *t >= oldest);
                }
                self.landmark_window.retain(|_, obs| !obs.is_empty());
                // Wait for a full clone window so the alignment sees the
                // best available baseline.
                if self.filter.clones.len() >= self.filter.config.max_clones {
                    let windows: Vec<LandmarkWindowObs> = self
                        .landmark_window
                        .iter()
                        .map(|(id, obs)| LandmarkWindowObs {
                            landmark_m: self.landmarks_m[*id],
                            obs: obs.clone(),
                        })
                        .collect();
                    match init_map_transform(&mut self.filter, &self.rig, &windows) {
                        Ok(()) => {
                            let m = self.filter.map.as_ref().unwrap();
                            self.event(
                                tick,
                                format!(
                                    "map_initialized yaw={} p=({},{},{})",
                                    m.yaw, m.p_m_in_g.x, m.p_m_in_g.y, m.p_m_in_g.z
                                ),
                            );
                            self.landmark_window.clear();
                        }
                        Err(EstimatorError::Initialization(_)) => {}
                        Err(e) => return Err(wrap(e)),
                    }
                }
            } else if !landmark_obs.is_empty() {
                let obs: Vec<(Vector3<f64>, usize, Vector2<f64>)> = landmark_obs
                    .iter()
                    .map(|(id, cam, px)| (self.landmarks_m[*id], *cam, *px))
                    .collect();
                update_landmarks(&mut self.filter, &self.rig, &obs, newest).map_err(wrap)?;
            }
        }

        // Target: delayed init from the left camera, then per-camera EKF
        // updates.
        if self.filter.target.is_none() {
            for (cam, px) in target_obs {
                self.target_window.push(TargetInitObs { tick, cam: *cam, pixel: *px });
            }
            let oldest = self.filter.clones.first().map(|c| c.tick).unwrap_or(0);
            self.target_window.retain(|o| o.tick >= oldest);
            let mut epochs: Vec<u64> = self.target_window.iter().map(|o| o.tick).collect();
            epochs.dedup();
            if epochs.len() >= self.target_init_epochs {
                match init_target(&mut self.filter, &self.rig, &self.target_window, self.imu_rate)
                {
                    Ok(()) => {
                        let p = self.filter.target.as_ref().unwrap().position();
                        self.event(
                            tick,
                            format!("target_initialized p=({},{},{})", p.x, p.y, p.z),
                        );
                        self.target_window.clear();
                    }
                    Err(EstimatorError::Initialization(_)) => {}
                    Err(e) => return Err(wrap(e)),
                }
            }
        } else {
            for (cam, px) in target_obs {
                update_target(&mut self.filter, &self.rig, *cam, px).map_err(wrap)?;
            }
        }

        // MSCKF on finished tracks, then prune the window.
        let over = self.filter.clones.len() > self.filter.config.max_clones;
        let prune_tick = if over { Some(self.filter.clones[0].tick) } else { None };
        let finished = self.tracks.take_finished(tick, prune_tick);
        if !finished.is_empty() {
            let stats = msckf_update(&mut self.filter, &self.rig, &finished).map_err(wrap)?;
            self.msckf_tracks_used += stats.tracks_used;
            self.msckf_tracks_dropped += stats.tracks_dropped + stats.tracks_gated;
            self.max_nullspace_residual =
                self.max_nullspace_residual.max(stats.max_nullspace_residual);
        }
        while self.filter.clones.len() > self.filter.config.max_clones {
            self.filter.prune_clone(0);
        }
        let min_eig = crate::linalg::min_eigenvalue(&self.filter.cov);
        self.min_cov_eigenvalue = self.min_cov_eigenvalue.min(min_eig);
        Ok(())
    }
}

/// True target motion integrator (map frame).
struct TargetTruth {
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    motion: TargetMotion,
    chol_q: Option<DMatrix<f64>>,
    a_step: DMatrix<f64>,
}

impl TargetTruth {
    fn new(cfg: &ScenarioConfig, dt: f64) -> Self {
        let chol_q = match cfg.target.motion {
            TargetMotion::Line => None,
            TargetMotion::NoisyConstantVelocity => {
                let q = process_noise(1, dt, cfg.target.sigma).unwrap();
                Some(q.cholesky().expect("Q_Td is SPD").l())
            }
        };
        Self {
            position: Vector3::from(cfg.target.start),
            velocity: Vector3::from(cfg.target.velocity),
            motion: cfg.target.motion,
            chol_q,
            a_step: transition_matrix(1, dt).unwrap(),
        }
    }

    fn step<R: Rng>(&mut self, dt: f64, rng: &mut R) {
        match self.motion {
            TargetMotion::Line => {
                self.position += self.velocity * dt;
            }
            TargetMotion::NoisyConstantVelocity => {
                let mut x = DVector::zeros(6);
                x.rows_mut(0, 3).copy_from(&self.position);
                x.rows_mut(3, 3).copy_from(&self.velocity);
                let mut eta = DVector::zeros(6);
                for i in 0..6 {
                    eta[i] = StandardNormal.sample(rng);
                }
                let x2 = &self.a_step * x + self.chol_q.as_ref().unwrap() * eta;
                self.position = Vector3::new(x2[0], x2[1], x2[2]);
                self.velocity = Vector3::new(x2[3], x2[4], x2[5]);
            }
        }
    }
}

/// Caps the velocity component toward each workspace face by the
/// time-to-boundary rule `v_toward <= distance/τ`, and the overall speed
/// near interior obstacles. Lateral cruise at altitude stays unthrottled.
fn shape_velocity(world: &NavWorld, p: &Vector3<f64>, v: Vector3<f64>) -> Vector3<f64> {
    const TAU: f64 = 0.6;
    let mut out = v;
    let (bmin, bmax) = world.boundary.aabb();
    for a in 0..3 {
        let dist_lo = (p[a] - bmin[a]).max(0.0);
        let dist_hi = (bmax[a] - p[a]).max(0.0);
        out[a] = out[a].clamp(-(dist_lo / TAU).max(0.02), (dist_hi / TAU).max(0.02));
    }
    let mut obstacle_dist = f64::INFINITY;
    for ob in world.obstacles.iter() {
        let (omin, omax) = ob.aabb();
        let mut outside2 = 0.0;
        for a in 0..3 {
            let d = (omin[a] - p[a]).max(p[a] - omax[a]).max(0.0);
            outside2 += d * d;
        }
        obstacle_dist = obstacle_dist.min(outside2.sqrt());
    }
    if obstacle_dist < 1.2 {
        let cap = (obstacle_dist / TAU).max(0.3);
        let speed = out.norm();
        if speed > cap {
            out *= cap / speed;
        }
    }
    out
}

/// Euclidean clearance of a position from every obstacle and the
/// boundary, approximated through the bounding boxes (squircles are
/// box-like at high squareness; the box metric under-estimates interior
/// obstacle clearance, which errs on the safe side for the speed
/// governor). Negative inside an obstacle or outside the workspace.
fn clearance(world: &NavWorld, p: &Vector3<f64>) -> f64 {
    let (bmin, bmax) = world.boundary.aabb();
    let mut min_clear = f64::INFINITY;
    for a in 0..3 {
        min_clear = min_clear.min(p[a] - bmin[a]).min(bmax[a] - p[a]);
    }
    for ob in &world.obstacles {
        let (omin, omax) = ob.aabb();
        let mut outside2 = 0.0;
        let mut inside = f64::NEG_INFINITY;
        for a in 0..3 {
            let lo = omin[a] - p[a];
            let hi = p[a] - omax[a];
            let d = lo.max(hi);
            if d > 0.0 {
                outside2 += d * d;
            } else {
                inside = inside.max(d);
            }
        }
        let d = if outside2 > 0.0 { outside2.sqrt() } else { inside };
        min_clear = min_clear.min(d);
    }
    min_clear
}

fn pose_nees(filter: &FilterState, q_true: &UnitQuat, p_true: &Vector3<f64>) -> f64 {
    let dtheta = q_true.boxminus(&filter.imu.q_ig);
    let dp = p_true - filter.imu.position;
    let mut e = DVector::zeros(6);
    for k in 0..3 {
        e[k] = dtheta[k];
        e[3 + k] = dp[k];
    }
    let idx = [0usize, 1, 2, 12, 13, 14];
    let mut p = DMatrix::zeros(6, 6);
    for (r, &ir) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate() {
            p[(r, c)] = filter.cov[(ir, ic)];
        }
    }
    match p.cholesky() {
        Some(ch) => e.dot(&ch.solve(&e)),
        None => f64::NAN,
    }
}

fn target_nees(filter: &FilterState, p_true: &Vector3<f64>) -> Option<f64> {
    let t = filter.target.as_ref()?;
    let dp = p_true - t.position();
    let off = filter.target_offset();
    let mut p = DMatrix::zeros(3, 3);
    for r in 0..3 {
        for c in 0..3 {
            p[(r, c)] = filter.cov[(off + r, off + c)];
        }
    }
    let e = DVector::from_vec(vec![dp.x, dp.y, dp.z]);
    p.cholesky().map(|ch| e.dot(&ch.solve(&e)))
}

/// Converts a map-frame rigid truth into the filter's startup frame G.
/// `v_G = R_MGᵀ·v_M` since `rot_mg` takes G coordinates into M.
fn truth_to_g(truth: &RigidTruth, t_true: &MapTransform) -> (UnitQuat, Vector3<f64>, Vector3<f64>) {
    let q_im = UnitQuat::from_rot(&truth.rotation.transpose());
    let q_ig = q_im.mul(&UnitQuat::from_yaw(t_true.yaw));
    let p_g = t_true.map_point_to_g(&truth.position);
    let v_g = t_true.rot_mg().transpose() * truth.velocity;
    (q_ig, p_g, v_g)
}

/// Per-run working state shared by both scenario drivers.
struct Recorder {
    epochs: Vec<EpochRecord>,
    dist_true: Vec<(f64, f64)>,
    dist_est: Vec<(f64, f64)>,
}

impl Recorder {
    fn record(
        &mut self,
        t: f64,
        phase: u8,
        pipeline: &Pipeline,
        truth: &RigidTruth,
        target_pos_m: &Vector3<f64>,
        t_true: &MapTransform,
        in_detection_window: bool,
    ) {
        let (q_true, p_true_g, _) = truth_to_g(truth, t_true);
        let target_g = t_true.map_point_to_g(target_pos_m);
        let f = &pipeline.filter;
        let rel_true = (truth.position - target_pos_m).norm();
        let est_target = f.target.as_ref().map(|tg| tg.position());
        let rel_est = est_target.map(|tp| (f.imu.position - tp).norm());
        // Report estimates next to the truth in the map frame (via the
        // true transform; evaluation only) with the covariance diagonal
        // rotated accordingly.
        let report_map = f.map.clone().unwrap_or_else(|| t_true.clone());
        let r_mg = report_map.rot_mg();
        let rot_sigma3 = |cov_block: nalgebra::Matrix3<f64>| -> [f64; 3] {
            let m = r_mg * cov_block * r_mg.transpose();
            [
                3.0 * m[(0, 0)].max(0.0).sqrt(),
                3.0 * m[(1, 1)].max(0.0).sqrt(),
                3.0 * m[(2, 2)].max(0.0).sqrt(),
            ]
        };
        let pos_cov = nalgebra::Matrix3::from_fn(|r, c| f.cov[(12 + r, 12 + c)]);
        let t_off = f.target_offset();
        let sigma3_t = f.target.as_ref().map(|_| {
            rot_sigma3(nalgebra::Matrix3::from_fn(|r, c| f.cov[(t_off + r, t_off + c)]))
        });
        self.epochs.push(EpochRecord {
            t,
            phase,
            truth_p: truth.position.into(),
            est_p: report_map.g_point_to_map(&f.imu.position).into(),
            sigma3_p: rot_sigma3(pos_cov),
            truth_target: (*target_pos_m).into(),
            est_target: est_target.map(|p| report_map.g_point_to_map(&p).into()),
            sigma3_target: sigma3_t,
            rel_dist_true: rel_true,
            rel_dist_est: rel_est,
            nees_pose: pose_nees(f, &q_true, &p_true_g),
            nees_target: target_nees(f, &target_g),
        });
        if in_detection_window {
            self.dist_true.push((t, rel_true));
            if let Some(d) = rel_est {
                self.dist_est.push((t, d));
            }
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    cfg.validate()?;
    match cfg.mode {
        ScenarioMode::Chase => run_chase(cfg),
        ScenarioMode::EstimationOnly => run_hallway(cfg),
    }
}

/// Writes the report (and optional measurement log) under `dir`.
pub fn run_scenario_to_dir(
    cfg: &ScenarioConfig,
    dir: &std::path::Path,
) -> Result<RunReport, ScenarioError> {
    let report = run_scenario(cfg)?;
    report.write(dir)?;
    Ok(report)
}

struct RngStreams {
    world: ChaCha12Rng,
    imu: ChaCha12Rng,
    pixels: ChaCha12Rng,
    counts: ChaCha12Rng,
    init: ChaCha12Rng,
    misc: ChaCha12Rng,
}

impl RngStreams {
    fn new(seed: u64) -> Self {
        Self {
            world: ChaCha12Rng::seed_from_u64(seed ^ 0x7765_6c74),
            imu: ChaCha12Rng::seed_from_u64(seed ^ 0x696d_7531),
            pixels: ChaCha12Rng::seed_from_u64(seed ^ 0x7069_7831),
            counts: ChaCha12Rng::seed_from_u64(seed ^ 0x636e_7431),
            init: ChaCha12Rng::seed_from_u64(seed ^ 0x696e_6974),
            misc: ChaCha12Rng::seed_from_u64(seed ^ 0x6d69_7363),
        }
    }
}

fn initial_filter(
    cfg: &ScenarioConfig,
    truth: &RigidTruth,
    t_true: &MapTransform,
    rng: &mut ChaCha12Rng,
) -> (FilterState, Vector3<f64>, Vector3<f64>) {
    let (q_ig, p_g, v_g) = truth_to_g(truth, t_true);
    let mut imu = ImuMeanState {
        q_ig,
        bias_gyro: Vector3::zeros(),
        velocity: v_g,
        bias_accel: Vector3::zeros(),
        position: p_g,
    };
    let e = &cfg.estimator;
    let randn3 = |rng: &mut ChaCha12Rng, s: f64| {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let c: f64 = StandardNormal.sample(rng);
        Vector3::new(s * a, s * b, s * c)
    };
    // True biases drawn from the filter's prior; the filter starts at
    // zero bias and (optionally) a perturbed pose draw.
    let true_bias_gyro = if e.perturb_init { randn3(rng, e.init_bias_gyro_std) } else { Vector3::zeros() };
    let true_bias_accel = if e.perturb_init { randn3(rng, e.init_bias_accel_std) } else { Vector3::zeros() };
    if e.perturb_init {
        imu.q_ig = imu.q_ig.boxplus(&randn3(rng, e.init_att_std));
        imu.velocity += randn3(rng, e.init_vel_std);
        imu.position += randn3(rng, e.init_pos_std);
    }
    let mut filter = FilterState::new(imu, filter_config(cfg), 0.0);
    filter.set_initial_std(
        e.init_att_std,
        e.init_bias_gyro_std,
        e.init_vel_std,
        e.init_bias_accel_std,
        e.init_pos_std,
    );
    (filter, true_bias_gyro, true_bias_accel)
}

/// Deterministically selects up to `cap` nearest visible points and
/// returns their noisy stereo pixel observations.
#[allow(clippy::too_many_arguments)]
fn observe_points(
    rig: &CameraRig,
    truth: &RigidTruth,
    points: &[[f64; 3]],
    occluders: &[crate::sensors::Aabb],
    cap: usize,
    sigma: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<(usize, usize, Vector2<f64>)> {
    let r_im = truth.rotation.transpose();
    let mut visible: Vec<(usize, f64)> = Vec::new();
    for (id, p) in points.iter().enumerate() {
        let pv = Vector3::from(*p);
        if rig.ideal_pixel(&r_im, &truth.position, &pv, 0, occluders).is_some()
            && rig.ideal_pixel(&r_im, &truth.position, &pv, 1, occluders).is_some()
        {
            visible.push((id, (pv - truth.position).norm()));
        }
    }
    visible.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    visible.truncate(cap);
    let mut obs = Vec::new();
    for (id, _) in visible {
        let pv = Vector3::from(points[id]);
        for cam in 0..2 {
            if let Some((u, v)) = rig.ideal_pixel(&r_im, &truth.position, &pv, cam, occluders) {
                let nu: f64 = StandardNormal.sample(rng);
                let nv: f64 = StandardNormal.sample(rng);
                obs.push((id, cam, Vector2::new(u + sigma * nu, v + sigma * nv)));
            }
        }
    }
    obs
}

fn observe_target(
    rig: &CameraRig,
    truth: &RigidTruth,
    target_m: &Vector3<f64>,
    occluders: &[crate::sensors::Aabb],
    sigma: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<(usize, Vector2<f64>)> {
    let r_im = truth.rotation.transpose();
    let mut obs = Vec::new();
    for cam in 0..2 {
        if let Some((u, v)) = rig.ideal_pixel(&r_im, &truth.position, target_m, cam, occluders) {
            let nu: f64 = StandardNormal.sample(rng);
            let nv: f64 = StandardNormal.sample(rng);
            obs.push((cam, Vector2::new(u + sigma * nu, v + sigma * nv)));
        }
    }
    obs
}

fn detection_from_traces(
    cfg: &ScenarioConfig,
    rec: &Recorder,
    rng: &mut ChaCha12Rng,
) -> Option<DetectionSummary> {
    if rec.dist_est.len() < 4 || rec.dist_true.len() < 4 {
        return None;
    }
    let problem = &cfg.radiation.problem;
    let t0 = rec.dist_est[0].0;
    let clip = |trace: &[(f64, f64)]| {
        let times: Vec<f64> = trace.iter().map(|(t, _)| t - t0).collect();
        let values: Vec<f64> = trace.iter().map(|(_, d)| *d).collect();
        SampledSignal::new(times, values)
    };
    let d_est = clip(&rec.dist_est);
    let d_true = clip(&rec.dist_true);
    // Integrals use the estimated relative distance; counts are physics
    // and come from the true distance.
    let (nu_est, mu_est) = perceived_rates(&d_est, problem);
    let solved = solve_detection(&mu_est, &problem.background, problem.alpha).ok()?;
    let (nu_true, _) = perceived_rates(&d_true, problem);
    let horizon = *d_true.times.last().unwrap();
    let rate_values: Vec<f64> = nu_true
        .values
        .iter()
        .zip(&nu_true.times)
        .map(|(nu, t)| {
            let b = problem.background.rate(*t);
            if cfg.radiation.source_present {
                nu + b
            } else {
                b
            }
        })
        .collect();
    let rate = SampledSignal::new(nu_true.times.clone(), rate_values);
    let record = simulate_counts(&rate, horizon, rng);
    let (lt, h1) = likelihood_ratio_test(&record, &nu_est, &problem.background, solved.gamma);
    Some(DetectionSummary {
        feasible: solved.pm_bound < 1.0,
        exponent_p: solved.p,
        e_f: solved.e_f,
        e_m: solved.e_m,
        pm_bound: solved.pm_bound,
        gamma: solved.gamma,
        log_likelihood_ratio: lt.ln(),
        counts: record.jump_times.len(),
        decision_h1: h1,
    })
}

struct ErrorWindows {
    /// (t, robot position error, target position error) in the map frame.
    samples: Vec<(f64, f64, Option<f64>)>,
}

impl ErrorWindows {
    fn rmse(&self, from: f64, to: f64) -> (f64, f64) {
        let robot: Vec<f64> = self
            .samples
            .iter()
            .filter(|(t, _, _)| *t >= from && *t <= to)
            .map(|(_, r, _)| r * r)
            .collect();
        let target: Vec<f64> = self
            .samples
            .iter()
            .filter(|(t, _, tg)| *t >= from && *t <= to && tg.is_some())
            .map(|(_, _, tg)| tg.unwrap() * tg.unwrap())
            .collect();
        let rm = if robot.is_empty() {
            f64::NAN
        } else {
            (robot.iter().sum::<f64>() / robot.len() as f64).sqrt()
        };
        let tm = if target.is_empty() {
            f64::NAN
        } else {
            (target.iter().sum::<f64>() / target.len() as f64).sqrt()
        };
        (rm, tm)
    }

    fn max_robot(&self, from: f64, to: f64) -> f64 {
        self.samples
            .iter()
            .filter(|(t, _, _)| *t >= from && *t <= to)
            .map(|(_, r, _)| *r)
            .fold(0.0, f64::max)
    }
}

/// Robot/target position errors expressed in the map frame. The
/// estimate is mapped through the filter's *own* transform once it
/// exists (the operational output; the initial G-frame yaw gauge is
/// unobservable and must not pollute the metric) and through the true
/// transform before then.
fn error_sample(
    pipeline: &Pipeline,
    t_true: &MapTransform,
    truth_p_m: &Vector3<f64>,
    target_p_m: &Vector3<f64>,
) -> (f64, Option<f64>) {
    let to_map = |p: &Vector3<f64>| match pipeline.filter.map.as_ref() {
        Some(m) => m.g_point_to_map(p),
        None => t_true.g_point_to_map(p),
    };
    let est_p_m = to_map(&pipeline.filter.imu.position);
    let robot = (est_p_m - truth_p_m).norm();
    let target = pipeline.filter.target.as_ref().map(|t| {
        let est_t_m = to_map(&t.position());
        (est_t_m - target_p_m).norm()
    });
    (robot, target)
}

// ---------------------------------------------------------------------
// Chase scenario
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Hover,
    Chase,
    FinalHover,
}

impl Phase {
    fn code(&self) -> u8 {
        match self {
            Phase::Hover => 1,
            Phase::Chase => 2,
            Phase::FinalHover => 3,
        }
    }
}

fn run_chase(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    let mut rngs = RngStreams::new(cfg.seed);
    let map = generate_world_content(cfg, &mut rngs.world);
    let rig = build_rig(cfg);
    let dt = 1.0 / cfg.imu.rate_hz;
    let cam_every = cfg.camera_decimation();
    let plan_every = cfg.planner_decimation();
    let total_ticks = (cfg.phases.duration_s * cfg.imu.rate_hz).round() as u64;

    let t_true = MapTransform {
        yaw: cfg.map_transform.yaw_deg.to_radians(),
        p_m_in_g: Vector3::from(cfg.map_transform.offset),
    };

    // Plant starts at the configured point, level, facing the target.
    let target_start = Vector3::from(cfg.target.start);
    let start = Vector3::from(cfg.uav.start);
    let to_target = target_start - start;
    let yaw0 = to_target.y.atan2(to_target.x);
    let mut plant = QuadrotorPlant {
        position: start,
        velocity: Vector3::zeros(),
        rotation: UnitQuat::from_yaw(yaw0).to_rot().transpose(),
        omega: Vector3::zeros(),
        mass: cfg.uav.mass_kg,
        inertia: Vector3::from(cfg.uav.inertia),
    };
    let mut target = TargetTruth::new(cfg, dt);

    let truth_now = |plant: &QuadrotorPlant, thrust: f64| RigidTruth {
        position: plant.position,
        velocity: plant.velocity,
        acceleration: crate::gravity_vec() + plant.rotation.column(2) * (thrust / plant.mass),
        rotation: plant.rotation,
        omega: plant.omega,
    };

    let hover_thrust = cfg.uav.mass_kg * crate::GRAVITY;
    let truth0 = truth_now(&plant, hover_thrust);
    let (filter, bias_g, bias_a) = initial_filter(cfg, &truth0, &t_true, &mut rngs.init);
    let mut imu_model = cfg.imu.clone();
    imu_model.bias_gyro = bias_g.into();
    imu_model.bias_accel = bias_a.into();

    let mut pipeline = Pipeline::new(cfg, filter, rig.clone(), map.landmarks.iter().map(|l| Vector3::from(*l)).collect());
    let mut log = cfg.output.measurement_log.then(MeasurementLog::default);

    // First IMU sample at t = 0 under hover thrust.
    let (w0, a0) = truth0.imu_ideal();
    let s0 = imu_model.sample(0, &w0, &a0, &mut rngs.imu);
    pipeline.push_imu(s0);
    if let Some(l) = log.as_mut() {
        l.push_imu(s0);
    }

    // Mean head advanced at IMU rate for control.
    let mut head = pipeline.filter.imu.clone();
    let mut head_target: Option<DVector<f64>> = None;
    let a_tick = transition_matrix(cfg.target.order, dt).unwrap();
    let mut last_sample = s0;

    let mut phase = Phase::Hover;
    let hover_ref_g = {
        let (_, p_g, _) = truth_to_g(&truth0, &t_true);
        Vector3::new(p_g.x, p_g.y, p_g.z + (cfg.uav.hover_altitude_m - truth0.position.z))
    };
    let mut hold_ref_g = hover_ref_g;
    let mut chase_start_t: Option<f64> = None;
    let mut chase_end_t: Option<f64> = None;

    let mut att_ref = AttitudeRef::new();
    let mut v_d = Vector3::zeros();
    let mut v_d_prev = Vector3::zeros();
    let mut vdot_d = Vector3::zeros();
    let mut yaw_des = yaw0 + t_true.yaw; // heading in G
    let mut thrust = hover_thrust;
    let mut moment = Vector3::zeros();
    let mut critical_flags = 0usize;
    let mut saddle_perturbations = 0usize;

    let mut recorder = Recorder { epochs: Vec::new(), dist_true: Vec::new(), dist_est: Vec::new() };
    let mut errors = ErrorWindows { samples: Vec::new() };
    let mut collisions = 0usize;
    let mut min_clearance = f64::INFINITY;
    let mut min_target_dist = f64::INFINITY;
    let mut target_init_t: Option<f64> = None;
    let mut map_init_t: Option<f64> = None;

    let detection_horizon = cfg.radiation.problem.horizon;
    let (bmin, bmax) = cfg.world.boundary.aabb();
    let margin = cfg.phases.detection_margin_m;

    for tick in 1..=total_ticks {
        let t = tick as f64 * dt;
        // Advance the truth with the commands held over the interval.
        plant = plant
            .step(thrust, moment, dt)
            .map_err(|e| ScenarioError::Diverged { t, dump: e.to_string() })?;
        target.step(dt, &mut rngs.misc);

        // IMU sample at the new tick (old thrust still acting).
        let truth = truth_now(&plant, thrust);
        let (w_ideal, a_ideal) = truth.imu_ideal();
        let sample = imu_model.sample(tick, &w_ideal, &a_ideal, &mut rngs.imu);
        pipeline.push_imu(sample);
        if let Some(l) = log.as_mut() {
            l.push_imu(sample);
        }
        // Advance the mean head with the new pair.
        let (new_head, _phi) = crate::estimator::imu_step(&head, &last_sample, &sample, dt);
        head = new_head;
        if let Some(ht) = head_target.as_mut() {
            *ht = &a_tick * &*ht;
        }
        last_sample = sample;

        // Collision accounting on the truth: exact sign from the
        // implicit functions, box metric for the reported clearance.
        let clear = clearance(&cfg.world, &plant.position);
        min_clearance = min_clearance.min(clear);
        if !cfg.world.in_free_space(&plant.position) {
            collisions += 1;
        }
        min_target_dist = min_target_dist.min((plant.position - target.position).norm());

        // Camera epoch.
        if tick % cam_every == 0 {
            let sigma = pipeline.filter.config.pixel_std_norm;
            let feature_obs = observe_points(
                &rig,
                &truth,
                &map.features,
                &map.occluders,
                cfg.camera.max_features_per_frame,
                sigma,
                &mut rngs.pixels,
            );
            let landmark_obs = observe_points(
                &rig,
                &truth,
                &map.landmarks,
                &map.occluders,
                cfg.camera.max_landmarks_per_frame,
                sigma,
                &mut rngs.pixels,
            );
            let target_obs =
                observe_target(&rig, &truth, &target.position, &map.occluders, sigma, &mut rngs.pixels);
            if let Some(l) = log.as_mut() {
                for (id, cam, px) in &feature_obs {
                    l.push_pixel(tick, *cam, PixelKind::Feature, *id, px.x, px.y);
                }
                for (id, cam, px) in &landmark_obs {
                    l.push_pixel(tick, *cam, PixelKind::Landmark, *id, px.x, px.y);
                }
                for (cam, px) in &target_obs {
                    l.push_pixel(tick, *cam, PixelKind::Target, 0, px.x, px.y);
                }
            }
            let had_target = pipeline.filter.target.is_some();
            let had_map = pipeline.filter.map.is_some();
            pipeline.process_epoch(tick, &feature_obs, &landmark_obs, &target_obs)?;
            if !had_target && pipeline.filter.target.is_some() {
                target_init_t = Some(t);
            }
            if !had_map && pipeline.filter.map.is_some() {
                map_init_t = Some(t);
            }
            // Head resync to the freshly updated filter state.
            head = pipeline.filter.imu.clone();
            head_target = pipeline.filter.target.as_ref().map(|tg| tg.state.clone());

            let in_window = phase == Phase::Chase
                && chase_start_t.map(|c| t <= c + detection_horizon).unwrap_or(false);
            recorder.record(
                t,
                phase.code(),
                &pipeline,
                &truth,
                &target.position,
                &t_true,
                in_window,
            );
            let (re, te) = error_sample(&pipeline, &t_true, &plant.position, &target.position);
            errors.samples.push((t, re, te));
        }

        // Phase transitions.
        match phase {
            Phase::Hover => {
                let ready = pipeline.filter.target.is_some()
                    && (pipeline.filter.map.is_some() || pipeline.landmarks_m.is_empty());
                if t >= cfg.phases.hover_s && ready {
                    phase = Phase::Chase;
                    chase_start_t = Some(t);
                    pipeline.events.push(format!("t={t} phase_chase"));
                }
            }
            Phase::Chase => {
                let p = target.position;
                let crossed = p.x < bmin.x + margin
                    || p.x > bmax.x - margin
                    || p.y < bmin.y + margin
                    || p.y > bmax.y - margin;
                if crossed {
                    phase = Phase::FinalHover;
                    chase_end_t = Some(t);
                    hold_ref_g = head.position;
                    pipeline.events.push(format!("t={t} phase_final_hover"));
                }
            }
            Phase::FinalHover => {}
        }

        // Planner.
        if tick % plan_every == 0 {
            let est_map = pipeline
                .filter
                .map
                .clone()
                .unwrap_or(MapTransform { yaw: 0.0, p_m_in_g: Vector3::zeros() });
            let new_v_d = match phase {
                Phase::Hover => {
                    let e = hover_ref_g - head.position;
                    let v = e * 1.0;
                    let n = v.norm();
                    if n > 2.0 {
                        v * (2.0 / n)
                    } else {
                        v
                    }
                }
                Phase::FinalHover => {
                    let e = hold_ref_g - head.position;
                    let v = e * 1.0;
                    let n = v.norm();
                    if n > 2.0 {
                        v * (2.0 / n)
                    } else {
                        v
                    }
                }
                Phase::Chase => {
                    // Planner consumes estimates only.
                    let est_target_g = head_target
                        .as_ref()
                        .map(|ht| Vector3::new(ht[0], ht[1], ht[2]))
                        .expect("target initialized before chase");
                    let p_m = est_map.g_point_to_map(&head.position);
                    let t_m = est_map.g_point_to_map(&est_target_g);
                    let vref = desired_velocity(
                        &cfg.world,
                        &p_m,
                        &t_m,
                        cfg.uav.gains.k_planner,
                        cfg.uav.gains.v_max,
                    );
                    let v_m = match vref {
                        Ok(v) => {
                            if v.critical {
                                critical_flags += 1;
                                // Measure-zero saddle: nudge and retry once.
                                let nudge = Vector3::new(
                                    rngs.misc.random_range(-1.0..1.0),
                                    rngs.misc.random_range(-1.0..1.0),
                                    rngs.misc.random_range(-1.0..1.0),
                                )
                                .normalize()
                                    * 1e-9;
                                saddle_perturbations += 1;
                                pipeline.events.push(format!("t={t} critical_point_perturbed"));
                                desired_velocity(
                                    &cfg.world,
                                    &(p_m + nudge),
                                    &t_m,
                                    cfg.uav.gains.k_planner,
                                    cfg.uav.gains.v_max,
                                )
                                .map(|v2| v2.velocity)
                                .unwrap_or(Vector3::zeros())
                            } else {
                                v.velocity
                            }
                        }
                        Err(_) => {
                            // Outside the nav domain (estimate excursion):
                            // climb back toward the workspace interior.
                            pipeline.events.push(format!("t={t} out_of_domain_recovery"));
                            let center = cfg.world.boundary.center();
                            let d = center - p_m;
                            d / d.norm().max(1e-9)
                        }
                    };
                    // Yaw faces the estimated target.
                    let dir = est_target_g - head.position;
                    yaw_des = dir.y.atan2(dir.x);
                    // Finite-bandwidth shaping: the vehicle tracks velocity
                    // with a few-hundred-ms lag, so the component of the
                    // reference toward any boundary is capped by the
                    // time-to-boundary rule; the repulsive shells are
                    // thinner than the stopping distance at full speed.
                    let v_shaped = shape_velocity(&cfg.world, &p_m, v_m);
                    est_map.rot_mg().transpose() * v_shaped
                }
            };
            let plan_dt = plan_every as f64 * dt;
            vdot_d = (new_v_d - v_d_prev) / plan_dt;
            let cap = 6.0;
            if vdot_d.norm() > cap {
                vdot_d *= cap / vdot_d.norm();
            }
            v_d_prev = new_v_d;
            v_d = new_v_d;
        }

        // Controller at the IMU rate, from estimates only.
        let e_v = head.velocity - v_d;
        let tvec = desired_thrust_vector(plant.mass, &e_v, &vdot_d, &cfg.uav.gains);
        let (r_d, w_d) = att_ref.update(&tvec, yaw_des, dt);
        let est_plant = QuadrotorPlant {
            position: head.position,
            velocity: head.velocity,
            rotation: head.q_ig.to_rot().transpose(),
            omega: sample.gyro - head.bias_gyro,
            mass: plant.mass,
            inertia: plant.inertia,
        };
        let (f_cmd, m_cmd) = control_law(&est_plant, &v_d, &vdot_d, &r_d, &w_d, &cfg.uav.gains);
        thrust = f_cmd.clamp(0.0, 4.0 * hover_thrust);
        moment = m_cmd;
    }

    if pipeline.filter.target.is_none() {
        return Err(ScenarioError::InitTimeout { what: "target".into() });
    }

    let detection = detection_from_traces(cfg, &recorder, &mut rngs.counts);
    let summary = build_summary(
        cfg,
        &pipeline,
        &recorder,
        &errors,
        chase_start_t,
        chase_end_t,
        map_init_t,
        target_init_t,
        min_target_dist,
        collisions,
        min_clearance,
        critical_flags,
        saddle_perturbations,
        detection,
        "chase",
    );
    let mut report = RunReport { summary, epochs: recorder.epochs };
    if let Some(l) = log {
        report.summary.events.push(format!("measurement_log_records={}", l.records.len()));
        // The log rides along in memory; callers writing to disk use
        // `write_with_log`.
        LOGS.with(|cell| *cell.borrow_mut() = Some(l));
    }
    Ok(report)
}

thread_local! {
    static LOGS: std::cell::RefCell<Option<MeasurementLog>> = const { std::cell::RefCell::new(None) };
}

/// Takes the measurement log captured by the most recent run on this
/// thread (when `output.measurement_log` was enabled).
pub fn take_measurement_log() -> Option<MeasurementLog> {
    LOGS.with(|cell| cell.borrow_mut().take())
}

#[allow(clippy::too_many_arguments)]
fn build_summary(
    cfg: &ScenarioConfig,
    pipeline: &Pipeline,
    recorder: &Recorder,
    errors: &ErrorWindows,
    chase_start_t: Option<f64>,
    chase_end_t: Option<f64>,
    map_init_t: Option<f64>,
    target_init_t: Option<f64>,
    min_target_dist: f64,
    collisions: usize,
    min_clearance: f64,
    critical_flags: usize,
    saddle_perturbations: usize,
    detection: Option<DetectionSummary>,
    mode: &str,
) -> RunSummary {
    let end_t = cfg.phases.duration_s;
    let eval_from = match (chase_start_t, target_init_t) {
        (Some(c), Some(ti)) => c.max(ti + 2.0),
        (None, Some(ti)) => ti + 2.0,
        _ => end_t,
    };
    let eval_to = chase_end_t.unwrap_or(end_t);
    let (rmse_robot, rmse_target) = errors.rmse(eval_from, eval_to);
    let max_robot_error = errors.max_robot(eval_from, eval_to);
    let last = errors.samples.last();
    let bubble = cfg.world.bubble_radius;

    // Steady-state window: once the true distance first reaches 1.1·r
    // (plus a settling second) until the chase ends.
    let steady = recorder
        .epochs
        .iter()
        .find(|e| e.phase == 2 && e.rel_dist_true <= 1.1 * bubble)
        .map(|e| e.t + 1.0);
    let steady_rows: Vec<&EpochRecord> = match steady {
        Some(from) => recorder
            .epochs
            .iter()
            .filter(|e| e.phase == 2 && e.t >= from && e.t <= eval_to)
            .collect(),
        None => Vec::new(),
    };
    let steady_rel_dist_mean = if steady_rows.is_empty() {
        None
    } else {
        Some(steady_rows.iter().map(|e| e.rel_dist_true).sum::<f64>() / steady_rows.len() as f64)
    };
    let steady_rel_dist_err_mean = if steady_rows.is_empty() {
        None
    } else {
        let errs: Vec<f64> = steady_rows
            .iter()
            .filter_map(|e| e.rel_dist_est.map(|d| (d - e.rel_dist_true).abs()))
            .collect();
        Some(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
    };

    let nees_rows: Vec<&EpochRecord> = recorder
        .epochs
        .iter()
        .filter(|e| e.t >= eval_from && e.nees_pose.is_finite())
        .collect();
    let nees_robot_mean = if nees_rows.is_empty() {
        f64::NAN
    } else {
        nees_rows.iter().map(|e| e.nees_pose).sum::<f64>() / nees_rows.len() as f64
    };
    let nees_t_rows: Vec<f64> = recorder
        .epochs
        .iter()
        .filter(|e| e.t >= eval_from)
        .filter_map(|e| e.nees_target)
        .filter(|v| v.is_finite())
        .collect();
    let nees_target_mean = if nees_t_rows.is_empty() {
        f64::NAN
    } else {
        nees_t_rows.iter().sum::<f64>() / nees_t_rows.len() as f64
    };

    RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        mode: mode.into(),
        planner_input: "estimated".into(),
        duration_s: cfg.phases.duration_s,
        chase_start_t,
        chase_end_t,
        map_init_t,
        target_init_t,
        rmse_robot,
        rmse_target,
        final_robot_error: last.map(|(_, r, _)| *r).unwrap_or(f64::NAN),
        final_target_error: last.and_then(|(_, _, t)| *t).unwrap_or(f64::NAN),
        max_robot_error,
        nees_robot_mean,
        nees_target_mean,
        steady_rel_dist_mean,
        steady_rel_dist_err_mean,
        min_true_target_distance: min_target_dist,
        interception: min_target_dist <= 1.1 * bubble,
        collisions,
        min_obstacle_clearance: min_clearance,
        gate_rejections: pipeline.filter.gate_rejections,
        critical_point_flags: critical_flags,
        saddle_perturbations,
        msckf_tracks_used: pipeline.msckf_tracks_used,
        msckf_tracks_dropped: pipeline.msckf_tracks_dropped,
        max_nullspace_residual: pipeline.max_nullspace_residual,
        min_cov_eigenvalue: pipeline.min_cov_eigenvalue,
        detection,
        events: pipeline.events.clone(),
    }
}

// ---------------------------------------------------------------------
// Estimation-only hallway scenario
// ---------------------------------------------------------------------

fn hallway_truth(cfg: &ScenarioConfig, t: f64) -> RigidTruth {
    let h = &cfg.hallway;
    let w = 2.0 * std::f64::consts::PI / h.period_s;
    let p = Vector3::new(h.speed_mps * t, h.amplitude_m * (w * t).sin(), h.altitude_m);
    let v = Vector3::new(h.speed_mps, h.amplitude_m * w * (w * t).cos(), 0.0);
    let a = Vector3::new(0.0, -h.amplitude_m * w * w * (w * t).sin(), 0.0);
    let jerk_y = -h.amplitude_m * w * w * w * (w * t).cos();
    let yaw = v.y.atan2(v.x);
    // yaw_dot = (vx·ay - vy·ax)/(vx² + vy²)
    let speed2 = v.x * v.x + v.y * v.y;
    let yaw_dot = (v.x * a.y - v.y * a.x) / speed2;
    let _ = jerk_y;
    RigidTruth {
        position: p,
        velocity: v,
        acceleration: a,
        rotation: UnitQuat::from_yaw(yaw).to_rot().transpose(),
        omega: Vector3::new(0.0, 0.0, yaw_dot),
    }
}

fn run_hallway(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    let mut rngs = RngStreams::new(cfg.seed);
    let map = generate_world_content(cfg, &mut rngs.world);
    let rig = build_rig(cfg);
    let dt = 1.0 / cfg.imu.rate_hz;
    let cam_every = cfg.camera_decimation();
    let total_ticks = (cfg.phases.duration_s * cfg.imu.rate_hz).round() as u64;

    let t_true = MapTransform {
        yaw: cfg.map_transform.yaw_deg.to_radians(),
        p_m_in_g: Vector3::from(cfg.map_transform.offset),
    };
    let truth0 = hallway_truth(cfg, 0.0);
    let (filter, bias_g, bias_a) = initial_filter(cfg, &truth0, &t_true, &mut rngs.init);
    let mut imu_model = cfg.imu.clone();
    imu_model.bias_gyro = bias_g.into();
    imu_model.bias_accel = bias_a.into();

    let mut pipeline = Pipeline::new(
        cfg,
        filter,
        rig.clone(),
        map.landmarks.iter().map(|l| Vector3::from(*l)).collect(),
    );

    let (w0, a0) = truth0.imu_ideal();
    let s0 = imu_model.sample(0, &w0, &a0, &mut rngs.imu);
    pipeline.push_imu(s0);

    let mut target_pos = Vector3::from(cfg.target.start);
    let target_vel = Vector3::from(cfg.target.velocity);
    let mut target_init_t = None;
    let mut map_init_t = None;
    let mut recorder = Recorder { epochs: Vec::new(), dist_true: Vec::new(), dist_est: Vec::new() };
    let mut errors = ErrorWindows { samples: Vec::new() };

    for tick in 1..=total_ticks {
        let t = tick as f64 * dt;
        target_pos += target_vel * dt;
        let truth = hallway_truth(cfg, t);
        let (w_ideal, a_ideal) = truth.imu_ideal();
        let sample = imu_model.sample(tick, &w_ideal, &a_ideal, &mut rngs.imu);
        pipeline.push_imu(sample);

        if tick % cam_every == 0 {
            let sigma = pipeline.filter.config.pixel_std_norm;
            let feature_obs = observe_points(
                &rig,
                &truth,
                &map.features,
                &map.occluders,
                cfg.camera.max_features_per_frame,
                sigma,
                &mut rngs.pixels,
            );
            let landmark_obs = observe_points(
                &rig,
                &truth,
                &map.landmarks,
                &map.occluders,
                cfg.camera.max_landmarks_per_frame,
                sigma,
                &mut rngs.pixels,
            );
            let target_obs =
                observe_target(&rig, &truth, &target_pos, &map.occluders, sigma, &mut rngs.pixels);
            let had_target = pipeline.filter.target.is_some();
            let had_map = pipeline.filter.map.is_some();
            pipeline.process_epoch(tick, &feature_obs, &landmark_obs, &target_obs)?;
            if !had_target && pipeline.filter.target.is_some() {
                target_init_t = Some(t);
            }
            if !had_map && pipeline.filter.map.is_some() {
                map_init_t = Some(t);
            }
            recorder.record(t, 0, &pipeline, &truth, &target_pos, &t_true, false);
            let (re, te) = error_sample(&pipeline, &t_true, &truth.position, &target_pos);
            errors.samples.push((t, re, te));
        }
    }

    if pipeline.filter.target.is_none() {
        return Err(ScenarioError::InitTimeout { what: "target".into() });
    }
    let summary = build_summary(
        cfg,
        &pipeline,
        &recorder,
        &errors,
        None,
        None,
        map_init_t,
        target_init_t,
        f64::INFINITY,
        0,
        f64::INFINITY,
        0,
        0,
        None,
        "estimation_only",
    );
    Ok(RunReport { summary, epochs: recorder.epochs })
}

// ---------------------------------------------------------------------
// Log replay
// ---------------------------------------------------------------------

/// Replays a dumped measurement log through a fresh filter pipeline,
/// returning the estimated positions at each camera epoch. The scenario
/// config supplies the rig, landmark map, and filter tuning; the filter
/// is initialized from `init` (the same initial state as the original
/// run).
pub fn replay_log(
    cfg: &ScenarioConfig,
    init: &FilterState,
    log: &MeasurementLog,
) -> Result<Vec<(f64, Vector3<f64>)>, ScenarioError> {
    let mut rngs = RngStreams::new(cfg.seed);
    let map = generate_world_content(cfg, &mut rngs.world);
    let rig = build_rig(cfg);
    let mut pipeline = Pipeline::new(
        cfg,
        init.clone(),
        rig,
        map.landmarks.iter().map(|l| Vector3::from(*l)).collect(),
    );
    let mut out = Vec::new();
    let mut i = 0;
    let records = &log.records;
    while i < records.len() {
        match &records[i] {
            LogRecord::Imu(s) => {
                pipeline.push_imu(*s);
                i += 1;
            }
            LogRecord::Pixel { tick, .. } => {
                let tick = *tick;
                let mut feature_obs = Vec::new();
                let mut landmark_obs = Vec::new();
                let mut target_obs = Vec::new();
                while i < records.len() {
                    let LogRecord::Pixel { tick: t2, cam, kind, id, u, v } = &records[i] else {
                        break;
                    };
                    if *t2 != tick {
                        break;
                    }
                    let px = Vector2::new(*u, *v);
                    match kind {
                        PixelKind::Feature => feature_obs.push((*id, *cam, px)),
                        PixelKind::Landmark => landmark_obs.push((*id, *cam, px)),
                        PixelKind::Target => target_obs.push((*cam, px)),
                    }
                    i += 1;
                }
                pipeline.process_epoch(tick, &feature_obs, &landmark_obs, &target_obs)?;
                out.push((tick as f64 / pipeline.imu_rate, pipeline.filter.imu.position));
            }
        }
    }
    Ok(out)
}

/// Captures the initial filter state a run would use (for replay tests).
pub fn initial_filter_for(cfg: &ScenarioConfig) -> FilterState {
    let mut rngs = RngStreams::new(cfg.seed);
    let t_true = MapTransform {
        yaw: cfg.map_transform.yaw_deg.to_radians(),
        p_m_in_g: Vector3::from(cfg.map_transform.offset),
    };
    let truth0 = match cfg.mode {
        ScenarioMode::Chase => {
            let target_start = Vector3::from(cfg.target.start);
            let start = Vector3::from(cfg.uav.start);
            let to_target = target_start - start;
            let yaw0 = to_target.y.atan2(to_target.x);
            RigidTruth {
                position: start,
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
                rotation: UnitQuat::from_yaw(yaw0).to_rot().transpose(),
                omega: Vector3::zeros(),
            }
        }
        ScenarioMode::EstimationOnly => hallway_truth(cfg, 0.0),
    };
    let (filter, _, _) = initial_filter(cfg, &truth0, &t_true, &mut rngs.init);
    filter
}
