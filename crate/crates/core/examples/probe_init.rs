use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use radchase_core::estimator::*;
use radchase_core::geom::UnitQuat;
use radchase_core::sensors::CameraRig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let rig = CameraRig::with_pitch_deg(0.0);
    let true_yaw = 15.0_f64.to_radians();
    let true_p = Vector3::new(1.0, 2.0, 0.0);
    let truth_map = MapTransform { yaw: true_yaw, p_m_in_g: true_p };
    // Landmarks in M at hallway-like ranges (3-30 m ahead).
    let mut lm_rng = ChaCha12Rng::seed_from_u64(99);
    let landmarks_m: Vec<Vector3<f64>> = (0..20)
        .map(|_| {
            Vector3::new(
                lm_rng.random_range(3.0..30.0),
                lm_rng.random_range(-3.0..3.0),
                lm_rng.random_range(0.0..3.0),
            )
        })
        .collect();
    let sigma = 1.0 / 460.0;
    let mut nees_acc = 0.0;
    let mut err_acc = DVector::zeros(4);
    let n_mc = 200;
    for seed in 0..n_mc {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // 8 clones over 0.35 s along +x at 1 m/s with slight yaw wobble, in G.
        let imu = ImuMeanState {
            q_ig: UnitQuat::from_yaw(true_yaw), // body aligned with M x-axis
            bias_gyro: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            position: truth_map.map_point_to_g(&Vector3::new(0.0, 0.0, 1.5)),
        };
        let mut state = FilterState::new(imu, FilterConfig::default(), 0.0);
        for k in 0..8u64 {
            let p_m = Vector3::new(0.05 * k as f64, 0.001 * (k as f64).sin(), 1.5);
            state.imu.position = truth_map.map_point_to_g(&p_m);
            state.imu.q_ig = UnitQuat::from_yaw(0.02 * (k as f64 * 0.7).sin()).mul(&UnitQuat::from_yaw(true_yaw));
            state.augment_clone(k * 10);
        }
        // noise-free clones; pixel noise only
        let mut windows = Vec::new();
        for lm in &landmarks_m {
            let p_g = truth_map.map_point_to_g(lm);
            let mut obs = Vec::new();
            for c in &state.clones {
                let r_ig = c.q_ig.to_rot();
                for cam in 0..2 {
                    if let Some((u, v)) = rig.ideal_pixel(&r_ig, &c.position, &p_g, cam, &[]) {
                        let nu: f64 = StandardNormal.sample(&mut rng);
                        let nv: f64 = StandardNormal.sample(&mut rng);
                        obs.push((c.tick, cam, Vector2::new(u + sigma * nu, v + sigma * nv)));
                    }
                }
            }
            obs.truncate(32);
            windows.push(LandmarkWindowObs { landmark_m: *lm, obs });
        }
        init_map_transform(&mut state, &rig, &windows).unwrap();
        let m = state.map.as_ref().unwrap();
        let off = state.map_offset();
        let e = DVector::from_vec(vec![
            2.0 * (0.5 * (true_yaw - m.yaw)).tan(),
            true_p.x - m.p_m_in_g.x,
            true_p.y - m.p_m_in_g.y,
            true_p.z - m.p_m_in_g.z,
        ]);
        let mut pb = DMatrix::zeros(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                pb[(r, c)] = state.cov[(off + r, off + c)];
            }
        }
        let nees = e.dot(&pb.clone().cholesky().unwrap().solve(&e));
        nees_acc += nees;
        err_acc += e.map(|x: f64| x.abs());
        if seed < 3 {
            println!(
                "seed {seed}: yaw_err={:.2e} p_err=({:.2e},{:.2e},{:.2e}) nees={:.2} sig=({:.2e},{:.2e},{:.2e},{:.2e})",
                e[0], e[1], e[2], e[3], nees,
                pb[(0,0)].sqrt(), pb[(1,1)].sqrt(), pb[(2,2)].sqrt(), pb[(3,3)].sqrt()
            );
        }
    }
    println!("mean NEES (4 dof, expect ~4): {:.2}", nees_acc / n_mc as f64);
    println!("mean |err|: {:?}", (err_acc / n_mc as f64).as_slice());
}
