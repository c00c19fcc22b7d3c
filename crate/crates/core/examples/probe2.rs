use radchase_core::scenario::*;
fn main() {
    let mut c = ScenarioConfig::default_hallway();
    c.content.landmark_count = 160;
    c.map_transform = MapTransformConfig { yaw_deg: 15.0, offset: [1.0, 2.0, 0.0] };
    c.phases.duration_s = 60.0;
    let r = run_scenario(&c).unwrap();
    for e in r.epochs.iter().step_by(40) {
        let dx = e.est_p[0] - e.truth_p[0];
        let dy = e.est_p[1] - e.truth_p[1];
        let dz = e.est_p[2] - e.truth_p[2];
        let err = (dx * dx + dy * dy + dz * dz).sqrt();
        println!("t={:6.2} err={:.4} ({:+.3},{:+.3},{:+.3}) nees={:.1}", e.t, err, dx, dy, dz, e.nees_pose);
    }
}
