use radchase_core::scenario::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "hallway".into());
    let cfg = match which.as_str() {
        "hallway" => {
            let mut c = ScenarioConfig::default_hallway();
            c.phases.duration_s = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(20.0);
            c
        }
        "hallway_lm" => {
            let mut c = ScenarioConfig::default_hallway();
            c.content.landmark_count = 160;
            c.map_transform = MapTransformConfig { yaw_deg: 15.0, offset: [1.0, 2.0, 0.0] };
            c.phases.duration_s = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(20.0);
            c
        }
        _ => ScenarioConfig::default_chase(),
    };
    let t0 = Instant::now();
    match run_scenario(&cfg) {
        Ok(r) => {
            println!("elapsed: {:.2?} s", t0.elapsed());
            println!("{}", r.summary_json());
            let n = r.epochs.len();
            for e in r.epochs.iter().skip(n.saturating_sub(3)) {
                println!("t={:.2} phase={} err_p=({:.4},{:.4},{:.4}) rel_true={:.3} rel_est={:?} nees={:.2}",
                    e.t, e.phase, e.est_p[0]-e.truth_p[0], e.est_p[1]-e.truth_p[1], e.est_p[2]-e.truth_p[2],
                    e.rel_dist_true, e.rel_dist_est, e.nees_pose);
            }
        }
        Err(e) => println!("FAILED after {:.2?}: {e}", t0.elapsed()),
    }
}
