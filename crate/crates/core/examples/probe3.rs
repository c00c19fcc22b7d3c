use radchase_core::scenario::*;
fn main() {
    let c = ScenarioConfig::default_chase();
    let r = run_scenario(&c).unwrap();
    for e in r.epochs.iter().step_by(10) {
        println!(
            "t={:6.2} ph={} truth=({:+6.2},{:+6.2},{:+5.2}) est=({:+6.2},{:+6.2},{:+5.2}) tgt=({:+6.2},{:+6.2}) rel={:.2}",
            e.t, e.phase,
            e.truth_p[0], e.truth_p[1], e.truth_p[2],
            e.est_p[0], e.est_p[1], e.est_p[2],
            e.truth_target[0], e.truth_target[1],
            e.rel_dist_true
        );
    }
}
