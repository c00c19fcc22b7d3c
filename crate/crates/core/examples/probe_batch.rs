use radchase_core::scenario::*;
use std::time::Instant;
fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(20);
    let cfg = ScenarioConfig::default_chase();
    let t0 = Instant::now();
    let report = run_batch(&cfg, n, 100, true);
    println!("elapsed {:.1?}", t0.elapsed());
    println!("{}", serde_json::to_string_pretty(&report.aggregate).unwrap());
    for r in &report.rows {
        if !r.completed || !r.interception || r.collisions > 0 {
            println!(
                "PROBLEM seed={} completed={} intercept={} collisions={} err={:?} steady={:?}",
                r.seed, r.completed, r.interception, r.collisions, r.error, r.steady_rel_dist_mean
            );
        }
    }
}
