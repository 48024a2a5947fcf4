//! Trains the DDPG braking agent and reports how failures thin out.
//!
//!     cargo run --release --example train_agent -- target/run quick
//!     cargo run --release --example train_agent -- target/run1   # full scenario 1, about 5 min

#[path = "common/mod.rs"]
mod common;

fn main() {
    common::init_logging();
    let run = common::open_run();
    let out = run.train().unwrap();
    let n = out.log.len();
    let decile = (n / 10).max(1);
    for k in 0..n.div_ceil(decile) {
        let r = k * decile..((k + 1) * decile).min(n);
        let gaps: Vec<f64> = out.log[r.clone()].iter().filter_map(|e| e.stop_gap_m).collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
        println!(
            "episodes {:>5}..{:<5} failures {:>3}  mean stopping gap {:5.1} m",
            r.start,
            r.end,
            out.failure_count(r.clone()),
            mean_gap
        );
    }
    let tail = n.saturating_sub(500)..n;
    println!(
        "final {} episodes: failure rate {:.2}%",
        tail.len(),
        100.0 * out.failure_count(tail.clone()) as f64 / tail.len() as f64
    );
}
