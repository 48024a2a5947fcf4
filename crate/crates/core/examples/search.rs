//! One failure search with a chosen strategy against a trained run.
//!
//!     cargo run --release --example search -- target/run "" avf
//!
//! Strategies: vmc, avf, gmm, hybrid, pr. `pr` replays the training
//! failures against the final policy.

#[path = "common/mod.rs"]
mod common;

use rarefail::search::Strategy;

fn main() {
    common::init_logging();
    let run = common::open_run();
    let strategy: Strategy = std::env::args()
        .nth(3)
        .unwrap_or_else(|| "vmc".into())
        .parse()
        .unwrap();
    if strategy == Strategy::Pr {
        let replay = run.replay().unwrap();
        println!(
            "{} of {} training failures still fail",
            replay.still_failing.len(),
            replay.training_failures
        );
        for x in &replay.still_failing {
            println!("  x = {:?}", x.as_slice());
        }
        return;
    }
    let report = run.search(strategy).unwrap();
    match &report.failing_x {
        Some(x) => println!(
            "{}: failure after {} episodes at x = {:?} (reproduced)",
            strategy.heading(),
            report.episodes_used,
            x.as_slice()
        ),
        None => println!("{}: no failure within {} episodes", strategy.heading(), report.episodes_used),
    }
}
