//! Trains the failure predictor on the last training window of a run and
//! shows its predicted failure probability across initial speeds.
//!
//!     cargo run --release --example train_agent -- target/run quick
//!     cargo run --release --example train_avf -- target/run

#[path = "common/mod.rs"]
mod common;

use rarefail::sim::InitialCondition;

fn main() {
    common::init_logging();
    let run = common::open_run();
    let fit = run.train_avf().unwrap();
    println!(
        "positive weight {:.2}, loss {:.4} -> {:.4}",
        fit.positive_weight, fit.initial_loss, fit.final_loss
    );
    for v in (5..=35).step_by(5) {
        let p = fit.model.predict(&InitialCondition::speed(v as f64), fit.model.theta_at_test).unwrap();
        println!("v0 = {v:>2} m/s  P(fail) = {p:.4}");
    }
}
