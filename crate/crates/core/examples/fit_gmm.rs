//! Fits the failure mixture on a run's training failures, optionally with
//! imported failures, and draws proposals from it.
//!
//!     cargo run --release --example fit_gmm -- target/run
//!     cargo run --release --example fit_gmm -- target/run "" expert.jsonl
//!
//! The import file holds one `{"x": [v0]}` per line.

#[path = "common/mod.rs"]
mod common;

use rarefail::seed;

fn main() {
    common::init_logging();
    let run = common::open_run();
    let import = std::env::args().nth(3).map(std::path::PathBuf::from);
    let fit = run.fit_gmm(import.as_deref()).unwrap();
    println!(
        "{} components on {} failures, log-likelihood {:.3}",
        fit.model.n_components(),
        fit.data.len(),
        fit.log_likelihood
    );
    if let Some(scores) = &fit.bic_scores {
        for (n, b) in scores {
            println!("  n = {n}: BIC {b:.2}");
        }
    }
    for ((w, m), c) in fit.model.weights().iter().zip(fit.model.means()).zip(fit.model.covariances()) {
        println!("  weight {w:.3}  mean {m:.2?}  cov {c:.3?}");
    }
    let mut rng = seed::stream(run.config().seed, "example/gmm", 0);
    let draws: Vec<String> = (0..8).map(|_| format!("{:.1}", fit.model.sample(&mut rng).v0())).collect();
    println!("proposals (m/s): {}", draws.join(" "));
}
