//! The whole workflow in one process on a small low-friction configuration:
//! train, fit both failure models, bench every strategy, replay.
//!
//!     cargo run --release --example quickstart [-- out-dir]

#[path = "common/mod.rs"]
mod common;

use rarefail::config::RunConfig;
use rarefail::pipeline::Pipeline;
use rarefail::report;

fn main() {
    common::init_logging();
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/quickstart".into());
    let config = RunConfig::from_json_str(common::QUICK).unwrap();
    let run = Pipeline::open(config, &out).unwrap();

    let trained = run.train().unwrap();
    println!(
        "trained {} episodes, {} failures",
        trained.log.len(),
        trained.failure_count(0..trained.log.len())
    );
    let avf = run.train_avf().unwrap();
    println!("failure predictor loss {:.4} -> {:.4}", avf.initial_loss, avf.final_loss);
    let gmm = run.fit_gmm(None).unwrap();
    println!("mixture of {} on {} failures", gmm.model.n_components(), gmm.data.len());

    let table = run.bench(run.config().search.k_failures).unwrap();
    print!("{}", report::bench_markdown(&table));

    let replay = run.replay().unwrap();
    println!(
        "{} of {} training failures still fail under the final policy",
        replay.still_failing.len(),
        replay.training_failures
    );
    run.dir().verify().unwrap();
    println!("artifacts in {out}");
}
