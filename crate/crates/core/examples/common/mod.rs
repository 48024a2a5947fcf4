//! Argument handling shared by the pipeline examples.

#![allow(dead_code)]

use std::path::PathBuf;

use rarefail::config::RunConfig;
use rarefail::pipeline::Pipeline;
use rarefail::rundir;
use rarefail::sim::ScenarioId;

/// Low friction makes the untrained agent crash often, so every stage has
/// data after a few dozen episodes.
pub const QUICK: &str = r#"{
  "scenario_id": 1,
  "seed": 7,
  "sim": {"base_mu": 0.3},
  "ddpg": {"episodes": 60, "warmup_steps": 300},
  "avf": {"window_size": 60, "epochs": 50, "n_candidates": 200},
  "gmm": {"n_inits": 8},
  "search": {"budget": 5000, "K_failures": 5}
}"#;

/// `<out> [config.json | quick]`. Without a config, a run directory that
/// already has one is reopened with it.
pub fn open_run() -> Pipeline {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-run".into()));
    let config = match args.next().filter(|a| !a.is_empty()).as_deref() {
        Some("quick") => RunConfig::from_json_str(QUICK).unwrap(),
        Some(path) => RunConfig::load(path.as_ref()).unwrap(),
        None if out.join(rundir::CONFIG).exists() => RunConfig::load(&out.join(rundir::CONFIG)).unwrap(),
        None => RunConfig::defaults(ScenarioId::One, 1),
    };
    println!("run directory {}", out.display());
    Pipeline::open(config, &out).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(1)
    })
}

pub fn init_logging() {
    env_logger::Builder::new().parse_filters("info").init();
}
