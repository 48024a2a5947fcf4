use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rarefail::config::RunConfig;
use rarefail::pipeline::Pipeline;
use rarefail::report;
use rarefail::search::Strategy;

#[derive(Parser)]
#[command(name = "rarefail", version, about = "Train a braking agent and search for its rare failures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DDPG agent (episodes.jsonl, policy.json, critic.json).
    Train(Common),
    /// Train the failure predictor on the last training window (avf.json).
    TrainAvf(Common),
    /// Fit the failure mixture on training failures (gmm.json).
    FitGmm {
        #[command(flatten)]
        common: Common,
        /// JSON-lines file of extra failing initial conditions, `{"x":[...]}` per line.
        #[arg(long = "import")]
        import: Option<PathBuf>,
    },
    /// Run one failure search and print its outcome.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Strategy,
    },
    /// Run K searches per strategy (bench.csv, bench.md).
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        failures: Option<usize>,
    },
    /// Replay training failures against the final policy.
    Replay(Common),
}

fn open(common: &Common) -> anyhow::Result<Pipeline> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Pipeline::open(cfg, &common.out)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let out = open(&c)?.train()?;
            let n = out.log.len();
            println!("episodes {n}, failures {}", out.failure_count(0..n));
        }
        Command::TrainAvf(c) => {
            let fit = open(&c)?.train_avf()?;
            println!(
                "positive weight {:.2}, loss {:.4} -> {:.4}",
                fit.positive_weight, fit.initial_loss, fit.final_loss
            );
        }
        Command::FitGmm { common, import } => {
            let fit = open(&common)?.fit_gmm(import.as_deref())?;
            println!(
                "{} components on {} failures, log-likelihood {:.4}",
                fit.model.n_components(),
                fit.data.len(),
                fit.log_likelihood
            );
        }
        Command::Search { common, strategy } => {
            let p = open(&common)?;
            if strategy == Strategy::Pr {
                println!("{}", serde_json::to_string_pretty(&p.replay()?)?);
            } else {
                println!("{}", serde_json::to_string_pretty(&p.search(strategy)?)?);
            }
        }
        Command::Bench { common, failures } => {
            let p = open(&common)?;
            let k = failures.unwrap_or(p.config().search.k_failures);
            let table = p.bench(k)?;
            print!("{}", report::bench_markdown(&table));
        }
        Command::Replay(c) => {
            println!("{}", serde_json::to_string_pretty(&open(&c)?.replay()?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("TOOL_LOG").unwrap_or_else(|_| "error".into());
    env_logger::Builder::new().parse_filters(&level).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
