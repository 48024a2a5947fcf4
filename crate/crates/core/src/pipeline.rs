//! The staged workflow over a run directory:
//! `train` → `train-avf` → `fit-gmm` → `search` / `bench`, plus `replay`.
//!
//! Each stage reads what earlier stages wrote and adds its own artifacts.
//! Every stage draws randomness from its own stream derived from the config
//! seed, so stages can be rerun independently with identical results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avf::{self, AvfModel, AvfTraining};
use crate::config::{ComponentCount, RunConfig};
use crate::ddpg::{self, Policy, TrainingOutput};
use crate::error::{Error, Result};
use crate::gmm::{self, FailureSet, FailureSource, GmmModel};
use crate::rundir::{self, RunDir};
use crate::search::{self, BenchInputs, BenchTable, HybridOptions, PolicyRunner, Strategy};
use crate::seed;
use crate::sim::{EpisodeRecord, InitialCondition, InitialConditionDistribution};
use crate::report;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailureRow {
    x: InitialCondition,
    source: FailureSource,
}

/// Result of `fit-gmm`.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    pub data: FailureSet,
    /// BIC per candidate when the component count was selected automatically.
    pub bic_scores: Option<Vec<(usize, f64)>>,
}

/// Printable result of a single `search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub strategy: Strategy,
    pub found: bool,
    pub episodes_used: usize,
    pub failing_x: Option<InitialCondition>,
    pub reproduced: Option<bool>,
}

/// Result of `replay`: training failures that still fail under the final policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub training_failures: usize,
    pub still_failing: Vec<InitialCondition>,
}

pub struct Pipeline {
    config: RunConfig,
    dir: RunDir,
}

impl Pipeline {
    /// Opens (or creates) a run directory for `config`. A directory that
    /// already holds a different resolved config is refused.
    pub fn open(config: RunConfig, out: impl AsRef<Path>) -> Result<Self> {
        config.validate()?;
        let dir = RunDir::create(out.as_ref())?;
        if dir.exists(rundir::CONFIG) {
            let stored = RunConfig::from_json_str(&dir.read(rundir::CONFIG, "train")?)?;
            if stored != config {
                return Err(Error::Config {
                    path: "<root>".into(),
                    message: format!(
                        "differs from {}; use a fresh --out directory",
                        dir.file(rundir::CONFIG).display()
                    ),
                });
            }
        } else {
            dir.write(rundir::CONFIG, config.to_json().as_bytes())?;
        }
        Ok(Self { config, dir })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    fn dist(&self) -> InitialConditionDistribution {
        InitialConditionDistribution::for_scenario(self.config.scenario_id)
    }

    pub fn train(&self) -> Result<TrainingOutput> {
        let mut rng = seed::stream(self.config.seed, "ddpg", 0);
        let out = ddpg::train(&self.config.sim, &self.dist(), &self.config.ddpg, &mut rng)?;
        self.dir.write_log(&out.log)?;
        self.dir.write(rundir::POLICY, out.policy.to_json().as_bytes())?;
        self.dir.write(rundir::CRITIC, out.critic.to_json(None).as_bytes())?;
        log::info!(
            "trained {} episodes, {} failures",
            out.log.len(),
            out.failure_count(0..out.log.len())
        );
        Ok(out)
    }

    pub fn load_log(&self) -> Result<Vec<EpisodeRecord>> {
        self.dir.read_log()
    }

    pub fn load_policy(&self) -> Result<Policy> {
        Policy::from_json(&self.dir.read(rundir::POLICY, "train")?)
    }

    pub fn train_avf(&self) -> Result<AvfTraining> {
        let log = self.load_log()?;
        let ds = avf::build_dataset(&log, self.config.avf.window_size)?;
        let mut rng = seed::stream(self.config.seed, "avf", 0);
        let fit = avf::train(&ds, self.config.avf.epochs, self.config.avf.lr, &mut rng)?;
        self.dir.write(rundir::AVF, fit.model.to_json().as_bytes())?;
        log::info!(
            "failure predictor: {} rows, {} failures, loss {:.4} -> {:.4}",
            ds.len(),
            ds.positives(),
            fit.initial_loss,
            fit.final_loss
        );
        Ok(fit)
    }

    pub fn load_avf(&self) -> Result<AvfModel> {
        AvfModel::from_json(&self.dir.read(rundir::AVF, "train-avf")?)
    }

    /// Fits the failure mixture on every failure in the training log, plus
    /// the points in `import` when given.
    pub fn fit_gmm(&self, import: Option<&Path>) -> Result<GmmFit> {
        let log = self.load_log()?;
        let support = self.dist().support();
        let mut data = FailureSet::from_log(&log);
        if let Some(path) = import {
            let imported = gmm::import_failures(path, &support)?;
            log::info!("imported {} failures from {}", imported.len(), path.display());
            data.extend(&imported);
        }
        let rows = data.rows();
        let opts = self.config.em_options();
        let mut rng = seed::stream(self.config.seed, "gmm", 0);
        let insufficient = |needed: usize| {
            Error::InsufficientFailureData(format!(
                "{} failing initial conditions available, {needed} needed; supply more with --import",
                rows.len()
            ))
        };
        let (run, bic_scores) = match self.config.gmm.n {
            ComponentCount::Fixed(n) => {
                if rows.len() < n {
                    return Err(insufficient(n));
                }
                (gmm::em_fit(&rows, n, &support, &opts, &mut rng)?, None)
            }
            ComponentCount::Auto(_) => {
                let [lo, hi] = self.config.gmm.candidate_range;
                if rows.len() <= hi {
                    return Err(insufficient(hi + 1));
                }
                let sel = gmm::select_components(&rows, lo..=hi, &support, &opts, &mut rng)?;
                log::info!("BIC selected {} components", sel.n);
                (sel.best, Some(sel.scores))
            }
        };
        self.dir.write(rundir::GMM, run.model.to_json().as_bytes())?;
        let failure_rows: Vec<FailureRow> = data
            .points()
            .iter()
            .zip(data.sources())
            .map(|(x, &source)| FailureRow { x: x.clone(), source })
            .collect();
        self.dir
            .write(rundir::GMM_DATA, rundir::encode_jsonl(&failure_rows)?.as_bytes())?;
        Ok(GmmFit {
            model: run.model,
            log_likelihood: run.log_likelihood,
            data,
            bic_scores,
        })
    }

    pub fn load_gmm(&self) -> Result<(GmmModel, FailureSet)> {
        let model = GmmModel::from_json(&self.dir.read(rundir::GMM, "fit-gmm")?)?;
        let rows: Vec<FailureRow> = rundir::decode_jsonl(&self.dir.read(rundir::GMM_DATA, "fit-gmm")?)?;
        let mut data = FailureSet::new();
        for r in rows {
            data.push(r.x, r.source);
        }
        Ok((model, data))
    }

    fn hybrid_options(&self) -> HybridOptions {
        HybridOptions {
            order: self.config.search.alternation_order,
            update_on_gmm_failures: self.config.gmm.update_on_gmm_failures,
            em: self.config.em_options(),
        }
    }

    /// Runs one search with `strategy` (search index 0 of the bench streams).
    /// `Strategy::Pr` is answered by [`Pipeline::replay`] instead.
    pub fn search(&self, strategy: Strategy) -> Result<SearchReport> {
        if strategy == Strategy::Pr {
            return Err(Error::Config {
                path: "--strategy".into(),
                message: "pr is run by the replay subcommand".into(),
            });
        }
        let table = self.run_bench(&[strategy], 1)?;
        let row = &table.rows[0];
        Ok(SearchReport {
            strategy,
            found: !row.censored,
            episodes_used: row.episodes_used,
            failing_x: row.failing_x.clone(),
            reproduced: row.failing_x.as_ref().map(|_| true),
        })
    }

    fn run_bench(&self, strategies: &[Strategy], k: usize) -> Result<BenchTable> {
        let policy = self.load_policy()?;
        let needs_avf = strategies.iter().any(|s| matches!(s, Strategy::Avf | Strategy::Hybrid));
        let needs_gmm = strategies.iter().any(|s| matches!(s, Strategy::Gmm | Strategy::Hybrid));
        let scorer = if needs_avf { Some(self.load_avf()?) } else { None };
        let (gmm_model, gmm_data) = if needs_gmm {
            let (m, d) = self.load_gmm()?;
            (Some(m), Some(d))
        } else {
            (None, None)
        };
        let dist = self.dist();
        let inputs = BenchInputs {
            dist: &dist,
            scorer: scorer.as_ref().map(|s| s as &dyn avf::FailureScorer),
            gmm: gmm_model.as_ref(),
            gmm_data: gmm_data.as_ref(),
            n_candidates: self.config.avf.n_candidates,
            hybrid: self.hybrid_options(),
            hybrid_reset: self.config.search.hybrid_reset,
        };
        let mut runner = PolicyRunner::new(&self.config.sim, &policy);
        let table = search::run_bench(
            &mut runner,
            strategies,
            k,
            self.config.search.budget,
            self.config.seed,
            &inputs,
        )?;
        for row in &table.rows {
            if let Some(x) = &row.failing_x {
                if !search::EpisodeRunner::run(&mut runner, x)? {
                    return Err(Error::NotReproduced(format!(
                        "{} search {} at x = {:?}",
                        row.strategy, row.search_index, x.0
                    )));
                }
            }
        }
        Ok(table)
    }

    /// Runs `k` searches per configured strategy and writes bench.csv and bench.md.
    pub fn bench(&self, k: usize) -> Result<BenchTable> {
        let table = self.run_bench(&self.config.search.strategies, k)?;
        self.dir
            .write(rundir::BENCH_CSV, report::bench_csv(&table)?.as_bytes())?;
        self.dir
            .write(rundir::BENCH_MD, report::bench_markdown(&table).as_bytes())?;
        Ok(table)
    }

    /// Replays every training failure against the final policy.
    pub fn replay(&self) -> Result<ReplayReport> {
        let log = self.load_log()?;
        let policy = self.load_policy()?;
        let mut runner = PolicyRunner::new(&self.config.sim, &policy);
        let still_failing = search::pr_search(&mut runner, &log)?;
        Ok(ReplayReport {
            training_failures: log.iter().filter(|r| r.failed()).count(),
            still_failing,
        })
    }
}
