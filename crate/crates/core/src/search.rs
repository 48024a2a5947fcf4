//! Failure-search strategies over a trained controller.
//!
//! Every strategy proposes initial conditions and runs them until one fails
//! or the episode budget is spent. Only simulator episodes count against the
//! budget; predictor and mixture evaluations are free.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::avf::{self, FailureScorer};
use crate::ddpg::Policy;
use crate::error::{Error, Result};
use crate::gmm::{self, EmOptions, FailureSet, FailureSource, GmmModel};
use crate::seed;
use crate::sim::{self, EpisodeRecord, InitialCondition, InitialConditionDistribution, ScenarioConfig};

/// Runs one episode from `x` and reports whether it failed.
pub trait EpisodeRunner {
    fn run(&mut self, x: &InitialCondition) -> Result<bool>;
}

/// Noise-free episodes of a trained policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRunner<'a> {
    pub config: &'a ScenarioConfig,
    pub policy: &'a Policy,
}

impl<'a> PolicyRunner<'a> {
    pub fn new(config: &'a ScenarioConfig, policy: &'a Policy) -> Self {
        Self { config, policy }
    }
}

impl EpisodeRunner for PolicyRunner<'_> {
    fn run(&mut self, x: &InitialCondition) -> Result<bool> {
        let ep = sim::run_deterministic(self.config, x, self.policy.as_controller())?;
        Ok(ep.record.failed())
    }
}

impl<F: FnMut(&InitialCondition) -> Result<bool>> EpisodeRunner for F {
    fn run(&mut self, x: &InitialCondition) -> Result<bool> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vmc,
    Pr,
    Avf,
    Gmm,
    Hybrid,
}

impl Strategy {
    pub const ALL_GUIDED: [Strategy; 4] = [Strategy::Vmc, Strategy::Avf, Strategy::Gmm, Strategy::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vmc => "vmc",
            Strategy::Pr => "pr",
            Strategy::Avf => "avf",
            Strategy::Gmm => "gmm",
            Strategy::Hybrid => "hybrid",
        }
    }

    /// Column heading used in rendered tables.
    pub fn heading(self) -> &'static str {
        match self {
            Strategy::Vmc => "VMC",
            Strategy::Pr => "PR",
            Strategy::Avf => "AVF",
            Strategy::Gmm => "GMM",
            Strategy::Hybrid => "GMM+AVF",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmc" => Ok(Strategy::Vmc),
            "pr" => Ok(Strategy::Pr),
            "avf" => Ok(Strategy::Avf),
            "gmm" => Ok(Strategy::Gmm),
            "hybrid" => Ok(Strategy::Hybrid),
            other => Err(Error::Config {
                path: "strategy".into(),
                message: format!("unknown strategy {other:?}; expected vmc|pr|avf|gmm|hybrid"),
            }),
        }
    }
}

/// Where an evaluated episode's initial condition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProposalSource {
    Vmc,
    Avf,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub strategy: Strategy,
    pub found: bool,
    pub episodes_used: usize,
    pub failing_x: Option<InitialCondition>,
    /// Source of every evaluated episode, in order.
    pub trace: Vec<ProposalSource>,
}

impl SearchOutcome {
    /// Re-runs the reported failure; `Ok(true)` when nothing was found.
    pub fn reproduces<E: EpisodeRunner + ?Sized>(&self, runner: &mut E) -> Result<bool> {
        match &self.failing_x {
            Some(x) => runner.run(x),
            None => Ok(!self.found),
        }
    }

    pub fn failing_source(&self) -> Option<ProposalSource> {
        if self.found {
            self.trace.last().copied()
        } else {
            None
        }
    }
}

fn search_loop<E, P>(runner: &mut E, strategy: Strategy, budget: usize, mut propose: P) -> Result<SearchOutcome>
where
    E: EpisodeRunner + ?Sized,
    P: FnMut(usize) -> Result<(InitialCondition, ProposalSource)>,
{
    let mut trace = Vec::new();
    for i in 0..budget {
        let (x, source) = propose(i)?;
        trace.push(source);
        if runner.run(&x)? {
            return Ok(SearchOutcome {
                strategy,
                found: true,
                episodes_used: i + 1,
                failing_x: Some(x),
                trace,
            });
        }
    }
    Ok(SearchOutcome {
        strategy,
        found: false,
        episodes_used: budget,
        failing_x: None,
        trace,
    })
}

/// Vanilla Monte Carlo: sample from the input distribution until a failure.
pub fn vmc_search<E, R>(
    runner: &mut E,
    dist: &InitialConditionDistribution,
    budget: usize,
    rng: &mut R,
) -> Result<SearchOutcome>
where
    E: EpisodeRunner + ?Sized,
    R: Rng + ?Sized,
{
    search_loop(runner, Strategy::Vmc, budget, |_| {
        Ok((dist.sample(rng), ProposalSource::Vmc))
    })
}

/// Replays every failure recorded in a training log and keeps those that
/// still fail against the current policy.
pub fn pr_search<E>(runner: &mut E, log: &[EpisodeRecord]) -> Result<Vec<InitialCondition>>
where
    E: EpisodeRunner + ?Sized,
{
    let mut still_failing = Vec::new();
    for r in log.iter().filter(|r| r.failed()) {
        if runner.run(&r.x)? {
            still_failing.push(r.x.clone());
        }
    }
    Ok(still_failing)
}

/// Predictor-guided search: each episode runs the top-scoring candidate of a
/// fresh batch of `n_candidates` samples.
pub fn avf_search<E, S, R>(
    runner: &mut E,
    scorer: &S,
    dist: &InitialConditionDistribution,
    n_candidates: usize,
    budget: usize,
    rng: &mut R,
) -> Result<SearchOutcome>
where
    E: EpisodeRunner + ?Sized,
    S: FailureScorer + ?Sized,
    R: Rng + ?Sized,
{
    search_loop(runner, Strategy::Avf, budget, |_| {
        let sel = avf::select(scorer, dist, n_candidates, rng)?;
        Ok((sel.x, ProposalSource::Avf))
    })
}

/// Mixture-guided search: each episode runs a fresh sample of the failure model.
pub fn gmm_search<E, R>(runner: &mut E, model: &GmmModel, budget: usize, rng: &mut R) -> Result<SearchOutcome>
where
    E: EpisodeRunner + ?Sized,
    R: Rng + ?Sized,
{
    search_loop(runner, Strategy::Gmm, budget, |_| {
        Ok((model.sample(rng), ProposalSource::Gmm))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlternationOrder {
    GmmFirst,
    AvfFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridOptions {
    pub order: AlternationOrder,
    /// Also refit the mixture on failures it proposed itself.
    pub update_on_gmm_failures: bool,
    pub em: EmOptions,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            order: AlternationOrder::GmmFirst,
            update_on_gmm_failures: false,
            em: EmOptions::default(),
        }
    }
}

/// Alternates mixture and predictor proposals. When the failing episode was
/// predictor-proposed (or mixture-proposed with `update_on_gmm_failures`),
/// the mixture is refit on `failure_data` plus the new point before returning.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_search<E, S, R>(
    runner: &mut E,
    scorer: &S,
    model: &GmmModel,
    failure_data: &mut FailureSet,
    dist: &InitialConditionDistribution,
    n_candidates: usize,
    budget: usize,
    opts: &HybridOptions,
    rng: &mut R,
) -> Result<(SearchOutcome, GmmModel)>
where
    E: EpisodeRunner + ?Sized,
    S: FailureScorer + ?Sized,
    R: Rng + ?Sized,
{
    let outcome = search_loop(runner, Strategy::Hybrid, budget, |i| {
        let gmm_turn = match opts.order {
            AlternationOrder::GmmFirst => i % 2 == 0,
            AlternationOrder::AvfFirst => i % 2 == 1,
        };
        if gmm_turn {
            Ok((model.sample(rng), ProposalSource::Gmm))
        } else {
            let sel = avf::select(scorer, dist, n_candidates, rng)?;
            Ok((sel.x, ProposalSource::Avf))
        }
    })?;

    let refit = match outcome.failing_source() {
        Some(ProposalSource::Avf) => true,
        Some(ProposalSource::Gmm) => opts.update_on_gmm_failures,
        _ => false,
    };
    let updated = if refit {
        let mut new = FailureSet::new();
        new.push(outcome.failing_x.clone().expect("found"), FailureSource::SearchFound);
        gmm::update(model, &new, failure_data, &opts.em, rng)?
    } else {
        model.clone()
    };
    Ok((outcome, updated))
}

/// Artifacts the guided strategies draw on.
pub struct BenchInputs<'a> {
    pub dist: &'a InitialConditionDistribution,
    pub scorer: Option<&'a dyn FailureScorer>,
    pub gmm: Option<&'a GmmModel>,
    /// Failure set the mixture was fit on; the hybrid strategy grows a copy of it.
    pub gmm_data: Option<&'a FailureSet>,
    pub n_candidates: usize,
    pub hybrid: HybridOptions,
    /// Restart the hybrid mixture from `gmm` for every search instead of
    /// carrying the adapted model forward.
    pub hybrid_reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub search_index: usize,
    pub episodes_used: usize,
    pub censored: bool,
    pub failing_x: Option<InitialCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: usize,
    pub avg: f64,
    pub max: usize,
    pub count: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.strategy) {
                out.push(r.strategy);
            }
        }
        out
    }

    pub fn episodes(&self, strategy: Strategy) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.episodes_used)
            .collect()
    }

    pub fn summary(&self, strategy: Strategy) -> Option<Summary> {
        let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.strategy == strategy).collect();
        if rows.is_empty() {
            return None;
        }
        let eps: Vec<usize> = rows.iter().map(|r| r.episodes_used).collect();
        Some(Summary {
            min: *eps.iter().min().expect("non-empty"),
            avg: eps.iter().sum::<usize>() as f64 / eps.len() as f64,
            max: *eps.iter().max().expect("non-empty"),
            count: eps.len(),
            censored: rows.iter().filter(|r| r.censored).count(),
        })
    }
}

fn missing(what: &str) -> Error {
    Error::Config {
        path: "search.strategies".into(),
        message: format!("strategy needs {what}"),
    }
}

/// Runs `k_failures` independent searches per strategy. Search `i` of strategy
/// `s` draws from the stream `("search/<s>", i)` under `master_seed`. The
/// hybrid strategy carries its adapted mixture across searches unless
/// `hybrid_reset` is set.
pub fn run_bench<E>(
    runner: &mut E,
    strategies: &[Strategy],
    k_failures: usize,
    budget: usize,
    master_seed: u64,
    inputs: &BenchInputs<'_>,
) -> Result<BenchTable>
where
    E: EpisodeRunner + ?Sized,
{
    let mut table = BenchTable::default();
    for &strategy in strategies {
        let mut hybrid_model = inputs.gmm.cloned();
        let mut hybrid_data = inputs.gmm_data.cloned().unwrap_or_default();
        for i in 0..k_failures {
            let mut rng = seed::stream(master_seed, &format!("search/{strategy}"), i as u64);
            let outcome = match strategy {
                Strategy::Vmc => vmc_search(runner, inputs.dist, budget, &mut rng)?,
                Strategy::Avf => {
                    let scorer = inputs.scorer.ok_or_else(|| missing("a failure predictor"))?;
                    avf_search(runner, scorer, inputs.dist, inputs.n_candidates, budget, &mut rng)?
                }
                Strategy::Gmm => {
                    let model = inputs.gmm.ok_or_else(|| missing("a failure mixture"))?;
                    gmm_search(runner, model, budget, &mut rng)?
                }
                Strategy::Hybrid => {
                    let scorer = inputs.scorer.ok_or_else(|| missing("a failure predictor"))?;
                    if inputs.hybrid_reset {
                        hybrid_model = inputs.gmm.cloned();
                        hybrid_data = inputs.gmm_data.cloned().unwrap_or_default();
                    }
                    let model = hybrid_model.as_ref().ok_or_else(|| missing("a failure mixture"))?;
                    let (outcome, next) = hybrid_search(
                        runner,
                        scorer,
                        model,
                        &mut hybrid_data,
                        inputs.dist,
                        inputs.n_candidates,
                        budget,
                        &inputs.hybrid,
                        &mut rng,
                    )?;
                    hybrid_model = Some(next);
                    outcome
                }
                Strategy::Pr => {
                    return Err(Error::Config {
                        path: "search.strategies".into(),
                        message: "pr replays training failures and is not benchmarked".into(),
                    })
                }
            };
            log::info!(
                "{strategy} search {i}: {} episodes{}",
                outcome.episodes_used,
                if outcome.found { "" } else { " (censored)" }
            );
            table.rows.push(BenchRow {
                strategy,
                search_index: i,
                episodes_used: outcome.episodes_used,
                censored: !outcome.found,
                failing_x: outcome.failing_x,
            });
        }
    }
    Ok(table)
}
