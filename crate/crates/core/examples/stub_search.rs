//! The search strategies against an analytic system under test, with no
//! training involved: the "agent" fails exactly when the initial speed
//! exceeds a threshold. A hand-written scorer plays the failure predictor
//! and a mixture fit to a few known failures plays the generative model.
//!
//!     cargo run --release --example stub_search

use rarefail::avf::FailureScorer;
use rarefail::gmm::{self, EmOptions, FailureSet, FailureSource};
use rarefail::search::{self, BenchInputs, HybridOptions, Strategy};
use rarefail::sim::{InitialCondition, InitialConditionDistribution, ScenarioId};
use rarefail::{report, Result};

const THRESHOLD: f64 = 28.0;

struct SpeedScore;

impl FailureScorer for SpeedScore {
    fn score_batch(&self, xs: &[InitialCondition]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|x| 1.0 / (1.0 + (-(x.v0() - THRESHOLD)).exp())).collect())
    }
}

fn main() {
    let dist = InitialConditionDistribution::for_scenario(ScenarioId::One);
    let support = dist.support();

    let mut known = FailureSet::new();
    for v in [28.5, 29.0, 29.4, 30.1, 31.0, 33.2] {
        known.push(InitialCondition::speed(v), FailureSource::Imported);
    }
    let mut rng = rarefail::seed::stream(3, "example/stub", 0);
    let opts = EmOptions {
        n_inits: 10,
        ..Default::default()
    };
    let mixture = gmm::em_fit(&known.rows(), 1, &support, &opts, &mut rng).unwrap().model;
    println!("mixture mean {:.2?}", mixture.means()[0]);

    let inputs = BenchInputs {
        dist: &dist,
        scorer: Some(&SpeedScore),
        gmm: Some(&mixture),
        gmm_data: Some(&known),
        n_candidates: 100,
        hybrid: HybridOptions {
            em: opts,
            ..Default::default()
        },
        hybrid_reset: false,
    };
    let mut runs = 0usize;
    let mut system = |x: &InitialCondition| -> Result<bool> {
        runs += 1;
        Ok(x.v0() > THRESHOLD)
    };
    let table = search::run_bench(&mut system, &Strategy::ALL_GUIDED, 20, 1_000_000, 3, &inputs).unwrap();
    print!("{}", report::bench_markdown(&table));
    println!("{runs} episodes simulated in total");
}
