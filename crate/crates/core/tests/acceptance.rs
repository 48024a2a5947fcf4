//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! The training criteria train three full scenario-1 agents and take most of
//! the runtime (about half an hour on one core).

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rarefail::avf::FailureScorer;
use rarefail::config::RunConfig;
use rarefail::ddpg::{OuProcess, Policy};
use rarefail::gmm::{self, EmOptions, FailureSet, FailureSource, GmmModel};
use rarefail::pipeline::Pipeline;
use rarefail::rundir;
use rarefail::search::{self, BenchInputs, HybridOptions, Strategy};
use rarefail::sim::{
    self, InitialCondition, InitialConditionDistribution, Outcome, ScenarioConfig, ScenarioId, Support,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, enforcing its runtime limit, and prints its line.
fn criterion(n: usize, name: &str, limit: Duration, body: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = body();
    let took = start.elapsed();
    let in_time = took <= limit;
    let pass = v.pass && in_time;
    let timing = if in_time {
        format!("{:.1} s", took.as_secs_f64())
    } else {
        format!("{:.1} s, over the {} s limit", took.as_secs_f64(), limit.as_secs())
    };
    println!(
        "{} {n}. {name}: {} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

const MIN: u64 = 60;

// ------------------------------------------------------------------ 1. gradients

fn gradients() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        match common::gradient_check(seed) {
            Ok(e) => worst = worst.max(e),
            Err(e) => return verdict(false, format!("config {seed}: {e}")),
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 100 networks"))
}

// ------------------------------------------------------------------------ 2. EM

fn wide(d: usize) -> Support {
    Support {
        lo: vec![-1e6; d],
        hi: vec![1e6; d],
    }
}

fn random_dataset(seed: u64) -> (Vec<Vec<f64>>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let n = rng.random_range(20..200);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let data = (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..k)];
            c.iter()
                .map(|m| m + rng.random_range(-1.0..1.0) * rng.random_range(0.1..2.0))
                .collect()
        })
        .collect();
    (data, d, k)
}

fn em() -> Verdict {
    let opts = EmOptions {
        n_inits: 3,
        ..EmOptions::default()
    };
    let mut worst_drop: f64 = 0.0;
    let mut reseeds = 0;
    for seed in 0..50 {
        let (data, d, k) = random_dataset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let run = match gmm::em_fit(&data, k, &wide(d), &opts, &mut rng) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("dataset {seed}: {e}")),
        };
        reseeds += run.reseeded.len();
        for pair in run.history.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }

    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<Vec<f64>> = (0..2000)
        .map(|i| vec![if i % 2 == 0 { -2.0 } else { 2.0 } + noise.sample(&mut rng)])
        .collect();
    let opts = EmOptions {
        n_inits: 10,
        ..EmOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fit = gmm::em_fit(&data, 2, &wide(1), &opts, &mut rng).unwrap();
    let mut means: Vec<f64> = fit.model.means().iter().map(|m| m[0]).collect();
    means.sort_by(f64::total_cmp);
    let sel = gmm::select_components(&data, 1..=5, &wide(1), &opts, &mut rng).unwrap();

    let monotone = worst_drop <= 1e-9;
    let recovered = (means[0] + 2.0).abs() <= 0.1 && (means[1] - 2.0).abs() <= 0.1;
    verdict(
        monotone && recovered && sel.n == 2,
        format!(
            "largest per-iteration drop {worst_drop:.1e} ({reseeds} reseeds), means [{:.3}, {:.3}], BIC picks n = {}",
            means[0], means[1], sel.n
        ),
    )
}

// ------------------------------------------------------------------ 3. physics

fn full_brake(_: &[f64]) -> f64 {
    1.0
}

fn physics() -> Verdict {
    let mut worst: f64 = 0.0;
    for v in [10.0, 20.0, 30.0] {
        for mu in [0.3, 0.8] {
            let mut cfg = ScenarioConfig::new(ScenarioId::One);
            cfg.base_mu = mu;
            cfg.obstacle_m = 1e6;
            let ep = sim::run_deterministic(&cfg, &InitialCondition::speed(v), full_brake).unwrap();
            let travelled = cfg.obstacle_m - ep.record.stop_gap_m.unwrap();
            let exact = v * v / (2.0 * mu * 9.81);
            worst = worst.max((travelled - exact).abs() / exact);
        }
    }

    let cfg = ScenarioConfig::new(ScenarioId::One);
    let crashes = |v: f64| {
        sim::run_deterministic(&cfg, &InitialCondition::speed(v), full_brake).unwrap().outcome == Outcome::Crashed
    };
    let (mut lo, mut hi) = (1.0, 100.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if crashes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let threshold_err = (hi - 39.62f64).abs() / 39.62;
    verdict(
        worst <= 0.01 && threshold_err <= 0.01,
        format!(
            "worst stopping-distance error {:.3}%, crash threshold {hi:.3} m/s",
            100.0 * worst
        ),
    )
}

// ------------------------------------------------------------------------ 4. OU

fn ou() -> Verdict {
    let mut p = OuProcess::new(0.2, 1.0, 0.1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let xs: Vec<f64> = (0..100_000).map(|_| p.next(&mut rng)).collect();
    let (m, v) = (common::mean(&xs), common::variance(&xs));
    verdict(
        (m - 0.2).abs() <= 0.02 && (v - 0.005).abs() <= 0.2 * 0.005,
        format!("mean {m:.4}, variance {v:.5}"),
    )
}

// ------------------------------------------------------------- 5. and 6. agent

const SEEDS: [u64; 3] = [1, 2, 3];
/// The default 300-episode window is empty once training has converged; the
/// last 40% of training reaches back to the late failures.
const SPEEDUP_WINDOW: usize = 2000;

struct Trained {
    seed: u64,
    run: Pipeline,
    final_rate: f64,
    first: usize,
    last: usize,
}

impl Trained {
    fn sane(&self) -> bool {
        self.final_rate < 0.05 && self.first > self.last
    }
}

fn train_agents(root: &Path) -> (Verdict, Vec<Trained>) {
    let mut out = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let mut cfg = RunConfig::defaults(ScenarioId::One, seed);
        cfg.avf.window_size = SPEEDUP_WINDOW;
        let run = Pipeline::open(cfg, root.join(format!("seed{seed}"))).unwrap();
        let trained = match run.train() {
            Ok(t) => t,
            Err(e) => return (verdict(false, format!("seed {seed}: {e}")), out),
        };
        let n = trained.log.len();
        let final_rate = trained.failure_count(n - 500..n) as f64 / 500.0;
        let (first, last) = (trained.failure_count(0..n / 10), trained.failure_count(n - n / 10..n));
        lines.push(format!(
            "seed {seed}: final-500 rate {:.1}%, deciles {first} -> {last}",
            100.0 * final_rate
        ));
        out.push(Trained {
            seed,
            run,
            final_rate,
            first,
            last,
        });
    }
    let below = out.iter().filter(|t| t.final_rate < 0.05).count();
    let decreasing = out.iter().all(|t| t.first > t.last);
    (verdict(below >= 2 && decreasing, lines.join("; ")), out)
}

fn speedup(agents: &[Trained]) -> (Verdict, Option<&Pipeline>) {
    let Some(agent) = agents.iter().find(|t| t.sane()) else {
        return (verdict(false, "no trained agent satisfies criterion 5"), None);
    };
    let run = &agent.run;
    if let Err(e) = run.train_avf() {
        return (verdict(false, format!("seed {}: train-avf: {e}", agent.seed)), None);
    }
    if let Err(e) = run.fit_gmm(None) {
        return (verdict(false, format!("seed {}: fit-gmm: {e}", agent.seed)), None);
    }
    let table = match run.bench(10) {
        Ok(t) => t,
        Err(e) => return (verdict(false, format!("seed {}: bench: {e}", agent.seed)), Some(run)),
    };
    let avg = |s| table.summary(s).unwrap().avg;
    let (vmc, avf, gmm, hybrid) = (
        avg(Strategy::Vmc),
        avg(Strategy::Avf),
        avg(Strategy::Gmm),
        avg(Strategy::Hybrid),
    );
    let censored = table.rows.iter().filter(|r| r.censored).count();
    let checks = [
        ("AVF <= VMC/10", avf <= vmc / 10.0),
        ("GMM+AVF <= VMC/10", hybrid <= vmc / 10.0),
        ("GMM+AVF <= 1.2 AVF", hybrid <= 1.2 * avf),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let mut detail = format!(
        "seed {}: mean episodes VMC {vmc:.1}, AVF {avf:.1}, GMM {gmm:.1}, GMM+AVF {hybrid:.1} ({censored} censored)",
        agent.seed
    );
    if !failed.is_empty() {
        detail += &format!("; not met: {}", failed.join(", "));
    }
    (
        verdict(failed.is_empty(), detail),
        Some(run),
    )
}

// ---------------------------------------------------------------- 7. null test

struct Constant;

impl FailureScorer for Constant {
    fn score_batch(&self, xs: &[InitialCondition]) -> rarefail::Result<Vec<f64>> {
        Ok(vec![0.5; xs.len()])
    }
}

fn null_guidance() -> Verdict {
    let d = InitialConditionDistribution::for_scenario(ScenarioId::One);
    let mph = sim::mph_to_ms(1.0);
    let px = GmmModel::new(
        vec![1.0],
        vec![vec![38.0 * mph]],
        vec![vec![vec![(11.0 * mph).powi(2)]]],
        d.support(),
    )
    .unwrap();
    let mut data = FailureSet::new();
    data.push(InitialCondition::speed(20.0), FailureSource::Imported);
    let inputs = BenchInputs {
        dist: &d,
        scorer: Some(&Constant),
        gmm: Some(&px),
        gmm_data: Some(&data),
        n_candidates: 50,
        hybrid: HybridOptions {
            em: EmOptions {
                n_inits: 1,
                ..Default::default()
            },
            ..HybridOptions::default()
        },
        hybrid_reset: true,
    };
    let mut stub = common::BernoulliStub::new(0.02, 11);
    let table = search::run_bench(&mut stub, &Strategy::ALL_GUIDED, 500, 100_000, 3, &inputs).unwrap();
    let vmc = table.summary(Strategy::Vmc).unwrap().avg;
    let means: Vec<(Strategy, f64)> = Strategy::ALL_GUIDED
        .iter()
        .map(|&s| (s, table.summary(s).unwrap().avg))
        .collect();
    let pass = means.iter().all(|&(_, m)| (m - vmc).abs() <= 0.2 * vmc);
    let detail: Vec<String> = means.iter().map(|(s, m)| format!("{} {m:.1}", s.heading())).collect();
    verdict(pass, format!("means over 500 trials: {}", detail.join(", ")))
}

// --------------------------------------------------------------- 8. determinism

/// Low friction, so a short training run already feeds every stage.
const SMALL: &str = r#"{
  "scenario_id": 1,
  "seed": 21,
  "sim": {"base_mu": 0.3},
  "ddpg": {"episodes": 200, "warmup_steps": 500},
  "avf": {"window_size": 150, "epochs": 100, "n_candidates": 200},
  "gmm": {"n_inits": 10},
  "search": {"budget": 20000, "K_failures": 5}
}"#;

fn small_pipeline(out: &Path) -> rarefail::Result<Pipeline> {
    let run = Pipeline::open(RunConfig::from_json_str(SMALL)?, out)?;
    run.train()?;
    run.train_avf()?;
    run.fit_gmm(None)?;
    run.bench(5)?;
    Ok(run)
}

fn determinism(root: &Path) -> Verdict {
    let (a, b) = (root.join("a"), root.join("b"));
    if let Err(e) = small_pipeline(&a).and_then(|_| small_pipeline(&b)) {
        return verdict(false, e.to_string());
    }
    let files = [
        rundir::EPISODES,
        rundir::POLICY,
        rundir::CRITIC,
        rundir::AVF,
        rundir::GMM,
        rundir::GMM_DATA,
        rundir::BENCH_CSV,
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .collect();
    if differing.is_empty() {
        verdict(true, format!("{} artifacts byte-identical across two runs", files.len()))
    } else {
        verdict(false, format!("differs: {}", differing.join(", ")))
    }
}

// ------------------------------------------------------------ 9. re-verification

/// Re-runs every failing_x in a run's bench.csv, plus every replayed training
/// failure, against a freshly loaded policy.
fn reverify(run: &Path) -> Result<(usize, usize), String> {
    let cfg = RunConfig::load(&run.join(rundir::CONFIG)).map_err(|e| e.to_string())?;
    let policy = Policy::from_json(&std::fs::read_to_string(run.join(rundir::POLICY)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    let mut reader = csv::Reader::from_path(run.join(rundir::BENCH_CSV)).map_err(|e| e.to_string())?;
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let x = &row[4];
        if !x.is_empty() {
            let v: Vec<f64> = x.split(';').map(|c| c.parse().unwrap()).collect();
            points.push(InitialCondition(v));
        }
    }
    let p = Pipeline::open(cfg.clone(), run).map_err(|e| e.to_string())?;
    points.extend(p.replay().map_err(|e| e.to_string())?.still_failing);
    let mut reproduced = 0;
    for x in &points {
        let ep = sim::run_deterministic(&cfg.sim, x, policy.as_controller()).map_err(|e| e.to_string())?;
        if ep.record.c == 1 {
            reproduced += 1;
        }
    }
    Ok((reproduced, points.len()))
}

fn reverification(runs: &[&Path]) -> Verdict {
    let mut pass = true;
    let mut lines = Vec::new();
    for run in runs {
        match reverify(run) {
            Ok((ok, total)) => {
                pass &= ok == total && total > 0;
                lines.push(format!("{ok}/{total} reproduce in {}", run.file_name().unwrap().to_string_lossy()));
            }
            Err(e) => {
                pass = false;
                lines.push(e);
            }
        }
    }
    verdict(pass, lines.join("; "))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut all = true;
    all &= criterion(1, "gradient correctness", Duration::from_secs(10), gradients);
    all &= criterion(2, "EM monotonicity and recovery", Duration::from_secs(30), em);
    all &= criterion(3, "simulator physics", Duration::from_secs(5), physics);
    all &= criterion(4, "OU stationary statistics", Duration::from_secs(5), ou);

    let mut agents = Vec::new();
    all &= criterion(5, "training sanity", Duration::from_secs(15 * MIN), || {
        let (v, a) = train_agents(tmp.path());
        agents = a;
        v
    });
    let mut bench_run = None;
    all &= criterion(6, "guided-search speedup", Duration::from_secs(20 * MIN), || {
        let (v, run) = speedup(&agents);
        bench_run = run.map(|r| r.dir().path().to_path_buf());
        v
    });
    all &= criterion(7, "search-equivalence null test", Duration::from_secs(MIN), null_guidance);
    let det = tmp.path().join("determinism");
    all &= criterion(8, "determinism", Duration::MAX, || determinism(&det));
    all &= criterion(9, "re-verification", Duration::MAX, || {
        let mut runs = vec![det.join("a")];
        if let Some(r) = &bench_run {
            runs.push(r.clone());
        }
        let runs: Vec<&Path> = runs.iter().map(|p| p.as_path()).collect();
        reverification(&runs)
    });

    if !all {
        println!("acceptance: some criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
