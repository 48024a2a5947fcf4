use std::path::Path;
use std::process::Command;

use rarefail::config::RunConfig;
use rarefail::pipeline::Pipeline;
use rarefail::rundir;
use rarefail::search::Strategy;
use rarefail::Error;

/// Low friction makes failures common, so a few dozen episodes feed every stage.
const SMALL: &str = r#"{
  "scenario_id": 1,
  "seed": 5,
  "sim": {"base_mu": 0.3},
  "ddpg": {"episodes": 40, "warmup_steps": 300},
  "avf": {"window_size": 40, "epochs": 30, "n_candidates": 100},
  "gmm": {"n_inits": 4},
  "search": {"budget": 3000, "K_failures": 3}
}"#;

fn small() -> RunConfig {
    RunConfig::from_json_str(SMALL).unwrap()
}

fn full_run(out: &Path) -> Pipeline {
    let p = Pipeline::open(small(), out).unwrap();
    p.train().unwrap();
    p.train_avf().unwrap();
    p.fit_gmm(None).unwrap();
    p
}

#[test]
fn end_to_end_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let p = full_run(tmp.path());
    let table = p.bench(3).unwrap();
    for name in [
        rundir::CONFIG,
        rundir::EPISODES,
        rundir::POLICY,
        rundir::CRITIC,
        rundir::AVF,
        rundir::GMM,
        rundir::BENCH_CSV,
        rundir::BENCH_MD,
        rundir::MANIFEST,
    ] {
        assert!(p.dir().exists(name), "{name} missing");
    }
    p.dir().verify().unwrap();

    for s in Strategy::ALL_GUIDED {
        assert_eq!(table.episodes(s).len(), 3, "{s}");
    }
    let csv = std::fs::read_to_string(p.dir().file(rundir::BENCH_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    let md = std::fs::read_to_string(p.dir().file(rundir::BENCH_MD)).unwrap();
    assert!(md.starts_with("| Episodes to failure | VMC | AVF | GMM | GMM+AVF |"));

    let stored = RunConfig::load(&p.dir().file(rundir::CONFIG)).unwrap();
    assert_eq!(stored, small());

    std::fs::write(p.dir().file(rundir::AVF), "{}").unwrap();
    assert!(matches!(p.dir().verify(), Err(Error::ManifestMismatch(f)) if f == rundir::AVF));
}

#[test]
fn repeated_pipeline_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_run(a.path());
    full_run(b.path());
    for name in [rundir::EPISODES, rundir::POLICY, rundir::CRITIC, rundir::AVF, rundir::GMM] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn search_matches_first_bench_row_and_replay_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = full_run(tmp.path());
    let one = p.search(Strategy::Avf).unwrap();
    let table = p.bench(2).unwrap();
    let first = table.rows.iter().find(|r| r.strategy == Strategy::Avf).unwrap();
    assert_eq!(one.episodes_used, first.episodes_used);
    assert_eq!(one.failing_x, first.failing_x);

    let replay = p.replay().unwrap();
    let log = p.load_log().unwrap();
    assert_eq!(replay.training_failures, log.iter().filter(|r| r.failed()).count());
    assert!(replay.still_failing.len() <= replay.training_failures);
}

#[test]
fn run_directory_is_bound_to_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    Pipeline::open(small(), tmp.path()).unwrap();
    let mut other = small();
    other.seed = 6;
    let err = Pipeline::open(other, tmp.path()).err().unwrap();
    assert!(err.to_string().contains("fresh --out"), "{err}");
}

#[test]
fn fit_gmm_import_and_shortage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.ddpg.episodes = 5;
    cfg.avf.window_size = 5;
    cfg.sim.base_mu = 1.5;
    let p = Pipeline::open(cfg, tmp.path()).unwrap();
    p.train().unwrap();
    let failures = p.load_log().unwrap().iter().filter(|r| r.failed()).count();
    assert!(failures < 2);
    let err = p.fit_gmm(None).unwrap_err();
    assert!(matches!(err, Error::InsufficientFailureData(_)), "{err}");
    assert!(err.to_string().contains("--import"));

    let import = tmp.path().join("expert.jsonl");
    std::fs::write(&import, "{\"x\":[34.0]}\n{\"x\":[35.0]}\n{\"x\":[33.5]}\n").unwrap();
    let fit = p.fit_gmm(Some(&import)).unwrap();
    assert_eq!(fit.data.len(), failures + 3);
    let (model, data) = p.load_gmm().unwrap();
    assert_eq!(model, fit.model);
    assert_eq!(data, fit.data);
}

// ---------------------------------------------------------------------- CLI

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rarefail"))
        .args(args)
        .env("TOOL_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn cli_reports_missing_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out_dir = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());

    let out = cli(&["search", "--config", c, "--out", o, "--strategy", "vmc"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy.json not found; run train"));

    let out = cli(&["train", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = cli(&["search", "--config", c, "--out", o, "--strategy", "avf"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("avf.json not found; run train-avf"), "{err}");

    let out = cli(&["search", "--config", c, "--out", o, "--strategy", "vmc"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["strategy"], "vmc");

    let out = cli(&["replay", "--config", c, "--out", o]);
    assert!(out.status.success());

    let out = cli(&["train", "--config", c, "--out", o, "--seed", "99"]);
    assert!(!out.status.success(), "seed override must not reuse a run directory");
}

#[test]
fn cli_full_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out_dir = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());
    for cmd in ["train", "train-avf", "fit-gmm"] {
        let out = cli(&[cmd, "--config", c, "--out", o]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cli(&["bench", "--config", c, "--out", o, "--failures", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("GMM+AVF"));
    let csv = std::fs::read_to_string(out_dir.join(rundir::BENCH_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

#[test]
fn cli_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"scenario_id":1,"seed":1,"sim":{"dt":-0.05}}"#).unwrap();
    let out = cli(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.dt"));

    std::fs::write(&cfg, r#"{"scenario_id":1,"seed":1,"search":{"budgett":5}}"#).unwrap();
    let out = cli(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("search.budgett"));
}
