mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarefail::sim::{self, InitialCondition, InitialConditionDistribution, Outcome, ScenarioConfig, ScenarioId};

fn full_brake(_: &[f64]) -> f64 {
    1.0
}

/// Distance covered under full braking on uniform friction `mu`.
fn stopping_distance(v: f64, mu: f64) -> f64 {
    let mut cfg = ScenarioConfig::new(ScenarioId::One);
    cfg.base_mu = mu;
    cfg.obstacle_m = 1e6;
    let (mut state, _) = sim::reset(&cfg, &InitialCondition::speed(v)).unwrap();
    loop {
        let r = sim::step(&state, 1.0, &cfg);
        state = r.state;
        if r.outcome != Outcome::Running {
            assert_eq!(r.outcome, Outcome::Stopped);
            return state.position;
        }
    }
}

#[test]
fn full_brake_stopping_distance_matches_kinematics() {
    for v in [10.0, 20.0, 30.0] {
        for mu in [0.3, 0.8] {
            let exact = v * v / (2.0 * mu * 9.81);
            let got = stopping_distance(v, mu);
            assert!((got - exact).abs() <= 0.01 * exact, "v={v} mu={mu}: {got} vs {exact}");
        }
    }
}

/// Smallest initial speed that crashes under full braking, by bisection.
fn crash_threshold(cfg: &ScenarioConfig) -> f64 {
    let crashes = |v: f64| {
        sim::run_deterministic(cfg, &InitialCondition::speed(v), full_brake)
            .unwrap()
            .outcome
            == Outcome::Crashed
    };
    let (mut lo, mut hi) = (1.0, 100.0);
    assert!(!crashes(lo) && crashes(hi));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if crashes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[test]
fn full_brake_crash_threshold() {
    let cfg = ScenarioConfig::new(ScenarioId::One);
    let v = crash_threshold(&cfg);
    let exact = (2.0f64 * 0.8 * 9.81 * 100.0).sqrt();
    assert!((exact - 39.62).abs() < 0.01);
    assert!((v - 39.62).abs() <= 0.01 * 39.62, "{v}");
}

#[test]
fn patch_lengthens_stopping() {
    let cfg = ScenarioConfig::new(ScenarioId::Two);
    let run = |x: InitialCondition| sim::run_deterministic(&cfg, &x, full_brake).unwrap();
    let dry = run(InitialCondition::with_patch(25.0, 0.8, 10.0, 5.0));
    let icy = run(InitialCondition::with_patch(25.0, 0.1, 10.0, 30.0));
    assert_eq!(dry.outcome, Outcome::Stopped);
    assert!(icy.record.stop_gap_m.map_or(true, |g| g < dry.record.stop_gap_m.unwrap()));
}

/// Mean of N(m, s) truncated to (0, cap], by Simpson quadrature.
fn truncated_normal_mean(m: f64, s: f64, cap: f64) -> f64 {
    let steps = 20_000;
    let h = cap / steps as f64;
    let (mut z, mut first) = (0.0, 0.0);
    for i in 0..=steps {
        let x = i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = (-0.5 * ((x - m) / s).powi(2)).exp();
        z += w * d;
        first += w * x * d;
    }
    first / z
}

#[test]
fn speed_distribution_matches_truncated_normal() {
    for (id, m, s) in [(ScenarioId::One, 38.0, 11.0), (ScenarioId::Two, 35.0, 9.0)] {
        let dist = InitialConditionDistribution::for_scenario(id);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let speeds: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng).v0()).collect();
        let expected = sim::mph_to_ms(truncated_normal_mean(m, s, 80.0));
        let got = common::mean(&speeds);
        // Standard error is about 0.016 m/s.
        assert!((got - expected).abs() < 0.06, "{id}: {got} vs {expected}");
        assert!(speeds.iter().all(|&v| v > 0.0 && v <= sim::mph_to_ms(80.0)));
    }
}

#[test]
fn scenario_two_samples_stay_in_support() {
    let dist = InitialConditionDistribution::for_scenario(ScenarioId::Two);
    let support = dist.support();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20_000 {
        let x = dist.sample(&mut rng);
        assert!(support.contains(&x.0), "{x:?}");
        assert!(x.0[1] > 0.05 && x.0[1] <= 0.5);
    }
}

#[test]
fn record_serializes_in_log_format() {
    let cfg = ScenarioConfig::new(ScenarioId::One);
    let ep = sim::run_deterministic(&cfg, &InitialCondition::speed(12.0), full_brake).unwrap();
    let v: serde_json::Value = serde_json::to_value(&ep.record).unwrap();
    for key in ["episode", "x", "theta", "c", "return", "stop_gap_m"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["c"], 0);
}

proptest! {
    #[test]
    fn step_kinematics_invariants(
        v in 0.0f64..50.0,
        pos in 0.0f64..99.0,
        brake in -1.0f64..2.0,
        mu in 0.05f64..1.5,
    ) {
        let mut cfg = ScenarioConfig::new(ScenarioId::One);
        cfg.base_mu = mu;
        let (mut state, _) = sim::reset(&cfg, &InitialCondition::speed(v.max(1e-3))).unwrap();
        state.position = pos;
        let r = sim::step(&state, brake, &cfg);
        prop_assert!(r.state.velocity >= 0.0);
        prop_assert!(r.state.velocity <= state.velocity);
        prop_assert!(r.state.position >= state.position);
        prop_assert!(r.reward.is_finite());
        if r.state.position >= cfg.obstacle_m {
            prop_assert_eq!(r.outcome, Outcome::Crashed);
        }
    }

    #[test]
    fn failure_indicator_matches_outcome(v in 0.5f64..35.7, brake in 0.0f64..=1.0) {
        let cfg = ScenarioConfig::new(ScenarioId::One);
        let ep = sim::run_deterministic(&cfg, &InitialCondition::speed(v), |_: &[f64]| brake).unwrap();
        prop_assert_eq!(ep.record.c == 1, ep.outcome.is_failure());
        prop_assert_eq!(ep.record.stop_gap_m.is_some(), ep.outcome == Outcome::Stopped);
        prop_assert!(ep.outcome.is_terminal());
    }
}
