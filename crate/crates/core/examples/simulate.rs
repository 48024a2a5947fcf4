//! The braking simulator on its own: fixed-brake episodes in both
//! scenarios, and samples from the initial-condition distribution.
//!
//!     cargo run --release --example simulate

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarefail::sim::{self, InitialCondition, InitialConditionDistribution, ScenarioConfig, ScenarioId};

fn main() {
    let cfg = ScenarioConfig::new(ScenarioId::One);
    println!("scenario 1, constant brake");
    for brake in [0.4, 0.7, 1.0] {
        for v in [15.0, 25.0, 35.0] {
            let ep = sim::run_deterministic(&cfg, &InitialCondition::speed(v), |_: &[f64]| brake).unwrap();
            println!(
                "  brake {brake:.1}  v0 {v:>4.1} m/s  {:?} after {} steps, return {:8.2}, gap {:?}",
                ep.outcome, ep.steps, ep.record.episode_return, ep.record.stop_gap_m
            );
        }
    }

    let cfg2 = ScenarioConfig::new(ScenarioId::Two);
    println!("scenario 2, full brake at 25 m/s through a 30 m patch at 20 m");
    for patch_mu in [0.1, 0.3, 0.5] {
        let x = InitialCondition::with_patch(25.0, patch_mu, 20.0, 30.0);
        let ep = sim::run_deterministic(&cfg2, &x, |_: &[f64]| 1.0).unwrap();
        println!("  patch mu {patch_mu:.1}  {:?}, gap {:?}", ep.outcome, ep.record.stop_gap_m);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for id in [ScenarioId::One, ScenarioId::Two] {
        let dist = InitialConditionDistribution::for_scenario(id);
        println!("scenario {id} samples:");
        for _ in 0..4 {
            println!("  {:.2?}", dist.sample(&mut rng).as_slice());
        }
    }
}
