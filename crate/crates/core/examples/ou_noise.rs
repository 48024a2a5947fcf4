//! The exploration noise: a path of the Ornstein-Uhlenbeck process with the
//! training parameters, and the stationary moments of both update schemes.
//!
//!     cargo run --release --example ou_noise

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarefail::ddpg::{OuProcess, OuScheme};

fn moments(scheme: OuScheme) -> (f64, f64) {
    let mut p = OuProcess::exploration_default().with_scheme(scheme);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..100_000).map(|_| p.next(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var)
}

fn main() {
    let mut p = OuProcess::exploration_default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let path: Vec<String> = (0..12).map(|_| format!("{:.3}", p.next(&mut rng))).collect();
    println!("path: {}", path.join(" "));
    for scheme in [OuScheme::Exact, OuScheme::Euler] {
        let (m, v) = moments(scheme);
        println!("{scheme:?}: mean {m:.4}, variance {v:.5}");
    }
    println!("continuous-time stationary variance {:.5}", 0.1f64.powi(2) / 2.0);
}
