//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarefail::error::Result;
use rarefail::nn::{Activation, Mlp, MlpSpec};
use rarefail::sim::InitialCondition;

// ---------------------------------------------------------------- gradients

/// Plain loop forward pass, independent of the library's batched one.
/// Returns the output and the smallest |pre-activation| over relu units.
pub fn naive_forward(mlp: &Mlp, input: &[f64]) -> (Vec<f64>, f64) {
    let mut a = input.to_vec();
    let mut min_relu = f64::INFINITY;
    for (layer, act) in mlp.layers().iter().zip(mlp.spec().activations()) {
        let (rows, cols) = layer.weights.dim();
        let mut next = vec![0.0; rows];
        for (i, out) in next.iter_mut().enumerate() {
            let mut z = layer.bias[i];
            for j in 0..cols {
                z += layer.weights[[i, j]] * a[j];
            }
            *out = match act {
                Activation::Relu => {
                    min_relu = min_relu.min(z.abs());
                    z.max(0.0)
                }
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::Tanh => z.tanh(),
                Activation::Linear => z,
            };
        }
        a = next;
    }
    (a, min_relu)
}

fn objective(mlp: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    naive_forward(mlp, x).0.iter().zip(g).map(|(o, g)| o * g).sum()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const ACTS: [Activation; 4] = [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Linear];

/// Builds a random network from `seed` and returns the largest relative error
/// between analytic and central-difference gradients, over every parameter
/// and every input component.
pub fn gradient_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=4);
    let mut sizes = vec![rng.random_range(1..=5)];
    for _ in 0..depth - 1 {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(1..=3));
    let acts: Vec<Activation> = (0..depth).map(|_| ACTS[rng.random_range(0..4)]).collect();
    let mut mlp = Mlp::init(MlpSpec::new(sizes.clone(), acts)?, &mut rng);
    for layer in mlp.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }

    // Keep clear of relu kinks so the finite difference is well defined.
    let x = loop {
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        if naive_forward(&mlp, &x).1 > 1e-3 {
            break x;
        }
    };
    let g: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (_, cache) = mlp.forward(&x)?;
    let (grads, din) = mlp.backward(&cache, &g)?;

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for l in 0..mlp.layers().len() {
        let (rows, cols) = mlp.layers()[l].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = mlp.layers()[l].weights[[i, j]];
                mlp.layers_mut()[l].weights[[i, j]] = orig + h;
                let up = objective(&mlp, &x, &g);
                mlp.layers_mut()[l].weights[[i, j]] = orig - h;
                let down = objective(&mlp, &x, &g);
                mlp.layers_mut()[l].weights[[i, j]] = orig;
                worst = worst.max(rel_err(grads.layers[l].weights[[i, j]], (up - down) / (2.0 * h)));
            }
            let orig = mlp.layers()[l].bias[i];
            mlp.layers_mut()[l].bias[i] = orig + h;
            let up = objective(&mlp, &x, &g);
            mlp.layers_mut()[l].bias[i] = orig - h;
            let down = objective(&mlp, &x, &g);
            mlp.layers_mut()[l].bias[i] = orig;
            worst = worst.max(rel_err(grads.layers[l].bias[i], (up - down) / (2.0 * h)));
        }
    }
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let numeric = (objective(&mlp, &xp, &g) - objective(&mlp, &xm, &g)) / (2.0 * h);
        worst = worst.max(rel_err(din[k], numeric));
    }
    Ok(worst)
}

// -------------------------------------------------------------------- stubs

/// Fails independently with probability `p` on every run, ignoring `x`.
pub struct BernoulliStub {
    pub p: f64,
    pub rng: ChaCha8Rng,
    pub runs: usize,
}

impl BernoulliStub {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            runs: 0,
        }
    }
}

impl rarefail::search::EpisodeRunner for BernoulliStub {
    fn run(&mut self, _x: &InitialCondition) -> Result<bool> {
        self.runs += 1;
        Ok(self.rng.random::<f64>() < self.p)
    }
}

/// Deterministic stub: fails exactly when the first component exceeds `threshold`.
pub fn threshold_stub(threshold: f64) -> impl FnMut(&InitialCondition) -> Result<bool> {
    move |x: &InitialCondition| Ok(x.0[0] > threshold)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
