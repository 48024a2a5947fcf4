//! The hand-written MLP and Adam on a toy problem: fit `sin(3x)` on [-1, 1]
//! with a 1-32-32-1 network and minibatch MSE.
//!
//!     cargo run --release --example mlp_regression

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rarefail::nn::{mse_loss, Activation, Adam, AdamConfig, Mlp, MlpSpec};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = MlpSpec::new(
        vec![1, 32, 32, 1],
        vec![Activation::Relu, Activation::Relu, Activation::Linear],
    )
    .unwrap();
    let mut net = Mlp::init(spec, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(3e-3), &net);

    let xs: Vec<f64> = (0..256).map(|i| -1.0 + 2.0 * i as f64 / 255.0).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..=400 {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(32) {
            let input = Array2::from_shape_fn((batch.len(), 1), |(i, _)| xs[batch[i]]);
            let targets: Vec<f64> = batch.iter().map(|&i| (3.0 * xs[i]).sin()).collect();
            let (out, cache) = net.forward_batch(input.view()).unwrap();
            let (loss, grad) = mse_loss(out.as_slice().unwrap(), &targets).unwrap();
            let grad = Array2::from_shape_vec((batch.len(), 1), grad).unwrap();
            let (grads, _) = net.backward_batch(&cache, grad.view()).unwrap();
            adam.step(&mut net, &grads).unwrap();
            total += loss * batch.len() as f64;
        }
        if epoch % 100 == 0 {
            println!("epoch {epoch:>3}  mse {:.5}", total / xs.len() as f64);
        }
    }
    for x in [-0.9, -0.3, 0.0, 0.4, 0.8] {
        println!("x {x:>4.1}  net {:+.3}  sin(3x) {:+.3}", net.predict(&[x]).unwrap()[0], (3.0f64 * x).sin());
    }
}
