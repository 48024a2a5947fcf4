//! Failure-probability predictor trained on late-training episodes.
//!
//! Inputs are the initial condition plus the agent's normalized training
//! episode index; the output is the predicted probability that the episode
//! fails. Guided search samples a batch of candidates and runs the one the
//! predictor scores highest.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{bce_loss, Activation, Adam, AdamConfig, Mlp, MlpSpec, Normalization};
use crate::sim::{EpisodeRecord, InitialCondition, InitialConditionDistribution};

pub const MINIBATCH: usize = 32;
pub const MAX_POSITIVE_WEIGHT: f64 = 100.0;

pub fn avf_spec(x_dim: usize) -> MlpSpec {
    MlpSpec::new(
        vec![x_dim + 1, 64, 32, 1],
        vec![Activation::Relu, Activation::Relu, Activation::Sigmoid],
    )
    .expect("static spec")
}

/// Normalized training rows built from the tail of an episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct AvfDataset {
    /// z-normalized `[x..., theta]` rows.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub norm: Normalization,
    /// Inclusive episode range covered.
    pub window: (usize, usize),
    /// Set when the window holds no failures at all.
    pub no_failures: bool,
}

impl AvfDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.5).count()
    }
}

/// Keeps the last `window_size` records; `theta = episode / log.len()`.
pub fn build_dataset(log: &[EpisodeRecord], window_size: usize) -> Result<AvfDataset> {
    if window_size == 0 || log.is_empty() {
        return Err(Error::EmptyDataset("training window is empty".into()));
    }
    if window_size > log.len() {
        return Err(Error::InsufficientData {
            needed: window_size,
            got: log.len(),
        });
    }
    let total = log.len() as f64;
    let tail = &log[log.len() - window_size..];
    let raw: Vec<Vec<f64>> = tail
        .iter()
        .map(|r| {
            let mut row = r.x.0.clone();
            row.push(r.theta as f64 / total);
            row
        })
        .collect();
    let norm = Normalization::fit(&raw)?;
    let labels: Vec<f64> = tail.iter().map(|r| f64::from(r.c)).collect();
    let no_failures = labels.iter().all(|&y| y == 0.0);
    if no_failures {
        log::warn!("failure-predictor window holds no failures");
    }
    Ok(AvfDataset {
        features: raw.iter().map(|r| norm.apply(r)).collect(),
        labels,
        norm,
        window: (tail[0].episode, tail[tail.len() - 1].episode),
        no_failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvfModel {
    pub network: Mlp,
    pub norm: Normalization,
    /// Raw (un-normalized) agent feature used when scoring; 1.0 is the final episode.
    pub theta_at_test: f64,
}

impl AvfModel {
    pub fn new(network: Mlp, norm: Normalization) -> Result<Self> {
        if network.spec().output_dim() != 1
            || network.spec().activations().last() != Some(&Activation::Sigmoid)
        {
            return Err(Error::InvalidSpec("predictor must end in one sigmoid unit".into()));
        }
        if norm.mean.len() != network.spec().input_dim() {
            return Err(Error::Dimension {
                context: "predictor normalization",
                expected: network.spec().input_dim(),
                actual: norm.mean.len(),
            });
        }
        Ok(Self {
            network,
            norm,
            theta_at_test: 1.0,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.network.spec().input_dim() - 1
    }

    fn features(&self, x: &InitialCondition, theta: f64) -> Result<Vec<f64>> {
        if x.dim() != self.x_dim() {
            return Err(Error::Dimension {
                context: "predictor input",
                expected: self.x_dim(),
                actual: x.dim(),
            });
        }
        let mut row = x.0.clone();
        row.push(theta);
        Ok(self.norm.apply(&row))
    }

    /// Predicted failure probability, strictly inside `(0, 1)`.
    pub fn predict(&self, x: &InitialCondition, theta: f64) -> Result<f64> {
        Ok(self.network.predict(&self.features(x, theta)?)?[0])
    }

    pub fn to_json(&self) -> String {
        self.network.to_json(Some(&self.norm))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (network, norm) = Mlp::from_json(text)?;
        let norm = norm.ok_or_else(|| Error::InvalidSpec("predictor file lacks normalization".into()))?;
        Self::new(network, norm)
    }
}

/// Anything that can rank candidate initial conditions by failure likelihood.
pub trait FailureScorer {
    fn score_batch(&self, candidates: &[InitialCondition]) -> Result<Vec<f64>>;
}

impl FailureScorer for AvfModel {
    fn score_batch(&self, candidates: &[InitialCondition]) -> Result<Vec<f64>> {
        let width = self.network.spec().input_dim();
        let mut batch = Array2::zeros((candidates.len(), width));
        for (i, x) in candidates.iter().enumerate() {
            let f = self.features(x, self.theta_at_test)?;
            for (j, v) in f.into_iter().enumerate() {
                batch[[i, j]] = v;
            }
        }
        let (out, _) = self.network.forward_batch(batch.view())?;
        Ok(out.column(0).to_vec())
    }
}

/// Index of the first maximum.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub x: InitialCondition,
    pub index: usize,
    pub score: f64,
}

/// Samples `n_candidates` initial conditions and returns the highest-scoring
/// one (lowest index on ties).
pub fn select<S, R>(
    scorer: &S,
    dist: &InitialConditionDistribution,
    n_candidates: usize,
    rng: &mut R,
) -> Result<Selection>
where
    S: FailureScorer + ?Sized,
    R: Rng + ?Sized,
{
    let n = n_candidates.max(1);
    let mut candidates: Vec<InitialCondition> = (0..n).map(|_| dist.sample(rng)).collect();
    let scores = scorer.score_batch(&candidates)?;
    let index = argmax_first(&scores).expect("non-empty batch");
    Ok(Selection {
        x: candidates.swap_remove(index),
        index,
        score: scores[index],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvfTraining {
    pub model: AvfModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub positive_weight: f64,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn mean_loss(net: &Mlp, ds: &AvfDataset, positive_weight: f64) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in ds.features.iter().zip(&ds.labels) {
        let p = net.predict(x)?[0];
        total += bce_loss(p, y, if y > 0.5 { positive_weight } else { 1.0 }).0;
    }
    Ok(total / ds.len() as f64)
}

/// Minimizes class-weighted binary cross-entropy with Adam, minibatches of
/// [`MINIBATCH`] reshuffled every epoch.
///
/// Rows are put in a canonical order before shuffling, so the fitted model
/// depends on the dataset's contents and the rng only.
pub fn train<R: Rng + ?Sized>(ds: &AvfDataset, epochs: usize, lr: f64, rng: &mut R) -> Result<AvfTraining> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("no training rows".into()));
    }
    let positives = ds.positives();
    if positives == 0 {
        return Err(Error::InsufficientFailureData(format!(
            "episodes {}..={} contain no failures",
            ds.window.0, ds.window.1
        )));
    }
    let negatives = ds.len() - positives;
    let positive_weight = (negatives as f64 / positives as f64).clamp(1.0, MAX_POSITIVE_WEIGHT);

    let width = ds.features[0].len();
    let mut net = Mlp::init(avf_spec(width - 1), rng);
    let mut adam = Adam::new(AdamConfig::with_lr(lr), &net);
    let initial_loss = mean_loss(&net, ds, positive_weight)?;

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        lexicographic(&ds.features[a], &ds.features[b]).then(ds.labels[a].total_cmp(&ds.labels[b]))
    });

    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(MINIBATCH) {
            let mut batch = Array2::zeros((chunk.len(), width));
            for (i, &row) in chunk.iter().enumerate() {
                for (j, v) in ds.features[row].iter().enumerate() {
                    batch[[i, j]] = *v;
                }
            }
            let (out, cache) = net.forward_batch(batch.view())?;
            let scale = 1.0 / chunk.len() as f64;
            let grad = Array2::from_shape_fn((chunk.len(), 1), |(i, _)| {
                let y = ds.labels[chunk[i]];
                let w = if y > 0.5 { positive_weight } else { 1.0 };
                bce_loss(out[[i, 0]], y, w).1 * scale
            });
            let (grads, _) = net.backward_batch(&cache, grad.view())?;
            adam.step(&mut net, &grads)?;
        }
    }

    let final_loss = mean_loss(&net, ds, positive_weight)?;
    Ok(AvfTraining {
        model: AvfModel::new(net, ds.norm.clone())?,
        initial_loss,
        final_loss,
        positive_weight,
    })
}
