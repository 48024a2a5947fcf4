//! Small fully-connected network stack.
//!
//! An [`Mlp`] is a chain of dense layers `y = act(W x + b)` with weights stored
//! as `out x in` matrices. Forward passes operate on row-major batches
//! (`batch x features`); the returned [`ForwardCache`] holds every layer's
//! post-activation output, which is all backpropagation needs.
//!
//! The same code backs the controller's actor and critic and the failure
//! predictor, together with [`Adam`], [`bce_loss`] and [`mse_loss`].

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to predictions before the cross-entropy is evaluated.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Logistic function, kept strictly inside `(0, 1)` even where `f64` would round
/// to an endpoint.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Layer widths and per-layer activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

#[derive(Deserialize)]
struct RawSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl TryFrom<RawSpec> for MlpSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        MlpSpec::new(raw.layer_sizes, raw.activations)
    }
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(
                "need at least an input and an output layer".into(),
            ));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} activations for {} non-input layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer {i} has zero width")));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }
}

/// One dense layer's parameters; also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Network parameters plus the spec they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Post-activation outputs of every layer; `activations[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.ncols(), l.weights.nrows()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let sizes = spec.layer_sizes.clone();
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Self { spec, layers }
    }

    /// Builds a network from explicit layers, checking shapes against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Dimension {
                context: "layer count",
                expected: spec.num_layers(),
                actual: layers.len(),
            });
        }
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (spec.layer_sizes[i], spec.layer_sizes[i + 1]);
            if l.weights.dim() != (fan_out, fan_in) {
                return Err(Error::Dimension {
                    context: "weight matrix",
                    expected: fan_out * fan_in,
                    actual: l.weights.len(),
                });
            }
            if l.bias.len() != fan_out {
                return Err(Error::Dimension {
                    context: "bias vector",
                    expected: fan_out,
                    actual: l.bias.len(),
                });
            }
            if !l.is_finite() {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.spec.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.spec.input_dim(),
                actual: input.ncols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let prev = activations.last().expect("non-empty");
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            let act = *act;
            z.mapv_inplace(|v| act.apply(v));
            activations.push(z);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let (out, cache) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.spec.input_dim(),
                actual: input.len(),
            });
        }
        let mut current = Array1::from(input.to_vec());
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let mut z = layer.weights.dot(&current);
            z += &layer.bias;
            let act = *act;
            z.mapv_inplace(|v| act.apply(v));
            current = z;
        }
        Ok(current.into_raw_vec_and_offset().0)
    }

    /// Gradients of `sum(output * output_gradient)` over the batch, with respect
    /// to parameters and to the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Dimension {
                context: "forward cache depth",
                expected: self.layers.len() + 1,
                actual: cache.activations.len(),
            });
        }
        if output_gradient.dim() != out.dim() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: out.len(),
                actual: output_gradient.len(),
            });
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_gradient.to_owned();
        for l in (0..self.layers.len()).rev() {
            let act = self.spec.activations[l];
            Zip::from(&mut delta)
                .and(&cache.activations[l + 1])
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            let input = &cache.activations[l];
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            let upstream = delta.dot(&self.layers[l].weights);
            grads.push(Layer {
                weights: dw,
                bias: db,
            });
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Input half of [`Mlp::backward_batch`]: the gradient with respect to the
    /// input batch only, skipping parameter gradients.
    pub fn input_gradient_batch(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Dimension {
                context: "forward cache depth",
                expected: self.layers.len() + 1,
                actual: cache.activations.len(),
            });
        }
        if output_gradient.dim() != cache.output().dim() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: cache.output().len(),
                actual: output_gradient.len(),
            });
        }
        let mut delta = output_gradient.to_owned();
        for l in (0..self.layers.len()).rev() {
            let act = self.spec.activations[l];
            Zip::from(&mut delta)
                .and(&cache.activations[l + 1])
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            delta = delta.dot(&self.layers[l].weights);
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, output_gradient.len()), output_gradient).map_err(|_| {
            Error::Dimension {
                context: "output gradient",
                expected: self.spec.output_dim(),
                actual: output_gradient.len(),
            }
        })?;
        let (g, din) = self.backward_batch(cache, view)?;
        Ok((g, din.into_raw_vec_and_offset().0))
    }

    /// `self <- tau * source + (1 - tau) * self`
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.weights)
                .and(&s.weights)
                .for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
            Zip::from(&mut t.bias)
                .and(&s.bias)
                .for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }

    pub fn to_model_file(&self, norm: Option<&Normalization>) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
            norm: norm.cloned(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<(Self, Option<Normalization>)> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let rows = l.w.len();
                let cols = l.w.first().map_or(0, Vec::len);
                if l.w.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidSpec("ragged weight matrix".into()));
                }
                let flat: Vec<f64> = l.w.into_iter().flatten().collect();
                Ok(Layer {
                    weights: Array2::from_shape_vec((rows, cols), flat).expect("checked shape"),
                    bias: Array1::from(l.b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(file.spec, layers)?;
        if let Some(norm) = &file.norm {
            norm.validate(mlp.spec.input_dim())?;
        }
        Ok((mlp, file.norm))
    }

    pub fn to_json(&self, norm: Option<&Normalization>) -> String {
        serde_json::to_string_pretty(&self.to_model_file(norm)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<Normalization>)> {
        Self::from_model_file(serde_json::from_str(text)?)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model document shared by the actor, critic and failure predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<LayerFile>,
    pub norm: Option<Normalization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Column statistics of `rows`; constant columns get `std = 1`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::EmptyDataset("no rows to normalize".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    context: "normalization row",
                    expected: dim,
                    actual: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::Dimension {
                context: "normalization stats",
                expected: dim,
                actual: self.mean.len().min(self.std.len()),
            });
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidSpec("normalization std must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Layer>,
    second: Vec<Layer>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Mlp) -> Self {
        let zeros = Gradients::zeros_like(params).layers;
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one bias-corrected Adam update. Non-finite gradients are
    /// rejected before any state changes.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::Dimension {
                context: "gradient layers",
                expected: params.layers.len(),
                actual: grads.layers.len(),
            });
        }
        for (p, g) in params.layers.iter().zip(&grads.layers) {
            if p.weights.dim() != g.weights.dim() || p.bias.len() != g.bias.len() {
                return Err(Error::Dimension {
                    context: "gradient shape",
                    expected: p.weights.len() + p.bias.len(),
                    actual: g.weights.len() + g.bias.len(),
                });
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Weighted binary cross-entropy on a clamped prediction.
///
/// Returns the loss and its derivative with respect to the (clamped) prediction.
pub fn bce_loss(prediction: f64, label: f64, weight: f64) -> (f64, f64) {
    let p = prediction.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let loss = -weight * (label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = -weight * (label / p - (1.0 - label) / (1.0 - p));
    (loss, grad)
}

/// Mean squared error and its gradient `2 (p - t) / n`.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() {
        return Err(Error::Dimension {
            context: "mse target",
            expected: prediction.len(),
            actual: target.len(),
        });
    }
    if prediction.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = prediction.len() as f64;
    let loss = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, grad))
}
