//! Generative failure model: a full-covariance Gaussian mixture over failing
//! initial conditions.
//!
//! Fitting is multi-restart EM; the number of components can be chosen by
//! BIC. Samples are rejection-filtered to the initial-condition support so
//! every proposal is a runnable scenario. New failures are folded in by a
//! warm-started EM refit on the augmented failure set.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EpisodeRecord, InitialCondition, Support};

pub const GMM_FORMAT_VERSION: u32 = 1;

/// Row-major symmetric `d x d` helpers.
mod linalg {
    /// Lower Cholesky factor, or `None` when the matrix is not positive definite.
    pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = a[i * d + j];
                for k in 0..j {
                    sum -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * d + i] = sum.sqrt();
                } else {
                    l[i * d + j] = sum / l[j * d + j];
                }
            }
        }
        Some(l)
    }

    pub fn log_det_from_cholesky(l: &[f64], d: usize) -> f64 {
        (0..d).map(|i| l[i * d + i].ln()).sum::<f64>() * 2.0
    }

    /// `|| L^-1 (x - mu) ||^2`
    pub fn mahalanobis_sq(l: &[f64], d: usize, x: &[f64], mu: &[f64]) -> f64 {
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - mu[i];
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
            acc += y[i] * y[i];
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major `d x d`.
    cov: Vec<f64>,
    chol: Vec<f64>,
    /// `-0.5 (d ln 2 pi + ln det cov)`
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = linalg::cholesky(&cov, d)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_norm =
            -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + linalg::log_det_from_cholesky(&chol, d));
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        self.log_norm - 0.5 * linalg::mahalanobis_sq(&self.chol, d, x, &self.mean)
    }
}

/// Mixture weights, means and full covariances plus the sampling support.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<Component>,
    support: Support,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
        support: Support,
    ) -> Result<Self> {
        let n = weights.len();
        if n == 0 || means.len() != n || covariances.len() != n {
            return Err(Error::Dimension {
                context: "mixture components",
                expected: n,
                actual: means.len().min(covariances.len()),
            });
        }
        let d = support.dim();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Numerical("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("mixture weights sum to {total}")));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covariances)
            .map(|((w, mean), cov)| {
                if mean.len() != d || cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension {
                        context: "component shape",
                        expected: d,
                        actual: mean.len(),
                    });
                }
                let flat: Vec<f64> = cov.into_iter().flatten().collect();
                for i in 0..d {
                    for j in 0..i {
                        if (flat[i * d + j] - flat[j * d + i]).abs() > 1e-12 * (1.0 + flat[i * d + j].abs()) {
                            return Err(Error::Numerical("covariance is not symmetric".into()));
                        }
                    }
                }
                Component::new(w / total, mean, flat)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            support,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.dim();
        self.components
            .iter()
            .map(|c| c.cov.chunks(d).map(<[f64]>::to_vec).collect())
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context: "mixture input",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn weighted_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.components.iter().map(|c| {
            if c.weight > 0.0 {
                c.weight.ln() + c.log_density(x)
            } else {
                f64::NEG_INFINITY
            }
        }));
    }

    /// Log mixture density, via log-sum-exp.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.weighted_log_densities(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Posterior component probabilities for `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.weighted_log_densities(x, &mut buf);
        let lse = log_sum_exp(&buf);
        Ok(buf.into_iter().map(|v| (v - lse).exp()).collect())
    }

    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> Result<f64> {
        data.iter().map(|x| self.logpdf(x)).sum()
    }

    /// Draws from the mixture, rejecting points outside the support. After
    /// `MAX_SAMPLE_TRIES` rejections the last draw is clamped into it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InitialCondition {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for _ in 0..MAX_SAMPLE_TRIES {
            self.draw_unbounded(rng, &mut x);
            if self.support.contains(&x) {
                return InitialCondition(x);
            }
        }
        self.support.clamp(&mut x);
        InitialCondition(x)
    }

    fn draw_unbounded<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        let d = self.dim();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        // skip trailing zero-weight components picked by rounding
        while self.components[chosen].weight == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        let c = &self.components[chosen];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            x[i] = c.mean[i] + (0..=i).map(|k| c.chol[i * d + k] * z[k]).sum::<f64>();
        }
    }

    pub fn to_file(&self) -> GmmFile {
        GmmFile {
            format_version: GMM_FORMAT_VERSION,
            n: self.n_components(),
            dim: self.dim(),
            weights: self.weights(),
            means: self.means(),
            covariances: self.covariances(),
            support: self.support.clone(),
        }
    }

    pub fn from_file(file: GmmFile) -> Result<Self> {
        if file.format_version != GMM_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        if file.n != file.weights.len() || file.dim != file.support.dim() {
            return Err(Error::Dimension {
                context: "gmm header",
                expected: file.n,
                actual: file.weights.len(),
            });
        }
        Self::new(file.weights, file.means, file.covariances, file.support)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("gmm serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }
}

pub const MAX_SAMPLE_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmFile {
    pub format_version: u32,
    pub n: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub support: Support,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureSource {
    TrainingLog,
    SearchFound,
    Imported,
}

/// Failing initial conditions with provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FailureSet {
    points: Vec<InitialCondition>,
    sources: Vec<FailureSource>,
}

impl FailureSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Failing records of a training log.
    pub fn from_log(records: &[EpisodeRecord]) -> Self {
        let mut set = Self::new();
        for r in records.iter().filter(|r| r.failed()) {
            set.push(r.x.clone(), FailureSource::TrainingLog);
        }
        set
    }

    pub fn push(&mut self, x: InitialCondition, source: FailureSource) {
        self.points.push(x);
        self.sources.push(source);
    }

    pub fn extend(&mut self, other: &FailureSet) {
        self.points.extend(other.points.iter().cloned());
        self.sources.extend(other.sources.iter().copied());
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[InitialCondition] {
        &self.points
    }

    pub fn sources(&self) -> &[FailureSource] {
        &self.sources
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.0.clone()).collect()
    }
}

#[derive(Deserialize)]
struct ImportLine {
    x: Vec<f64>,
}

/// Reads failing initial conditions from a JSON-lines file of `{"x": [...]}`
/// objects. Blank lines are skipped; line numbers in errors are 1-based.
pub fn import_failures(path: &Path, support: &Support) -> Result<FailureSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = FailureSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ImportLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if parsed.x.len() != support.dim() {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "dimension mismatch: expected {} components, got {}",
                    support.dim(),
                    parsed.x.len()
                ),
            });
        }
        if let Some(dim) = support.violation(&parsed.x) {
            return Err(Error::SupportViolation {
                line: line_no,
                dim,
                value: parsed.x[dim],
                lo: support.lo[dim],
                hi: support.hi[dim],
            });
        }
        set.push(InitialCondition(parsed.x), FailureSource::Imported);
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub n_inits: usize,
    pub max_iter: usize,
    /// Convergence threshold on the change of total log-likelihood.
    pub tol: f64,
    /// Ridge added to a near-singular covariance after the M-step, and to
    /// the data covariance used to initialize restarts.
    pub reg: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            n_inits: 100,
            max_iter: 500,
            tol: 1e-6,
            reg: 1e-6,
        }
    }
}

/// Components whose weight falls below this are re-seeded on a data point.
pub const COLLAPSE_WEIGHT: f64 = 1e-6;

/// Result of a single EM run.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub model: GmmModel,
    pub log_likelihood: f64,
    /// Log-likelihood before the first M-step and after every iteration.
    pub history: Vec<f64>,
    /// Iterations (indices into `history`) whose M-step re-seeded a collapsed component.
    pub reseeded: Vec<usize>,
}

impl EmRun {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

fn mean_and_cov(data: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for x in data {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    (mean, cov)
}

fn add_ridge(cov: &mut [f64], d: usize, reg: f64) {
    for i in 0..d {
        cov[i * d + i] += reg;
    }
}

/// Adds the ridge only when the smallest eigenvalue of `cov` is at most `reg`
/// (exactly when `cov - reg I` has no Cholesky factor). Well-conditioned
/// M-steps stay exact, which keeps EM monotone.
fn regularize(cov: &mut [f64], d: usize, reg: f64) {
    let mut shifted = cov.to_vec();
    add_ridge(&mut shifted, d, -reg);
    if linalg::cholesky(&shifted, d).is_none() {
        add_ridge(cov, d, reg);
    }
}

/// E-step: fills `resp` (row-major `N x K`) and returns the total log-likelihood.
fn e_step(model: &GmmModel, data: &[Vec<f64>], resp: &mut Vec<f64>) -> f64 {
    let k = model.n_components();
    resp.clear();
    resp.reserve(data.len() * k);
    let mut buf = Vec::with_capacity(k);
    let mut total = 0.0;
    for x in data {
        model.weighted_log_densities(x, &mut buf);
        let lse = log_sum_exp(&buf);
        total += lse;
        resp.extend(buf.iter().map(|v| (v - lse).exp()));
    }
    total
}

/// M-step: weighted maximum likelihood plus ridge. Returns the new model and
/// whether a collapsed component had to be re-seeded.
fn m_step<R: Rng + ?Sized>(
    model: &GmmModel,
    data: &[Vec<f64>],
    resp: &[f64],
    opts: &EmOptions,
    rng: &mut R,
) -> Result<(GmmModel, bool)> {
    let k = model.n_components();
    let d = model.dim();
    let n = data.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut reseeded = false;
    for c in 0..k {
        let nk: f64 = (0..data.len()).map(|i| resp[i * k + c]).sum();
        let weight = nk / n;
        if weight < COLLAPSE_WEIGHT || nk <= 0.0 {
            reseeded = true;
            let (_, mut cov) = mean_and_cov(data, d);
            add_ridge(&mut cov, d, opts.reg);
            weights.push(1.0 / k as f64);
            means.push(data[rng.random_range(0..data.len())].clone());
            covs.push(cov);
            continue;
        }
        let mut mean = vec![0.0; d];
        for (i, x) in data.iter().enumerate() {
            let r = resp[i * k + c];
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![0.0; d * d];
        for (i, x) in data.iter().enumerate() {
            let r = resp[i * k + c];
            for a in 0..d {
                let da = x[a] - mean[a];
                for b in 0..=a {
                    cov[a * d + b] += r * da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / nk;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        regularize(&mut cov, d, opts.reg);
        weights.push(weight);
        means.push(mean);
        covs.push(cov);
    }
    let total: f64 = weights.iter().sum();
    let components = weights
        .into_iter()
        .zip(means)
        .zip(covs)
        .map(|((w, m), c)| Component::new(w / total, m, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GmmModel {
            components,
            support: model.support.clone(),
        },
        reseeded,
    ))
}

/// Runs EM from `init` until the log-likelihood change drops below `opts.tol`
/// or `opts.max_iter` iterations.
pub fn em_from<R: Rng + ?Sized>(
    init: GmmModel,
    data: &[Vec<f64>],
    opts: &EmOptions,
    rng: &mut R,
) -> Result<EmRun> {
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(bad) = data.iter().find(|x| x.len() != init.dim()) {
        return Err(Error::Dimension {
            context: "em data",
            expected: init.dim(),
            actual: bad.len(),
        });
    }
    let mut resp = Vec::new();
    let mut model = init;
    let mut ll = e_step(&model, data, &mut resp);
    let mut history = vec![ll];
    let mut reseeded_at = Vec::new();
    for iter in 1..=opts.max_iter {
        let (next, reseeded) = m_step(&model, data, &resp, opts, rng)?;
        model = next;
        let next_ll = e_step(&model, data, &mut resp);
        history.push(next_ll);
        if reseeded {
            reseeded_at.push(iter);
        }
        let converged = !reseeded && (next_ll - ll).abs() < opts.tol;
        ll = next_ll;
        if converged {
            break;
        }
    }
    if !ll.is_finite() {
        return Err(Error::Numerical("EM produced a non-finite log-likelihood".into()));
    }
    Ok(EmRun {
        model,
        log_likelihood: ll,
        history,
        reseeded: reseeded_at,
    })
}

/// Multi-restart EM. Each restart seeds means on `n` distinct data points,
/// shares the data covariance and uses equal weights; the run with the highest
/// final log-likelihood wins (earliest on ties).
pub fn em_fit<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    n: usize,
    support: &Support,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<EmRun> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if data.len() < n {
        return Err(Error::InsufficientData {
            needed: n,
            got: data.len(),
        });
    }
    let d = support.dim();
    let (_, mut data_cov) = mean_and_cov(data, d);
    add_ridge(&mut data_cov, d, opts.reg);
    let cov_rows: Vec<Vec<f64>> = data_cov.chunks(d).map(<[f64]>::to_vec).collect();

    let mut best: Option<EmRun> = None;
    for _ in 0..opts.n_inits.max(1) {
        let mut init_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let picks = index::sample(&mut init_rng, data.len(), n);
        let means = picks.iter().map(|i| data[i].clone()).collect();
        let init = GmmModel::new(
            vec![1.0 / n as f64; n],
            means,
            vec![cov_rows.clone(); n],
            support.clone(),
        )?;
        let run = em_from(init, data, opts, &mut init_rng)?;
        if best
            .as_ref()
            .is_none_or(|b| run.log_likelihood > b.log_likelihood)
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Free parameters of an `n`-component full-covariance mixture in `d` dimensions.
pub fn parameter_count(n: usize, d: usize) -> usize {
    (n - 1) + n * d + n * d * (d + 1) / 2
}

pub fn bic(log_likelihood: f64, n: usize, d: usize, n_points: usize) -> f64 {
    parameter_count(n, d) as f64 * (n_points as f64).ln() - 2.0 * log_likelihood
}

#[derive(Debug, Clone)]
pub struct ComponentSelection {
    pub n: usize,
    /// `(n, bic)` for every candidate.
    pub scores: Vec<(usize, f64)>,
    pub best: EmRun,
}

/// Picks the component count with the lowest BIC (smaller `n` on ties).
pub fn select_components<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    candidates: std::ops::RangeInclusive<usize>,
    support: &Support,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<ComponentSelection> {
    let max = *candidates.end();
    if data.len() <= max {
        return Err(Error::InsufficientData {
            needed: max + 1,
            got: data.len(),
        });
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64, EmRun)> = None;
    for n in candidates {
        if n == 0 {
            continue;
        }
        let run = em_fit(data, n, support, opts, rng)?;
        let score = bic(run.log_likelihood, n, support.dim(), data.len());
        scores.push((n, score));
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((n, score, run));
        }
    }
    let (n, _, best) = best.ok_or_else(|| Error::InsufficientData { needed: 1, got: 0 })?;
    Ok(ComponentSelection { n, scores, best })
}

/// Folds `new_failures` into `full_data` and refits by EM warm-started from
/// `model`. The component count is unchanged; an empty update is the identity.
pub fn update<R: Rng + ?Sized>(
    model: &GmmModel,
    new_failures: &FailureSet,
    full_data: &mut FailureSet,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<GmmModel> {
    if new_failures.is_empty() {
        return Ok(model.clone());
    }
    full_data.extend(new_failures);
    let run = em_from(model.clone(), &full_data.rows(), opts, rng)?;
    Ok(run.model)
}
