//! Deep Deterministic Policy Gradient training of the braking controller.
//!
//! Exploration adds Ornstein-Uhlenbeck noise to the actor's brake command.
//! Every environment step after warmup performs one critic regression step
//! towards `r + gamma * Q'(s', mu'(s'))` and one actor step ascending the
//! critic, followed by soft target updates. Every episode is logged as an
//! [`EpisodeRecord`] whose `theta` is the episode index.

use log::{debug, info};
use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_loss, Activation, Adam, AdamConfig, Mlp, MlpSpec};
use crate::sim::{
    self, EpisodeRecord, InitialCondition, InitialConditionDistribution, ScenarioConfig, ScenarioId,
};

/// How one step of length `dt` advances the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuScheme {
    /// Samples the exact transition of the continuous process:
    /// `x <- mu + (x - mu) e^(-theta dt) + sigma sqrt((1 - e^(-2 theta dt)) / (2 theta)) N(0, 1)`.
    /// Stationary variance is `sigma^2 / (2 theta)` for every `dt`.
    Exact,
    /// `x <- x + theta (mu - x) dt + sigma N(0, 1)`.
    Euler,
}

/// Mean-reverting exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct OuProcess {
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    pub scheme: OuScheme,
    value: f64,
}

impl OuProcess {
    pub fn new(mu: f64, theta: f64, sigma: f64, dt: f64) -> Self {
        Self {
            mu,
            theta,
            sigma,
            dt,
            scheme: OuScheme::Exact,
            value: mu,
        }
    }

    pub fn with_scheme(mut self, scheme: OuScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// `mu = 0.2, theta = 1, sigma = 0.1, dt = 1`.
    pub fn exploration_default() -> Self {
        Self::new(0.2, 1.0, 0.1, 1.0)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn set_value(&mut self, value: f64) {
        self.value = value;
    }

    pub fn reset(&mut self) {
        self.value = self.mu;
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.value = match self.scheme {
            OuScheme::Exact => {
                let decay = (-self.theta * self.dt).exp();
                let sd = if self.theta > 0.0 {
                    self.sigma * ((1.0 - decay * decay) / (2.0 * self.theta)).sqrt()
                } else {
                    self.sigma * self.dt.sqrt()
                };
                self.mu + (self.value - self.mu) * decay + sd * z
            }
            OuScheme::Euler => self.value + self.theta * (self.mu - self.value) * self.dt + self.sigma * z,
        };
        self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgHyper {
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub warmup_steps: usize,
    /// Per-episode multiplicative decay of the exploration noise.
    pub noise_decay: f64,
    /// Update rule of the exploration noise.
    pub ou_scheme: OuScheme,
    /// Width of both hidden layers of actor and critic.
    pub hidden_units: usize,
}

impl DdpgHyper {
    pub fn for_scenario(scenario: ScenarioId) -> Self {
        Self {
            episodes: match scenario {
                ScenarioId::One => 5000,
                ScenarioId::Two => 15000,
            },
            gamma: 0.99,
            tau: 0.005,
            buffer_capacity: 100_000,
            batch_size: 64,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            warmup_steps: 1000,
            noise_decay: 1.0,
            ou_scheme: OuScheme::Exact,
            hidden_units: 32,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.episodes == 0 {
            return Err(("episodes", "must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(("gamma", "must lie in (0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(("tau", "must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(("batch_size", "must lie in [1, buffer_capacity]".into()));
        }
        if !(self.actor_lr > 0.0) {
            return Err(("actor_lr", "must be positive".into()));
        }
        if !(self.critic_lr > 0.0) {
            return Err(("critic_lr", "must be positive".into()));
        }
        if self.hidden_units == 0 {
            return Err(("hidden_units", "must be positive".into()));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(("noise_decay", "must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn actor_spec(obs_dim: usize, hidden: usize) -> MlpSpec {
    MlpSpec::new(
        vec![obs_dim, hidden, hidden, 1],
        vec![Activation::Relu, Activation::Relu, Activation::Sigmoid],
    )
    .expect("static spec")
}

/// Critic takes the observation with the action appended as its last input.
pub fn critic_spec(obs_dim: usize, hidden: usize) -> MlpSpec {
    MlpSpec::new(
        vec![obs_dim + 1, hidden, hidden, 1],
        vec![Activation::Relu, Activation::Relu, Activation::Linear],
    )
    .expect("static spec")
}

/// Deterministic braking policy backed by a sigmoid-output actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    actor: Mlp,
}

impl Policy {
    pub fn new(actor: Mlp) -> Result<Self> {
        let spec = actor.spec();
        if spec.output_dim() != 1 {
            return Err(Error::Dimension {
                context: "actor output",
                expected: 1,
                actual: spec.output_dim(),
            });
        }
        if spec.activations().last() != Some(&Activation::Sigmoid) {
            return Err(Error::InvalidSpec("actor output must be sigmoid".into()));
        }
        Ok(Self { actor })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec().input_dim()
    }

    /// Brake command in `[0, 1]`: actor output plus optional noise, clamped.
    pub fn act(&self, observation: &[f64], noise: Option<f64>) -> Result<f64> {
        let raw = self.actor.predict(observation)?[0];
        Ok((raw + noise.unwrap_or(0.0)).clamp(0.0, 1.0))
    }

    /// Closure form suitable for [`sim::run_episode`].
    pub fn as_controller(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        move |obs| self.act(obs, None).expect("observation dimension checked at load")
    }

    pub fn to_json(&self) -> String {
        self.actor.to_json(None)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (actor, _) = Mlp::from_json(text)?;
        Self::new(actor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts, evicting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Number of completed episodes.
    pub episode: usize,
    pub actor: Mlp,
    pub critic: Mlp,
}

#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub policy: Policy,
    pub critic: Mlp,
    pub log: Vec<EpisodeRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainingOutput {
    pub fn failure_count(&self, range: std::ops::Range<usize>) -> usize {
        self.log[range].iter().filter(|r| r.failed()).count()
    }
}

struct Learner {
    actor: Mlp,
    critic: Mlp,
    target_actor: Mlp,
    target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    obs_dim: usize,
    gamma: f64,
    tau: f64,
}

impl Learner {
    fn new<R: Rng + ?Sized>(obs_dim: usize, hyper: &DdpgHyper, rng: &mut R) -> Self {
        let actor = Mlp::init(actor_spec(obs_dim, hyper.hidden_units), rng);
        let critic = Mlp::init(critic_spec(obs_dim, hyper.hidden_units), rng);
        Self {
            actor_opt: Adam::new(AdamConfig::with_lr(hyper.actor_lr), &actor),
            critic_opt: Adam::new(AdamConfig::with_lr(hyper.critic_lr), &critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            obs_dim,
            gamma: hyper.gamma,
            tau: hyper.tau,
        }
    }

    /// One critic and one actor step on `batch`. Returns the critic loss.
    fn update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let n = batch.len();
        let d = self.obs_dim;
        let mut states = Array2::zeros((n, d));
        let mut state_actions = Array2::zeros((n, d + 1));
        let mut next_states = Array2::zeros((n, d));
        for (i, t) in batch.iter().enumerate() {
            for j in 0..d {
                states[[i, j]] = t.observation[j];
                state_actions[[i, j]] = t.observation[j];
                next_states[[i, j]] = t.next_observation[j];
            }
            state_actions[[i, d]] = t.action;
        }

        let (next_actions, _) = self.target_actor.forward_batch(next_states.view())?;
        let mut next_sa = Array2::zeros((n, d + 1));
        next_sa.slice_mut(s![.., ..d]).assign(&next_states);
        next_sa.slice_mut(s![.., d..]).assign(&next_actions);
        let (next_q, _) = self.target_critic.forward_batch(next_sa.view())?;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let bootstrap = if t.done { 0.0 } else { self.gamma * next_q[[i, 0]] };
                t.reward + bootstrap
            })
            .collect();

        let (q, cache) = self.critic.forward_batch(state_actions.view())?;
        let (loss, grad) = mse_loss(q.as_slice().expect("contiguous"), &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        let grad = Array2::from_shape_vec((n, 1), grad).expect("n x 1");
        let (critic_grads, _) = self.critic.backward_batch(&cache, grad.view())?;
        self.critic_opt.step(&mut self.critic, &critic_grads)?;

        let (actions, actor_cache) = self.actor.forward_batch(states.view())?;
        state_actions.slice_mut(s![.., d..]).assign(&actions);
        let (_, critic_cache) = self.critic.forward_batch(state_actions.view())?;
        let ascend = Array2::from_elem((n, 1), -1.0 / n as f64);
        let dq_dinput = self.critic.input_gradient_batch(&critic_cache, ascend.view())?;
        let dq_daction = dq_dinput.slice(s![.., d..]).to_owned();
        let (actor_grads, _) = self.actor.backward_batch(&actor_cache, dq_daction.view())?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        self.target_actor.soft_update_from(&self.actor, self.tau);
        self.target_critic.soft_update_from(&self.critic, self.tau);
        Ok(loss)
    }
}

/// Trains a braking policy. The returned log has exactly `hyper.episodes`
/// records in episode order.
pub fn train<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    dist: &InitialConditionDistribution,
    hyper: &DdpgHyper,
    rng: &mut R,
) -> Result<TrainingOutput> {
    let obs_dim = config.scenario_id.obs_dim();
    let mut learner = Learner::new(obs_dim, hyper, rng);
    let mut buffer = ReplayBuffer::new(hyper.buffer_capacity);
    let mut ou = OuProcess::exploration_default().with_scheme(hyper.ou_scheme);
    let mut log = Vec::with_capacity(hyper.episodes);
    let mut checkpoints = Vec::new();
    let checkpoint_every = (hyper.episodes / 10).max(1);
    let mut total_steps = 0usize;
    let mut noise_scale = 1.0;

    for episode in 0..hyper.episodes {
        let x = dist.sample(rng);
        let record = run_training_episode(
            config,
            &x,
            episode,
            noise_scale,
            &mut learner,
            &mut buffer,
            &mut ou,
            hyper,
            &mut total_steps,
            rng,
        )?;
        log.push(record);
        noise_scale *= hyper.noise_decay;

        if (episode + 1) % checkpoint_every == 0 {
            let window = &log[log.len().saturating_sub(checkpoint_every)..];
            let failures = window.iter().filter(|r| r.failed()).count();
            info!(
                "episode {}/{}: {} failures in last {} episodes",
                episode + 1,
                hyper.episodes,
                failures,
                window.len()
            );
            checkpoints.push(Checkpoint {
                episode: episode + 1,
                actor: learner.actor.clone(),
                critic: learner.critic.clone(),
            });
        }
    }

    Ok(TrainingOutput {
        policy: Policy::new(learner.actor)?,
        critic: learner.critic,
        log,
        checkpoints,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_training_episode<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    x: &InitialCondition,
    episode: usize,
    noise_scale: f64,
    learner: &mut Learner,
    buffer: &mut ReplayBuffer,
    ou: &mut OuProcess,
    hyper: &DdpgHyper,
    total_steps: &mut usize,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let (mut state, mut obs) = sim::reset(config, x)?;
    ou.reset();
    let mut episode_return = 0.0;
    loop {
        let raw = learner.actor.predict(&obs)?[0];
        let action = (raw + noise_scale * ou.next(rng)).clamp(0.0, 1.0);
        let r = sim::step(&state, action, config);
        episode_return += r.reward;
        let done = r.outcome.is_terminal();
        buffer.push(Transition {
            observation: std::mem::take(&mut obs),
            action,
            reward: r.reward,
            next_observation: r.observation.clone(),
            done,
        });
        *total_steps += 1;

        if *total_steps > hyper.warmup_steps && buffer.len() >= hyper.batch_size {
            let batch = buffer.sample(hyper.batch_size, rng);
            learner.update(&batch).map_err(|e| Error::Diverged {
                episode,
                step: r.state.step,
                detail: format!(
                    "{e}; total_steps={}, buffer={}, actor_finite={}, critic_finite={}, last_reward={}",
                    total_steps,
                    buffer.len(),
                    learner.actor.is_finite(),
                    learner.critic.is_finite(),
                    r.reward
                ),
            })?;
        }

        state = r.state;
        obs = r.observation;
        if done {
            let failed = r.outcome.is_failure();
            if failed {
                debug!("episode {episode}: failure at x={:?}", x.as_slice());
            }
            return Ok(EpisodeRecord {
                episode,
                x: x.clone(),
                theta: episode,
                c: u8::from(failed),
                episode_return,
                stop_gap_m: (!failed).then(|| config.obstacle_m - state.position),
            });
        }
    }
}
