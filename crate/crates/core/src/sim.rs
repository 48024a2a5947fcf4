//! Longitudinal car-braking simulator.
//!
//! A point-mass vehicle approaches an obstacle and can only brake:
//! deceleration is `brake * mu(position) * g`. Scenario 1 has constant road
//! friction and a random initial speed. Scenario 2 adds a low-friction patch
//! whose friction, start and length are random as well.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MPH_TO_MS: f64 = 0.44704;

pub fn mph_to_ms(mph: f64) -> f64 {
    mph * MPH_TO_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ScenarioId {
    /// Random initial speed, constant friction.
    One,
    /// Random initial speed plus a random low-friction patch.
    Two,
}

impl ScenarioId {
    /// Dimension of the initial condition vector.
    pub fn x_dim(self) -> usize {
        match self {
            ScenarioId::One => 1,
            ScenarioId::Two => 4,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            ScenarioId::One => 3,
            ScenarioId::Two => 4,
        }
    }
}

impl TryFrom<u8> for ScenarioId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(ScenarioId::One),
            2 => Ok(ScenarioId::Two),
            other => Err(format!("scenario_id must be 1 or 2, got {other}")),
        }
    }
}

impl From<ScenarioId> for u8 {
    fn from(s: ScenarioId) -> u8 {
        match s {
            ScenarioId::One => 1,
            ScenarioId::Two => 2,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConstants {
    pub k_imm: f64,
    pub r_goal: f64,
    pub k_far: f64,
    pub k_near: f64,
    pub r_crash: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            k_imm: 0.1,
            r_goal: 100.0,
            k_far: 2.0,
            k_near: 20.0,
            r_crash: -100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: ScenarioId,
    pub obstacle_m: f64,
    pub base_mu: f64,
    pub g: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub v_norm: f64,
    pub reward: RewardConstants,
}

impl ScenarioConfig {
    pub fn new(scenario_id: ScenarioId) -> Self {
        Self {
            scenario_id,
            obstacle_m: 100.0,
            base_mu: 0.8,
            g: 9.81,
            dt: 0.05,
            max_steps: 4000,
            v_norm: 40.0,
            reward: RewardConstants::default(),
        }
    }

    /// Returns the dotted path of the first invalid field, if any.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.obstacle_m > 0.0 && self.obstacle_m.is_finite()) {
            return Err(("obstacle_m", "must be positive".into()));
        }
        if !(self.base_mu > 0.0 && self.base_mu <= 1.5) {
            return Err(("base_mu", "must lie in (0, 1.5]".into()));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(("g", "must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(("dt", "must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(("max_steps", "must be positive".into()));
        }
        if !(self.v_norm > 0.0 && self.v_norm.is_finite()) {
            return Err(("v_norm", "must be positive".into()));
        }
        Ok(())
    }
}

/// The random scenario parameters an episode starts from.
///
/// Scenario 1: `[v0]`. Scenario 2: `[v0, patch_mu, patch_start, patch_len]`.
/// Speeds in m/s, distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InitialCondition(pub Vec<f64>);

impl InitialCondition {
    pub fn speed(v0: f64) -> Self {
        Self(vec![v0])
    }

    pub fn with_patch(v0: f64, patch_mu: f64, patch_start: f64, patch_len: f64) -> Self {
        Self(vec![v0, patch_mu, patch_start, patch_len])
    }

    pub fn v0(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn patch(&self) -> Option<FrictionPatch> {
        (self.0.len() == 4).then(|| FrictionPatch {
            mu: self.0[1],
            start: self.0[2],
            len: self.0[3],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionPatch {
    pub mu: f64,
    pub start: f64,
    pub len: f64,
}

impl FrictionPatch {
    /// Half-open membership `[start, start + len)`.
    pub fn contains(&self, position: f64) -> bool {
        position >= self.start && position < self.start + self.len
    }
}

/// Per-dimension bounds; a point is inside when `lo < x <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Support {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Index of the first dimension outside the support.
    pub fn violation(&self, x: &[f64]) -> Option<usize> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .position(|(v, (lo, hi))| !(*v > *lo && *v <= *hi))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.violation(x).is_none()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            if !(*v > *lo) {
                *v = lo.next_up();
            } else if *v > *hi {
                *v = *hi;
            }
        }
    }
}

/// The distribution initial conditions are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditionDistribution {
    pub scenario_id: ScenarioId,
    pub speed_mean_mph: f64,
    pub speed_sd_mph: f64,
    pub speed_cap_mph: f64,
    /// `(lo, hi]` ranges of the patch parameters (scenario 2 only).
    pub patch_mu: (f64, f64),
    pub patch_start: (f64, f64),
    pub patch_len: (f64, f64),
}

impl InitialConditionDistribution {
    pub fn for_scenario(scenario_id: ScenarioId) -> Self {
        let (mean, sd) = match scenario_id {
            ScenarioId::One => (38.0, 11.0),
            ScenarioId::Two => (35.0, 9.0),
        };
        Self {
            scenario_id,
            speed_mean_mph: mean,
            speed_sd_mph: sd,
            speed_cap_mph: 80.0,
            patch_mu: (0.05, 0.5),
            patch_start: (10.0, 80.0),
            patch_len: (5.0, 30.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.scenario_id.x_dim()
    }

    pub fn support(&self) -> Support {
        let cap = mph_to_ms(self.speed_cap_mph);
        match self.scenario_id {
            ScenarioId::One => Support {
                lo: vec![0.0],
                hi: vec![cap],
            },
            ScenarioId::Two => Support {
                lo: vec![0.0, self.patch_mu.0, self.patch_start.0, self.patch_len.0],
                hi: vec![cap, self.patch_mu.1, self.patch_start.1, self.patch_len.1],
            },
        }
    }

    /// Truncated-normal speed by rejection, in m/s.
    pub fn sample_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.speed_mean_mph, self.speed_sd_mph).expect("positive sd");
        loop {
            let mph = normal.sample(rng);
            if mph > 0.0 && mph <= self.speed_cap_mph {
                return mph_to_ms(mph);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InitialCondition {
        let v0 = self.sample_speed(rng);
        match self.scenario_id {
            ScenarioId::One => InitialCondition::speed(v0),
            ScenarioId::Two => {
                let mu = uniform_half_open(self.patch_mu, rng);
                let start = uniform_half_open(self.patch_start, rng);
                let len = uniform_half_open(self.patch_len, rng);
                InitialCondition::with_patch(v0, mu, start, len)
            }
        }
    }
}

/// Uniform on `(lo, hi]`.
fn uniform_half_open<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    hi - u * (hi - lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub position: f64,
    pub velocity: f64,
    pub step: usize,
    patch: Option<FrictionPatch>,
}

impl SimState {
    pub fn patch(&self) -> Option<FrictionPatch> {
        self.patch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Stopped,
    Crashed,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    /// Failure indicator: crashes and timeouts count as failures.
    pub fn is_failure(self) -> bool {
        matches!(self, Outcome::Crashed | Outcome::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: SimState,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub outcome: Outcome,
}

pub fn friction_at(state: &SimState, config: &ScenarioConfig) -> f64 {
    match state.patch {
        Some(p) if p.contains(state.position) => p.mu,
        _ => config.base_mu,
    }
}

pub fn observe(state: &SimState, config: &ScenarioConfig) -> Vec<f64> {
    let pos = state.position / config.obstacle_m;
    let vel = state.velocity / config.v_norm;
    let mu = friction_at(state, config);
    match config.scenario_id {
        ScenarioId::One => vec![pos, mu, vel],
        ScenarioId::Two => vec![pos, vel, config.base_mu, mu],
    }
}

fn check_initial_condition(config: &ScenarioConfig, x: &InitialCondition) -> Result<()> {
    let dim = config.scenario_id.x_dim();
    if x.dim() != dim {
        return Err(Error::Dimension {
            context: "initial condition",
            expected: dim,
            actual: x.dim(),
        });
    }
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInitialCondition("non-finite component".into()));
    }
    if !(x.v0() > 0.0) {
        return Err(Error::InvalidInitialCondition(format!(
            "initial speed must be positive, got {}",
            x.v0()
        )));
    }
    if let Some(p) = x.patch() {
        if !(p.mu > 0.0) || !(p.len >= 0.0) || !(p.start >= 0.0) {
            return Err(Error::InvalidInitialCondition(format!(
                "invalid friction patch {p:?}"
            )));
        }
    }
    Ok(())
}

pub fn reset(config: &ScenarioConfig, x: &InitialCondition) -> Result<(SimState, Vec<f64>)> {
    check_initial_condition(config, x)?;
    let state = SimState {
        position: 0.0,
        velocity: x.v0(),
        step: 0,
        patch: x.patch(),
    };
    let obs = observe(&state, config);
    Ok((state, obs))
}

/// Terminal reward for a finished episode; `stop_gap_m` is ignored unless stopped.
pub fn terminal_reward(outcome: Outcome, stop_gap_m: f64, reward: &RewardConstants) -> Result<f64> {
    match outcome {
        Outcome::Running => Err(Error::NotTerminal),
        Outcome::Crashed | Outcome::Timeout => Ok(reward.r_crash),
        Outcome::Stopped => Ok(if stop_gap_m > 10.0 {
            reward.r_goal - reward.k_far * (stop_gap_m - 10.0)
        } else if stop_gap_m < 5.0 {
            reward.r_goal - reward.k_near * (5.0 - stop_gap_m)
        } else {
            reward.r_goal
        }),
    }
}

/// Advances one control interval. `brake` is clamped to `[0, 1]`.
pub fn step(state: &SimState, brake: f64, config: &ScenarioConfig) -> StepResult {
    let brake = if brake.is_nan() { 0.0 } else { brake.clamp(0.0, 1.0) };
    let mu = friction_at(state, config);
    let decel = brake * mu * config.g;
    let v = state.velocity;
    let v_next = (v - decel * config.dt).max(0.0);
    let x_next = state.position + 0.5 * (v + v_next) * config.dt;
    let next = SimState {
        position: x_next,
        velocity: v_next,
        step: state.step + 1,
        patch: state.patch,
    };

    let outcome = if x_next >= config.obstacle_m {
        Outcome::Crashed
    } else if v_next == 0.0 {
        Outcome::Stopped
    } else if next.step >= config.max_steps {
        Outcome::Timeout
    } else {
        Outcome::Running
    };

    let mut reward = config.reward.k_imm * (v - v_next);
    if outcome.is_terminal() {
        let gap = config.obstacle_m - x_next;
        reward += terminal_reward(outcome, gap, &config.reward).expect("terminal outcome");
    }
    let observation = observe(&next, config);
    StepResult {
        state: next,
        observation,
        reward,
        outcome,
    }
}

/// One row of the training / evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub x: InitialCondition,
    pub theta: usize,
    pub c: u8,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub stop_gap_m: Option<f64>,
}

impl EpisodeRecord {
    pub fn failed(&self) -> bool {
        self.c == 1
    }
}

/// Full result of an episode, including the terminal outcome and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub record: EpisodeRecord,
    pub outcome: Outcome,
    pub steps: usize,
}

/// Runs `policy` from `x` until the episode terminates.
///
/// `noise`, when given, is added to the policy's brake command every step
/// before clamping.
pub fn run_episode<P, N>(
    config: &ScenarioConfig,
    x: &InitialCondition,
    mut policy: P,
    theta: usize,
    mut noise: Option<N>,
) -> Result<Episode>
where
    P: FnMut(&[f64]) -> f64,
    N: FnMut() -> f64,
{
    let (mut state, mut obs) = reset(config, x)?;
    let mut total = 0.0;
    loop {
        let mut brake = policy(&obs);
        if let Some(n) = noise.as_mut() {
            brake += n();
        }
        let r = step(&state, brake, config);
        total += r.reward;
        state = r.state;
        obs = r.observation;
        if r.outcome.is_terminal() {
            let failed = r.outcome.is_failure();
            return Ok(Episode {
                record: EpisodeRecord {
                    episode: theta,
                    x: x.clone(),
                    theta,
                    c: u8::from(failed),
                    episode_return: total,
                    stop_gap_m: (!failed).then(|| config.obstacle_m - state.position),
                },
                outcome: r.outcome,
                steps: state.step,
            });
        }
    }
}

/// Noise-free episode; convenience wrapper over [`run_episode`].
pub fn run_deterministic<P>(config: &ScenarioConfig, x: &InitialCondition, policy: P) -> Result<Episode>
where
    P: FnMut(&[f64]) -> f64,
{
    run_episode(config, x, policy, 0, None::<fn() -> f64>)
}
