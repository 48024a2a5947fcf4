//! Run configuration.
//!
//! A config file only needs `scenario_id` and `seed`; every other field is
//! filled from scenario defaults. Unknown keys are rejected with their dotted
//! path, and the resolved config serializes to a file that loads back to the
//! same value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ddpg::DdpgHyper;
use crate::error::{Error, Result};
use crate::gmm::EmOptions;
use crate::search::{AlternationOrder, Strategy};
use crate::sim::{ScenarioConfig, ScenarioId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvfConfig {
    pub window_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub n_candidates: usize,
}

/// Number of mixture components: fixed, or chosen by BIC over `candidate_range`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentCount {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub n: ComponentCount,
    pub n_inits: usize,
    /// Inclusive `[lo, hi]` component counts tried when `n` is `"auto"`.
    pub candidate_range: [usize; 2],
    /// Also refit the hybrid mixture on failures it proposed itself.
    pub update_on_gmm_failures: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub budget: usize,
    #[serde(rename = "K_failures")]
    pub k_failures: usize,
    pub strategies: Vec<Strategy>,
    pub alternation_order: AlternationOrder,
    pub hybrid_reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario_id: ScenarioId,
    pub seed: u64,
    pub sim: ScenarioConfig,
    pub ddpg: DdpgHyper,
    pub avf: AvfConfig,
    pub gmm: GmmConfig,
    pub search: SearchConfig,
}

impl RunConfig {
    /// Fully defaulted config for a scenario.
    pub fn defaults(scenario_id: ScenarioId, seed: u64) -> Self {
        let (window_size, n) = match scenario_id {
            ScenarioId::One => (300, 2),
            ScenarioId::Two => (5000, 3),
        };
        Self {
            scenario_id,
            seed,
            sim: ScenarioConfig::new(scenario_id),
            ddpg: DdpgHyper::for_scenario(scenario_id),
            avf: AvfConfig {
                window_size,
                epochs: 500,
                lr: 1e-3,
                n_candidates: 1000,
            },
            gmm: GmmConfig {
                n: ComponentCount::Fixed(n),
                n_inits: 100,
                candidate_range: [1, 5],
                update_on_gmm_failures: false,
            },
            search: SearchConfig {
                budget: 200_000,
                k_failures: 100,
                strategies: Strategy::ALL_GUIDED.to_vec(),
                alternation_order: AlternationOrder::GmmFirst,
                hybrid_reset: false,
            },
        }
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            n_inits: self.gmm.n_inits,
            ..EmOptions::default()
        }
    }

    /// Parses a config document, applying scenario defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            path: "<root>".into(),
            message: e.to_string(),
        })?;
        let obj = user.as_object().ok_or_else(|| Error::Config {
            path: "<root>".into(),
            message: "config must be a JSON object".into(),
        })?;
        let scenario_id: ScenarioId = required(obj, "scenario_id")?;
        let seed: u64 = required(obj, "seed")?;

        let mut merged = serde_json::to_value(Self::defaults(scenario_id, seed)).expect("defaults serialize");
        merge(&mut merged, &user, "")?;
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config {
            path: "<root>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |path: String, message: String| Err(Error::Config { path, message });
        if self.sim.scenario_id != self.scenario_id {
            return fail("sim.scenario_id".into(), "must match scenario_id".into());
        }
        if let Err((field, msg)) = self.sim.validate() {
            return fail(format!("sim.{field}"), msg);
        }
        if let Err((field, msg)) = self.ddpg.validate() {
            return fail(format!("ddpg.{field}"), msg);
        }
        if self.avf.window_size == 0 {
            return fail("avf.window_size".into(), "must be positive".into());
        }
        if self.avf.window_size > self.ddpg.episodes {
            return fail("avf.window_size".into(), "cannot exceed ddpg.episodes".into());
        }
        if !(self.avf.lr > 0.0) {
            return fail("avf.lr".into(), "must be positive".into());
        }
        if self.avf.n_candidates == 0 {
            return fail("avf.n_candidates".into(), "must be positive".into());
        }
        if let ComponentCount::Fixed(0) = self.gmm.n {
            return fail("gmm.n".into(), "must be positive or \"auto\"".into());
        }
        if self.gmm.n_inits == 0 {
            return fail("gmm.n_inits".into(), "must be positive".into());
        }
        let [lo, hi] = self.gmm.candidate_range;
        if lo == 0 || lo > hi {
            return fail("gmm.candidate_range".into(), "must be 1 <= lo <= hi".into());
        }
        if self.search.budget == 0 {
            return fail("search.budget".into(), "must be positive".into());
        }
        if self.search.strategies.contains(&Strategy::Pr) {
            return fail(
                "search.strategies".into(),
                "pr is a replay, not a benchmarked search".into(),
            );
        }
        Ok(())
    }
}

fn required<T: serde::de::DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<T> {
    let v = obj.get(key).ok_or_else(|| Error::Config {
        path: key.into(),
        message: "required field missing".into(),
    })?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Config {
        path: key.into(),
        message: e.to_string(),
    })
}

/// Overlays `user` onto `base`; object keys absent from `base` are unknown.
fn merge(base: &mut Value, user: &Value, prefix: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v.clone(),
                    None => {
                        return Err(Error::Config {
                            path,
                            message: "unknown key".into(),
                        })
                    }
                }
            }
            Ok(())
        }
        (_, _) => Err(Error::Config {
            path: prefix.into(),
            message: "expected an object".into(),
        }),
    }
}
