//! Run configuration and its `key = value` override file.
//!
//! Keys are dotted paths into the camelCase JSON form of [`RunConfig`], e.g.
//! `planner.budgetMs = 50` or `reward.rCrash = -500`. Values are parsed as
//! JSON when possible and taken as bare strings otherwise.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::learner::ppo::PpoConfig;
use crate::meter::ClockMode;
use crate::pathplan::PathConfig;
use crate::planner::PlannerConfig;
use crate::world::RewardConfig;

pub const SEED_ENV: &str = "HYPLAN_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    /// Passes over the training split.
    pub passes: usize,
    /// Planner budget while collecting training and calibration episodes.
    pub planner_budget_ms: f64,
    pub planner_trial_cap: usize,
    /// PPO update after every this many training episodes.
    pub scenes_per_update: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { passes: 3, planner_budget_ms: 100.0, planner_trial_cap: 200, scenes_per_update: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub seed: u64,
    pub t_max: usize,
    pub clock: ClockMode,
    pub reward: RewardConfig,
    pub planner: PlannerConfig,
    pub path: PathConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            t_max: 120,
            clock: ClockMode::Counted,
            reward: RewardConfig::default(),
            planner: PlannerConfig::default(),
            path: PathConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn with_overrides(&self, text: &str) -> Result<RunConfig, HarnessError> {
        let mut root = serde_json::to_value(self)?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            let slot = key.split('.').try_fold(&mut root, |v, part| v.get_mut(part));
            let slot = slot.ok_or_else(|| HarnessError::Config(format!("line {}: unknown key `{key}`", n + 1)))?;
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        let cfg: RunConfig =
            serde_json::from_value(root).map_err(|e| HarnessError::Config(format!("bad value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.t_max == 0 {
            return bad("tMax must be positive");
        }
        if !self.reward.validate() {
            return bad("invalid reward parameters");
        }
        if !self.ppo.validate() {
            return bad("invalid PPO parameters");
        }
        if self.train.scenes_per_update == 0 {
            return bad("train.scenesPerUpdate must be positive");
        }
        self.planner.validate()?;
        self.training_planner().validate()?;
        Ok(())
    }

    /// Planner settings used while collecting training data.
    pub fn training_planner(&self) -> PlannerConfig {
        PlannerConfig {
            budget_ms: self.train.planner_budget_ms,
            trial_cap: self.train.planner_trial_cap,
            ..self.planner.clone()
        }
    }
}

/// Seed from [`SEED_ENV`], if set and numeric.
pub fn seed_from_env() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|v| v.trim().parse().ok())
}
