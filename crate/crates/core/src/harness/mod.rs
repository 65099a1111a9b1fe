//! Orchestration: the 4 Hz control loop, the training and calibration
//! passes, benchmark evaluation and the metric suite.

mod config;
mod control;
mod episode;
mod metrics;
mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use config::{seed_from_env, RunConfig, TrainConfig, SEED_ENV};
pub use control::{ControlMode, Controller, Decision, Velocity};
pub use episode::{
    read_logs, run_scene, write_logs, CalibSample, Episode, EpisodeLog, EpisodeSummary, Recording, StepRecord,
};
pub use metrics::{compute_metrics, two_level_mean, write_csv, MethodMetrics, CSV_COLUMNS};
pub use train::{evaluate, train_procedure, TrainReport, Trained};

use crate::calibration::CalibrationError;
use crate::learner::LearnerError;
use crate::planner::PlannerError;
use crate::scenarios::{stable_hash, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("the {0} split is empty; at least one scene is required")]
    NonemptySplitRequired(&'static str),
    #[error("MissingModel: method `{0}` needs a trained model (--model)")]
    MissingModel(Method),
    #[error("MissingCalibration: method `{0}` needs a calibration table (--calib)")]
    MissingCalibration(Method),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("config: {0}")]
    Config(String),
    #[error("episode log: {0}")]
    Log(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evaluated system: full HyPlan, its ablations, and the two baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Hyplan,
    HyplanNoPrune,
    HyplanNoCalib,
    HyplanNoPred,
    DespotLtr,
    NavppoOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hyplan,
        Method::HyplanNoPrune,
        Method::HyplanNoCalib,
        Method::HyplanNoPred,
        Method::DespotLtr,
        Method::NavppoOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hyplan => "hyplan",
            Method::HyplanNoPrune => "hyplan-noprune",
            Method::HyplanNoCalib => "hyplan-nocalib",
            Method::HyplanNoPred => "hyplan-nopred",
            Method::DespotLtr => "despot-ltr",
            Method::NavppoOnly => "navppo-only",
        }
    }

    pub fn needs_model(self) -> bool {
        self != Method::DespotLtr
    }

    pub fn needs_calibration(self) -> bool {
        matches!(self, Method::Hyplan | Method::HyplanNoPrune | Method::HyplanNoCalib | Method::HyplanNoPred)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }
}

/// Seed for one purpose within one scene, stable across runs and platforms.
pub fn derive_seed(base: u64, scene_id: &str, purpose: &str) -> u64 {
    stable_hash(&[&base.to_le_bytes(), scene_id.as_bytes(), purpose.as_bytes()])
}

#[cfg(test)]
mod tests;
