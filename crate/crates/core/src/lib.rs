//! HyPlan: learning-assisted online POMDP planning for collision-free driving,
//! with the simulator, learner and benchmark harness around it.

pub mod geometry;
pub mod meter;
pub mod scalar;
pub mod scenarios;
pub mod world;
pub mod belief;
pub mod prediction;
pub mod pathplan;
pub mod intention;
pub mod learner;
pub mod calibration;
pub mod planner;
pub mod harness;

/// Deployed network: the full architecture in single precision.
pub type NavPpo = learner::Network<f32>;
/// Double-precision network used by gradient oracles.
pub type NavPpo64 = learner::Network<f64>;
pub type Calibration = calibration::CalibrationTable<f64>;
