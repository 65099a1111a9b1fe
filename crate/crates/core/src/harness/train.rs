//! Training with planner-imitation PPO, the calibration pass, and benchmark
//! evaluation of a method.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::control::ControlMode;
use super::episode::{run_scene, CalibSample, EpisodeLog, Recording};
use super::metrics::{compute_metrics, MethodMetrics};
use super::{derive_seed, HarnessError, Method, RunConfig};
use crate::calibration::{fit_crude, CalibrationTable, CrudeSample};
use crate::learner::ppo::{gae, make_chunks, train_update, Adam, Chunk};
use crate::learner::{ArchConfig, LearnerError, ModelMeta, Network};
use crate::pathplan::Lattice;
use crate::scenarios::Scene;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub episodes: usize,
    pub updates: usize,
    /// Updates dropped because the loss or its gradient went non-finite.
    pub skipped_nonfinite: usize,
    /// Mean undiscounted episode return of each pass.
    pub pass_returns: Vec<f64>,
    pub calib_samples: usize,
    pub training_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub net: Network<f32>,
    pub calib: CalibrationTable<f64>,
    pub meta: ModelMeta,
    pub report: TrainReport,
}

fn seconds_to_days(s: f64) -> f64 {
    s / 86_400.0
}

/// Trains a fresh network on `train` (several passes, update after every
/// `scenes_per_update` episodes), then fits the calibration table on
/// `calib`. `init` replaces the seeded initialization.
pub fn train_procedure(
    train: &[Scene],
    calib: &[Scene],
    cfg: &RunConfig,
    init: Option<Network<f32>>,
) -> Result<Trained, HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::NonemptySplitRequired("training"));
    }
    if calib.is_empty() {
        return Err(HarnessError::NonemptySplitRequired("calibration"));
    }
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "", "train"));
    let mut net = init.unwrap_or_else(|| Network::init(ArchConfig::navppo(), &mut rng));
    let mut adam = Adam::new(net.num_params(), cfg.ppo.lr);
    let lattice = Lattice::new(cfg.path.clone());
    let mut report = TrainReport::default();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for pass in 0..cfg.train.passes {
        order.shuffle(&mut rng);
        let mut returns = 0.0;
        let mut pending: Vec<Chunk<f32>> = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            let ep = run_scene(
                &train[i],
                ControlMode::train(),
                "train",
                cfg,
                &lattice,
                Some(&net),
                None,
                Recording { transitions: true, ..Recording::default() },
            )?;
            report.episodes += 1;
            returns += ep.log.summary.total_reward;
            let bootstrap = ep.transitions.last().map_or(0.0, |t| if t.done { 0.0 } else { t.value });
            pending.extend(make_chunks::<f32>(&ep.transitions, bootstrap, &cfg.ppo)?);
            if (k + 1) % cfg.train.scenes_per_update != 0 && k + 1 != order.len() {
                continue;
            }
            let backup = (net.clone(), adam.clone());
            match train_update(&mut net, &mut adam, &pending, &cfg.ppo, &mut rng) {
                Ok(_) => report.updates += 1,
                Err(LearnerError::NonFiniteLoss) => {
                    log::warn!("pass {pass}, scene {}: non-finite loss, update skipped", train[i].scene_id);
                    (net, adam) = backup;
                    report.skipped_nonfinite += 1;
                }
                Err(e) => return Err(e.into()),
            }
            pending.clear();
        }
        let mean_return = returns / order.len() as f64;
        log::info!("pass {} of {}: mean return {mean_return:.1}", pass + 1, cfg.train.passes);
        report.pass_returns.push(mean_return);
    }

    let samples = calibration_samples(calib, cfg, &lattice, &net)?;
    report.calib_samples = samples.len();
    let table = fit_crude(&samples)?;
    report.training_seconds = started.elapsed().as_secs_f64();
    let meta = ModelMeta { training_seconds: report.training_seconds, scenes_seen: report.episodes };
    Ok(Trained { net, calib: table, meta, report })
}

/// Dropout statistics at every executed belief of the calibration scenes,
/// paired with the λ-return of the step as the regression target.
fn calibration_samples(
    scenes: &[Scene],
    cfg: &RunConfig,
    lattice: &Lattice,
    net: &Network<f32>,
) -> Result<Vec<CrudeSample<f64>>, HarnessError> {
    let per_scene: Vec<Vec<CalibSample>> = scenes
        .par_iter()
        .map(|s| {
            let rec = Recording { calibration: true, ..Recording::default() };
            run_scene(s, ControlMode::train(), "calibrate", cfg, lattice, Some(net), None, rec).map(|e| e.calibration)
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for ep in per_scene {
        if ep.is_empty() {
            continue;
        }
        let rewards: Vec<f64> = ep.iter().map(|c| c.reward).collect();
        let dones: Vec<bool> = ep.iter().map(|c| c.done).collect();
        let mut values: Vec<f64> = ep.iter().map(|c| c.value).collect();
        let last = ep.last().expect("non-empty");
        values.push(if last.done { 0.0 } else { last.value });
        let adv = gae(&rewards, &values, &dones, cfg.ppo.gamma, cfg.ppo.gae_lambda)?;
        out.extend(ep.iter().zip(adv).map(|(c, a)| CrudeSample { mu: c.mu, var: c.var, target: a + c.value }));
    }
    Ok(out)
}

/// Runs `method` on every scene in parallel; logs come back in scene-id order.
pub fn evaluate(
    scenes: &[Scene],
    method: Method,
    cfg: &RunConfig,
    net: Option<(&Network<f32>, &ModelMeta)>,
    calib: Option<&CalibrationTable<f64>>,
) -> Result<(MethodMetrics, Vec<EpisodeLog>), HarnessError> {
    if method.needs_model() && net.is_none() {
        return Err(HarnessError::MissingModel(method));
    }
    if method.needs_calibration() && calib.is_none() {
        return Err(HarnessError::MissingCalibration(method));
    }
    cfg.validate()?;
    let lattice = Lattice::new(cfg.path.clone());
    let mode = ControlMode::for_method(method);
    let training_days = match net {
        Some((_, meta)) if method.needs_model() => seconds_to_days(meta.training_seconds),
        _ => 0.0,
    };
    let mut logs: Vec<EpisodeLog> = scenes
        .par_iter()
        .map(|s| {
            run_scene(s, mode, method.as_str(), cfg, &lattice, net.map(|n| n.0), calib, Recording::default())
                .map(|e| e.log)
        })
        .collect::<Result<_, _>>()?;
    logs.sort_by(|a, b| a.summary.scene_id.cmp(&b.summary.scene_id));
    for l in &mut logs {
        l.summary.training_days = training_days;
    }
    Ok((compute_metrics(method.as_str(), &logs, training_days), logs))
}
