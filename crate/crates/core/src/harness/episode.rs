//! Episode rollout and the JSON-lines episode log.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::control::{ControlMode, Controller};
use super::{derive_seed, HarnessError, RunConfig};
use crate::belief::{init_belief, predict_particles, update_belief};
use crate::calibration::CalibrationTable;
use crate::learner::ppo::Transition;
use crate::learner::Network;
use crate::pathplan::Lattice;
use crate::planner::{EffortStats, PlanTrace};
use crate::scenarios::Scene;
use crate::world::{observe, reward, step_event, transition, Acc, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub t: u32,
    pub steer: f64,
    pub acc: Acc,
    pub reward: f64,
    /// Event fired by the state this step led to.
    pub event: Option<Outcome>,
    pub belief_ess: f64,
    pub belief_resets: u32,
    pub policy: [f64; 3],
    pub path_fallback: bool,
    pub effort: Option<EffortStats>,
    pub exec_ms: f64,
    pub budget_exceeded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeSummary {
    pub scene_id: String,
    pub template_id: u8,
    pub method: String,
    pub seed: u64,
    pub steps: usize,
    /// Crash, Goal or Timeout.
    pub outcome: Outcome,
    pub near_miss: bool,
    pub near_miss_steps: usize,
    /// Seconds to the goal, Goal episodes only.
    pub ttg_s: Option<f64>,
    pub total_reward: f64,
    pub training_days: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    /// Crash or near-miss at any point.
    pub fn failed(&self) -> bool {
        self.summary.outcome == Outcome::Crash || self.summary.near_miss
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine {
    Step {
        #[serde(rename = "sceneId")]
        scene_id: String,
        method: String,
        #[serde(flatten)]
        step: StepRecord,
    },
    Summary(EpisodeSummary),
}

/// Writes each log as its step lines followed by one summary line.
pub fn write_logs(logs: &[EpisodeLog], mut out: impl Write) -> Result<(), HarnessError> {
    for log in logs {
        for step in &log.steps {
            let line =
                LogLine::Step { scene_id: log.summary.scene_id.clone(), method: log.summary.method.clone(), step: step.clone() };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &LogLine::Summary(log.summary.clone()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_logs(input: impl BufRead) -> Result<Vec<EpisodeLog>, HarnessError> {
    let mut logs = Vec::new();
    let mut pending: Vec<StepRecord> = Vec::new();
    let mut owner: Option<(String, String)> = None;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| HarnessError::Log(format!("line {}: {e}", n + 1)))?;
        match parsed {
            LogLine::Step { scene_id, method, step } => {
                let key = (scene_id, method);
                if owner.as_ref().is_some_and(|o| *o != key) {
                    return Err(HarnessError::Log(format!("line {}: steps of two episodes interleave", n + 1)));
                }
                owner = Some(key);
                pending.push(step);
            }
            LogLine::Summary(summary) => {
                if owner.take().is_some_and(|(s, m)| s != summary.scene_id || m != summary.method) {
                    return Err(HarnessError::Log(format!("line {}: summary does not match its steps", n + 1)));
                }
                logs.push(EpisodeLog { summary, steps: std::mem::take(&mut pending) });
            }
        }
    }
    if !pending.is_empty() {
        return Err(HarnessError::Log("steps without a closing summary".into()));
    }
    Ok(logs)
}

/// What to keep besides the log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Recording {
    pub transitions: bool,
    /// Dropout statistics at every executed belief.
    pub calibration: bool,
    pub traces: bool,
}

/// Root statistics of one executed step, for the calibration pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibSample {
    pub mu: f64,
    pub var: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub log: EpisodeLog,
    pub transitions: Vec<Transition>,
    pub calibration: Vec<CalibSample>,
    pub traces: Vec<PlanTrace>,
}

/// Runs one scene for at most `cfg.t_max` steps, stopping on crash or goal.
#[allow(clippy::too_many_arguments)]
pub fn run_scene(
    scene: &Scene,
    mode: ControlMode,
    method: &str,
    cfg: &RunConfig,
    lattice: &Lattice,
    net: Option<&Network<f32>>,
    calib: Option<&CalibrationTable<f64>>,
    recording: Recording,
) -> Result<Episode, HarnessError> {
    let seed = cfg.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &scene.scene_id, "belief"));
    let goal = scene.template().ego_goal();
    let mut ctl = Controller::new(mode, cfg, lattice, net, calib, goal, derive_seed(seed, &scene.scene_id, "control"))?;
    ctl.root_mc = recording.calibration;
    ctl.keep_trace = recording.traces;

    let mut s = scene.initial_state();
    let mut o = observe(&s);
    let mut b = init_belief(&o, scene, &mut rng);
    let (mut transitions, mut calibration, mut traces) = (Vec::new(), Vec::new(), Vec::new());
    let mut steps = Vec::new();
    let mut outcome = Outcome::Timeout;
    let mut near_miss_steps = 0;
    let mut total_reward = 0.0;

    for t in 0..cfg.t_max {
        let prev_acc = ctl.prev_acc;
        let d = ctl.control_step(&b, &o)?;
        let next = transition(&s, &d.action, &cfg.reward);
        let r = reward(&s, &d.action, &next, prev_acc, &cfg.reward);
        let event = step_event(&next, &cfg.reward);
        let done = matches!(event, Some(Outcome::Crash | Outcome::Goal));
        ctl.last_reward = r;
        total_reward += r;
        if event == Some(Outcome::NearMiss) {
            near_miss_steps += 1;
        }

        if let Some(root) = &d.root {
            if recording.transitions {
                transitions.push(Transition {
                    image: root.image.clone(),
                    features: root.features.clone(),
                    state: root.state.clone(),
                    planner_policy: d.policy,
                    action: d.action.acc.index(),
                    reward: r,
                    done,
                    value: root.value,
                });
            }
            if let Some((mu, var)) = root.mc {
                calibration.push(CalibSample { mu, var, value: root.value, reward: r, done });
            }
        }
        if let Some(tr) = d.trace {
            traces.push(tr);
        }
        steps.push(StepRecord {
            t: t as u32,
            steer: d.action.steer,
            acc: d.action.acc,
            reward: r,
            event,
            belief_ess: b.ess(),
            belief_resets: b.resets,
            policy: d.policy,
            path_fallback: d.path_fallback,
            effort: d.effort,
            exec_ms: d.exec_ms,
            budget_exceeded: d.budget_exceeded,
        });

        if done {
            outcome = event.expect("terminal event");
            break;
        }
        o = observe(&next);
        b = update_belief(&predict_particles(&b, &d.action, &cfg.reward), &o);
        s = next;
    }

    let n = steps.len();
    let log = EpisodeLog {
        summary: EpisodeSummary {
            scene_id: scene.scene_id.clone(),
            template_id: scene.template_id,
            method: method.to_string(),
            seed,
            steps: n,
            outcome,
            near_miss: near_miss_steps > 0,
            near_miss_steps,
            ttg_s: (outcome == Outcome::Goal).then_some(n as f64 * cfg.reward.dt),
            total_reward,
            training_days: 0.0,
        },
        steps,
    };
    Ok(Episode { log, transitions, calibration, traces })
}
