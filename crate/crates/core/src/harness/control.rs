//! One control decision: predictions, costmap and hybrid A* for steering,
//! then velocity from the belief-tree planner or the policy head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, Method, RunConfig};
use crate::belief::Belief;
use crate::calibration::CalibrationTable;
use crate::geometry::{Pose, Vec2};
use crate::intention::{belief_hypotheses, render, RenderInput};
use crate::learner::{features, softmax, LstmState, Network};
use crate::meter::{Cost, Meter};
use crate::pathplan::{build_costmap, extract_steering, hybrid_astar, Lattice};
use crate::planner::driving::{sample_scenarios, BoundsMode, DriveModel, DrivingBounds, PathFollower, RenderContext};
use crate::planner::{plan, EffortStats, PlanTrace, PlannerConfig};
use crate::prediction::{predict_trajectories, TrajPrediction, HORIZON};
use crate::world::{Acc, Action, Observation};

/// Source of the longitudinal command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Velocity {
    /// Belief-tree search; `sample` draws from the planner policy instead of
    /// taking its best action.
    Planner { bounds: BoundsMode, sample: bool },
    /// Sample from the network policy head.
    Policy,
    /// Always the same command.
    Constant(Acc),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlMode {
    pub velocity: Velocity,
    /// Splat predicted exo paths into the costmap.
    pub predictions_in_costmap: bool,
    pub training: bool,
}

impl ControlMode {
    /// Data collection with training bounds.
    pub fn train() -> Self {
        ControlMode {
            velocity: Velocity::Planner { bounds: BoundsMode::Train, sample: true },
            predictions_in_costmap: true,
            training: true,
        }
    }

    pub fn for_method(m: Method) -> Self {
        let planner = |bounds| Velocity::Planner { bounds, sample: false };
        let velocity = match m {
            Method::Hyplan | Method::HyplanNoPred => planner(BoundsMode::Deploy),
            Method::HyplanNoPrune => planner(BoundsMode::ForcedPhi(0.0)),
            Method::HyplanNoCalib => planner(BoundsMode::Raw),
            Method::DespotLtr => planner(BoundsMode::Heuristic),
            Method::NavppoOnly => Velocity::Policy,
        };
        ControlMode { velocity, predictions_in_costmap: m != Method::HyplanNoPred, training: false }
    }

    pub fn uses_network(&self) -> bool {
        match self.velocity {
            Velocity::Planner { bounds, .. } => bounds.needs_network(),
            Velocity::Policy => true,
            Velocity::Constant(_) => false,
        }
    }

    pub fn uses_calibration(&self) -> bool {
        matches!(self.velocity, Velocity::Planner { bounds, .. } if bounds.needs_calibration())
    }
}

/// Network inputs and outputs at the executed belief.
#[derive(Clone, Debug)]
pub struct RootEval {
    pub image: Vec<f32>,
    pub features: Vec<f32>,
    /// Recurrent state entering the step.
    pub state: LstmState<f32>,
    pub logits: Vec<f32>,
    pub value: f64,
    /// Dropout mean and variance, when requested.
    pub mc: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub action: Action,
    /// Distribution the longitudinal command was drawn from.
    pub policy: [f64; 3],
    pub path_fallback: bool,
    pub effort: Option<EffortStats>,
    pub trace: Option<PlanTrace>,
    pub root: Option<RootEval>,
    /// Time spent on the decision, on the run clock.
    pub exec_ms: f64,
    pub budget_exceeded: bool,
}

/// Per-episode decision state: recurrent memory, ego history and the
/// previous command.
pub struct Controller<'a> {
    mode: ControlMode,
    cfg: &'a RunConfig,
    planner: PlannerConfig,
    lattice: &'a Lattice,
    net: Option<&'a Network<f32>>,
    calib: Option<&'a CalibrationTable<f64>>,
    goal: Vec2,
    lstm: LstmState<f32>,
    past: Vec<Pose>,
    pub prev_acc: Acc,
    pub last_reward: f64,
    rng: ChaCha8Rng,
    /// Also compute dropout statistics at the root.
    pub root_mc: bool,
    pub keep_trace: bool,
}

fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

impl<'a> Controller<'a> {
    pub fn new(
        mode: ControlMode,
        cfg: &'a RunConfig,
        lattice: &'a Lattice,
        net: Option<&'a Network<f32>>,
        calib: Option<&'a CalibrationTable<f64>>,
        goal: Vec2,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if mode.uses_network() && net.is_none() {
            return Err(crate::planner::PlannerError::MissingModel.into());
        }
        if mode.uses_calibration() && calib.is_none() {
            return Err(crate::planner::PlannerError::MissingCalibration.into());
        }
        let net = if mode.uses_network() { net } else { None };
        let hidden = net.map_or(0, |n| n.arch().hidden);
        Ok(Controller {
            mode,
            cfg,
            planner: if mode.training { cfg.training_planner() } else { cfg.planner.clone() },
            lattice,
            net,
            calib,
            goal,
            lstm: LstmState::zeros(hidden),
            past: Vec::new(),
            prev_acc: Acc::Maintain,
            last_reward: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            root_mc: false,
            keep_trace: false,
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    /// Decides the action for belief `b` after observation `o`, advancing
    /// the recurrent state and updating the previous command.
    pub fn control_step(&mut self, b: &Belief, o: &Observation) -> Result<Decision, HarnessError> {
        let cfg = self.cfg;
        let mut meter = Meter::start(cfg.clock);
        let ego = b.ego.pose();
        let preds = predict_trajectories(o, b, HORIZON, cfg.reward.dt);
        let empty = TrajPrediction::empty();
        let map_preds = if self.mode.predictions_in_costmap { &preds } else { &empty };
        let map = build_costmap(ego, self.goal, b.obstacles(), map_preds, &cfg.path);
        let (steer, planned, path_fallback) = match hybrid_astar(self.lattice, ego, self.goal, &map, &mut meter) {
            Ok(p) => (extract_steering(&p), p.poses, false),
            Err(e) => {
                log::debug!("t={}: {e}; falling back to (0, Decelerate)", b.t);
                (0.0, vec![ego], true)
            }
        };

        let root = match self.net {
            Some(net) => Some(self.root_eval(net, b, ego, &planned, &preds.paths, &mut meter)?),
            None => None,
        };

        let (acc, policy, effort, trace) = if path_fallback {
            (Acc::Decelerate, Acc::Decelerate.one_hot(), None, None)
        } else {
            match self.mode.velocity {
                Velocity::Policy => {
                    let logits = &root.as_ref().expect("policy mode has a network").eval.logits;
                    let p = softmax(logits);
                    let p = [p[0] as f64, p[1] as f64, p[2] as f64];
                    (Acc::from_index(sample_index(&p, &mut self.rng)), p, None, None)
                }
                Velocity::Constant(a) => (a, a.one_hot(), None, None),
                Velocity::Planner { bounds, sample } => {
                    let scenarios =
                        sample_scenarios(b, self.planner.num_scenarios, self.prev_acc, self.last_reward, &mut self.rng)?;
                    let model = DriveModel::new(
                        cfg.reward,
                        PathFollower::new(planned.clone(), cfg.reward.wheelbase),
                        &self.planner,
                    );
                    let ctx = RenderContext {
                        goal: self.goal,
                        planned: planned.clone(),
                        past: self.past.clone(),
                        obstacles: b.obstacles().clone(),
                    };
                    let mut provider = DrivingBounds::new(
                        bounds,
                        self.net,
                        self.calib,
                        ctx,
                        self.lstm.clone(),
                        cfg.reward,
                        &self.planner,
                        self.rng.gen(),
                    )?;
                    let res = plan(&model, &mut provider, scenarios, &self.planner, &mut meter)?;
                    let acc = if sample { Acc::from_index(sample_index(&res.policy, &mut self.rng)) } else { res.action };
                    let trace = self.keep_trace.then_some(res.trace);
                    (acc, res.policy, Some(res.effort), trace)
                }
            }
        };

        if let Some(r) = &root {
            self.lstm = r.next_state.clone();
        }
        self.past.push(ego);
        self.prev_acc = acc;
        let exec_ms = meter.elapsed_ms();
        Ok(Decision {
            action: Action::new(steer, acc),
            policy,
            path_fallback,
            effort,
            trace,
            root: root.map(|r| r.eval),
            exec_ms,
            budget_exceeded: exec_ms > cfg.reward.dt * 1000.0,
        })
    }

    fn root_eval(
        &mut self,
        net: &Network<f32>,
        b: &Belief,
        ego: Pose,
        planned: &[Pose],
        predictions: &[Vec<Vec2>],
        meter: &mut Meter,
    ) -> Result<RootStep, HarnessError> {
        meter.charge(Cost::Render);
        let hyps = belief_hypotheses(b);
        let img = render(&RenderInput {
            ego,
            goal: Some(self.goal),
            planned,
            past: &self.past,
            predictions,
            hypotheses: &hyps,
            obstacles: b.obstacles(),
        });
        let x = features::<f32>(self.last_reward, self.prev_acc, b.ego.speed(), &self.cfg.reward);
        meter.charge(Cost::TrunkForward);
        meter.charge(Cost::HeadPass);
        let out = net.forward(img.data(), &x, &self.lstm, None)?;
        let mc = if self.root_mc {
            let f = self.planner.mc_samples;
            meter.charge_n(Cost::HeadPass, f as u64);
            let (m, v) = net.mc_value_stats(&out.state.h, f, &mut self.rng);
            Some((m as f64, v as f64))
        } else {
            None
        };
        Ok(RootStep {
            eval: RootEval {
                image: img.data().to_vec(),
                features: x,
                state: self.lstm.clone(),
                logits: out.logits,
                value: out.value as f64,
                mc,
            },
            next_state: out.state,
        })
    }
}

struct RootStep {
    eval: RootEval,
    next_state: LstmState<f32>,
}
