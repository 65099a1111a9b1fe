//! The driving world as a planning model, and the node bounds used for it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundsProvider, NodeBounds, NodeView, PlannerConfig, PlannerError, PlanningModel, Scenario, Step};
use crate::belief::{systematic_resample, Belief};
use crate::calibration::CalibrationTable;
use crate::geometry::{normalize_heading, Pose, Rect, Vec2};
use crate::intention::{render, RenderInput};
use crate::learner::{features, LstmState, Network};
use crate::meter::{Cost, Meter};
use crate::prediction::{rollout, HORIZON};
use crate::world::{
    line_of_sight, reward, step_event, transition, Acc, Action, AgentKind, AgentState, Outcome, RewardConfig,
    WorldState,
};

/// Distance ahead on the planned path that the follower steers toward.
const LOOKAHEAD_M: f64 = 4.0;
/// Cap on the steps simulated by the optimistic time-to-goal bound.
const GOAL_HORIZON: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct DriveState {
    pub world: WorldState,
    pub prev_acc: Acc,
    /// Reward of the transition that produced this state.
    pub last_reward: f64,
    pub terminal: bool,
}

/// Pure-pursuit steering along the path from the path planner.
#[derive(Clone, Debug, Default)]
pub struct PathFollower {
    pub poses: Vec<Pose>,
    pub wheelbase: f64,
}

impl PathFollower {
    pub fn new(poses: Vec<Pose>, wheelbase: f64) -> Self {
        PathFollower { poses, wheelbase }
    }

    /// Steering angle in degrees for an ego at `ego`.
    pub fn steer(&self, ego: &AgentState) -> f64 {
        if self.poses.len() < 2 {
            return 0.0;
        }
        let nearest = self
            .poses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.pos.distance(ego.pos).total_cmp(&b.1.pos.distance(ego.pos)))
            .map_or(0, |(i, _)| i);
        let target = self.poses[nearest..]
            .iter()
            .find(|p| p.pos.distance(ego.pos) >= LOOKAHEAD_M)
            .or(self.poses.last())
            .expect("non-empty path");
        let d = target.pos - ego.pos;
        let ld = d.norm();
        if ld < 1e-9 {
            return 0.0;
        }
        let mut alpha = normalize_heading(d.angle() - ego.heading);
        if alpha > std::f64::consts::PI {
            alpha -= std::f64::consts::TAU;
        }
        (2.0 * self.wheelbase * alpha.sin() / ld).atan().to_degrees()
    }
}

/// The true world dynamics with steering delegated to a [`PathFollower`].
pub struct DriveModel {
    pub reward: RewardConfig,
    pub follower: PathFollower,
    pub pos_bin: f64,
    pub speed_bin: f64,
}

impl DriveModel {
    pub fn new(reward: RewardConfig, follower: PathFollower, cfg: &PlannerConfig) -> Self {
        DriveModel { reward, follower, pos_bin: cfg.obs_pos_bin, speed_bin: cfg.obs_speed_bin }
    }

    fn obs_key(&self, s: &WorldState, terminal: bool) -> Vec<i64> {
        let mut key = Vec::with_capacity(2 + 3 * s.exo.len());
        key.push(terminal as i64);
        key.push((s.ego.speed() / self.speed_bin).floor() as i64);
        for a in &s.exo {
            if line_of_sight(s.ego.pos, a.state.pos, &s.obstacles) {
                key.extend([1, (a.state.pos.x / self.pos_bin).floor() as i64, (a.state.pos.y / self.pos_bin).floor() as i64]);
            } else {
                key.extend([0, 0, 0]);
            }
        }
        key
    }
}

impl PlanningModel for DriveModel {
    type State = DriveState;

    fn step(&self, s: &DriveState, a: Acc, _seed: u64) -> Step<DriveState> {
        if s.terminal {
            return Step { next: s.clone(), reward: 0.0, obs: vec![1], terminal: true };
        }
        let action = Action::new(self.follower.steer(&s.world.ego), a);
        let next = transition(&s.world, &action, &self.reward);
        let r = reward(&s.world, &action, &next, s.prev_acc, &self.reward);
        let terminal = matches!(step_event(&next, &self.reward), Some(Outcome::Crash | Outcome::Goal));
        let obs = self.obs_key(&next, terminal);
        Step { next: DriveState { world: next, prev_acc: a, last_reward: r, terminal }, reward: r, obs, terminal }
    }
}

/// Steps until ego and a pedestrian come within `d_crash` when both keep
/// their current velocity, or `None` within `horizon` steps.
pub fn collision_steps(s: &WorldState, cfg: &RewardConfig, horizon: usize) -> Option<usize> {
    let ev = s.ego.vel;
    let peds: Vec<&AgentState> = s.exo.iter().filter(|a| a.kind == AgentKind::Pedestrian).map(|a| &a.state).collect();
    (0..=horizon).find(|&k| {
        let t = k as f64 * cfg.dt;
        let e = s.ego.pos + ev * t;
        peds.iter().any(|p| e.distance(p.pos + p.vel * t) < cfg.d_crash)
    })
}

/// Scenario-weighted mean of the discounted crash penalty along straight-line
/// extrapolations (0 for scenarios without a collision course).
pub fn heuristic_l_tr(states: &[&WorldState], weights: &[f64], cfg: &RewardConfig, horizon: usize) -> f64 {
    let w: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (s, sw) in states.iter().zip(weights) {
        if let Some(k) = collision_steps(s, cfg, horizon) {
            acc += sw * cfg.gamma.powi(k as i32) * cfg.r_crash;
        }
    }
    acc / w
}

/// Optimistic value: the goal reward discounted by the fewest steps the ego
/// needs to reach the goal disc at full acceleration, ignoring all costs.
pub fn optimistic_value(s: &WorldState, cfg: &RewardConfig) -> f64 {
    let dist = s.ego.pos.distance(s.ego.goal) - cfg.d_goal;
    let mut v = s.ego.speed();
    let mut travelled = 0.0;
    for k in 1..=GOAL_HORIZON {
        v = (v + cfg.accel_rate * cfg.dt).min(cfg.v_max_ego);
        travelled += v * cfg.dt;
        if travelled > dist {
            return cfg.gamma.powi(k as i32 - 1) * cfg.r_goal;
        }
    }
    0.0
}

/// Which quantities form the node bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundsMode {
    /// `L = L_tr`, `U = V` without dropout.
    Train,
    /// `L = L_tr`, `U = μ̃` from calibrated dropout statistics, no mixing.
    TrainCalibrated,
    /// `L = (1 − φ) L_tr + φ μ̃`, `U = μ̃`, `φ` from the calibrated variance.
    Deploy,
    /// Deployment bounds with the confidence fixed.
    ForcedPhi(f64),
    /// Deployment bounds from uncalibrated dropout statistics.
    Raw,
    /// `L = L_tr` and the optimistic time-to-goal bound; no network.
    Heuristic,
}

impl BoundsMode {
    pub fn needs_network(self) -> bool {
        self != BoundsMode::Heuristic
    }

    pub fn needs_calibration(self) -> bool {
        matches!(self, BoundsMode::TrainCalibrated | BoundsMode::Deploy | BoundsMode::ForcedPhi(_) | BoundsMode::Raw)
    }
}

/// Scene context shared by every node image of one decision.
#[derive(Clone, Debug)]
pub struct RenderContext {
    pub goal: Vec2,
    pub planned: Vec<Pose>,
    pub past: Vec<Pose>,
    pub obstacles: Arc<[Rect]>,
}

pub struct DrivingBounds<'a> {
    mode: BoundsMode,
    net: Option<&'a Network<f32>>,
    calib: Option<&'a CalibrationTable<f64>>,
    ctx: RenderContext,
    /// Recurrent state entering the current decision.
    lstm: LstmState<f32>,
    reward: RewardConfig,
    horizon: usize,
    mc_samples: usize,
    rng: ChaCha8Rng,
    nnet_ms: f64,
    pub evaluations: usize,
}

impl<'a> DrivingBounds<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: BoundsMode,
        net: Option<&'a Network<f32>>,
        calib: Option<&'a CalibrationTable<f64>>,
        ctx: RenderContext,
        lstm: LstmState<f32>,
        reward: RewardConfig,
        cfg: &PlannerConfig,
        seed: u64,
    ) -> Result<Self, PlannerError> {
        if mode.needs_network() && net.is_none() {
            return Err(PlannerError::MissingModel);
        }
        if mode.needs_calibration() && calib.is_none() {
            return Err(PlannerError::MissingCalibration);
        }
        Ok(DrivingBounds {
            mode,
            net: if mode.needs_network() { net } else { None },
            calib,
            ctx,
            lstm,
            reward,
            horizon: cfg.max_depth,
            mc_samples: cfg.mc_samples,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nnet_ms: 0.0,
            evaluations: 0,
        })
    }

    fn node_image(&self, node: &NodeView<'_, DriveState>) -> Vec<f32> {
        let first = &node.states[0].world;
        let w = node.total_weight();
        let n_agents = first.exo.len();
        let mut hyps = Vec::with_capacity(3 * n_agents);
        let mut order: Vec<usize> = (0..node.states.len()).collect();
        order.sort_by(|&a, &b| node.weights[b].total_cmp(&node.weights[a]).then(a.cmp(&b)));
        for i in 0..n_agents {
            for &k in order.iter().take(3) {
                hyps.push((node.states[k].world.exo[i].state.pos, node.weights[k] / w));
            }
        }
        let predictions: Vec<Vec<Vec2>> =
            first.exo.iter().map(|a| rollout(&a.state, HORIZON, self.reward.dt)).collect();
        let img = render(&RenderInput {
            ego: first.ego.pose(),
            goal: Some(self.ctx.goal),
            planned: &self.ctx.planned,
            past: &self.ctx.past,
            predictions: &predictions,
            hypotheses: &hyps,
            obstacles: &self.ctx.obstacles,
        });
        img.data().to_vec()
    }

    /// Network value statistics at a node: `(μ, σ²)`, with `σ² = 0` when
    /// dropout is off.
    fn network_stats(&mut self, node: &NodeView<'_, DriveState>, meter: &mut Meter) -> (f64, f64) {
        let net = self.net.expect("checked at construction");
        meter.charge(Cost::Render);
        let img = self.node_image(node);
        let s = &node.states[0];
        let x = features::<f32>(s.last_reward, s.prev_acc, s.world.ego.speed(), &self.reward);
        let mc = self.mode != BoundsMode::Train;
        let passes = if mc { self.mc_samples as u64 } else { 1 };
        let lstm = &self.lstm;
        let rng = &mut self.rng;
        let mc_samples = self.mc_samples;
        let (stats, ms) = meter.timed(&[(Cost::TrunkForward, 1), (Cost::HeadPass, passes)], || {
            let state = net.trunk(&img, &x, lstm).expect("node image matches the architecture");
            if mc {
                let (m, v) = net.mc_value_stats(&state.h, mc_samples, rng);
                (m as f64, v as f64)
            } else {
                (net.heads(&state.h, None).1 as f64, 0.0)
            }
        });
        self.nnet_ms += ms;
        stats
    }
}

impl BoundsProvider<DriveState> for DrivingBounds<'_> {
    fn bounds(&mut self, node: &NodeView<'_, DriveState>, meter: &mut Meter) -> NodeBounds {
        self.evaluations += 1;
        let worlds: Vec<&WorldState> = node.states.iter().map(|s| &s.world).collect();
        let l_tr = heuristic_l_tr(&worlds, node.weights, &self.reward, self.horizon);
        meter.charge_n(Cost::LookaheadStep, (node.states.len() * (self.horizon + 1)) as u64);
        let clamp = |lower: f64, upper: f64, phi: f64| NodeBounds { lower: lower.min(upper), upper, phi };
        match self.mode {
            BoundsMode::Heuristic => {
                let w = node.total_weight();
                let u = worlds.iter().zip(node.weights).map(|(s, sw)| sw * optimistic_value(s, &self.reward)).sum::<f64>() / w;
                meter.charge_n(Cost::LookaheadStep, node.states.len() as u64 * 32);
                clamp(l_tr, u, 0.0)
            }
            BoundsMode::Train => {
                let (v, _) = self.network_stats(node, meter);
                clamp(l_tr, v, 0.0)
            }
            mode => {
                let (mu, var) = self.network_stats(node, meter);
                let table = self.calib.expect("checked at construction");
                let (mu_t, var_t) = if mode == BoundsMode::Raw { (mu, var) } else { table.calibrate(mu, var) };
                match mode {
                    BoundsMode::TrainCalibrated => clamp(l_tr, mu_t, 0.0),
                    _ => {
                        let phi = match mode {
                            BoundsMode::ForcedPhi(p) => p,
                            _ => table.confidence(var_t),
                        };
                        clamp((1.0 - phi) * l_tr + phi * mu_t, mu_t, phi)
                    }
                }
            }
        }
    }

    fn take_network_ms(&mut self) -> f64 {
        std::mem::take(&mut self.nnet_ms)
    }
}

/// Draws `k` equally weighted scenarios from the belief, proportional to
/// particle weight.
pub fn sample_scenarios(
    b: &Belief,
    k: usize,
    prev_acc: Acc,
    last_reward: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Scenario<DriveState>>, PlannerError> {
    if b.is_empty() {
        return Err(PlannerError::EmptyBelief);
    }
    let w = b.weights();
    let total: f64 = w.iter().sum();
    let norm: Vec<f64> = w.iter().map(|v| v / total).collect();
    Ok(systematic_resample(&norm, k, rng)
        .into_iter()
        .map(|i| Scenario {
            state: DriveState { world: b.world_state(i), prev_acc, last_reward, terminal: false },
            weight: 1.0 / k as f64,
            seed: rng.gen(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::ExoAgent;

    fn world(ego: AgentState, peds: &[AgentState]) -> WorldState {
        WorldState {
            ego,
            exo: peds.iter().map(|p| ExoAgent { kind: AgentKind::Pedestrian, state: *p }).collect(),
            obstacles: Arc::from(Vec::new()),
            t: 0,
        }
    }

    fn head_on() -> WorldState {
        let ego = AgentState::moving(Vec2::ZERO, Vec2::new(60.0, 0.0), 0.0, 5.0);
        let ped = AgentState::moving(Vec2::new(5.0, 0.0), Vec2::new(-10.0, 0.0), std::f64::consts::PI, 1.0);
        world(ego, &[ped])
    }

    #[test]
    fn l_tr_head_on_example() {
        let cfg = RewardConfig::default();
        let s = head_on();
        assert_eq!(collision_steps(&s, &cfg, 20), Some(3));
        let l = heuristic_l_tr(&[&s], &[1.0], &cfg, 20);
        assert!((l - 0.98f64.powi(3) * -1000.0).abs() < 1e-9);
        assert!((l + 941.19).abs() < 0.01);
    }

    #[test]
    fn l_tr_weighted_and_clear() {
        let cfg = RewardConfig::default();
        let hit = head_on();
        let ego = AgentState::moving(Vec2::ZERO, Vec2::new(60.0, 0.0), 0.0, 5.0);
        let away = world(ego, &[AgentState::moving(Vec2::new(5.0, 10.0), Vec2::new(5.0, 30.0), std::f64::consts::FRAC_PI_2, 1.0)]);
        assert_eq!(heuristic_l_tr(&[&away], &[1.0], &cfg, 20), 0.0);
        let two = heuristic_l_tr(&[&hit, &away], &[0.5, 0.5], &cfg, 20);
        assert!((two + 470.596).abs() < 1e-3);
    }

    #[test]
    fn optimistic_value_bounds_goal_reward() {
        let cfg = RewardConfig::default();
        let s = head_on();
        let u = optimistic_value(&s, &cfg);
        assert!(u > 0.0 && u < cfg.r_goal);
        let mut near = s.clone();
        near.ego.pos = Vec2::new(57.5, 0.0);
        assert_eq!(optimistic_value(&near, &cfg), cfg.r_goal);
    }

    #[test]
    fn follower_straight_and_offset() {
        let poses: Vec<Pose> = (0..10).map(|i| Pose::new(Vec2::new(i as f64 * 2.0, 0.0), 0.0)).collect();
        let f = PathFollower::new(poses, 2.5);
        let ego = AgentState::moving(Vec2::ZERO, Vec2::new(20.0, 0.0), 0.0, 5.0);
        assert!(f.steer(&ego).abs() < 1e-12);
        let below = AgentState::moving(Vec2::new(0.0, -1.0), Vec2::new(20.0, 0.0), 0.0, 5.0);
        assert!(f.steer(&below) > 0.0);
        assert_eq!(PathFollower::default().steer(&ego), 0.0);
    }

    #[test]
    fn network_modes_require_model() {
        let ctx = RenderContext { goal: Vec2::ZERO, planned: vec![], past: vec![], obstacles: Arc::from(Vec::new()) };
        let cfg = PlannerConfig::default();
        let r = DrivingBounds::new(BoundsMode::Deploy, None, None, ctx.clone(), LstmState::zeros(128), RewardConfig::default(), &cfg, 0);
        assert!(matches!(r, Err(PlannerError::MissingModel)));
        let r = DrivingBounds::new(BoundsMode::Heuristic, None, None, ctx, LstmState::zeros(128), RewardConfig::default(), &cfg, 0);
        assert!(r.is_ok());
    }
}
