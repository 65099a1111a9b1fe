//! Traffic world: kinematics, transition, occluded observation and reward.
//!
//! Every function here is pure. The same inputs always produce bitwise
//! identical outputs, which the planner relies on when it replays
//! determinized scenarios.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_heading, Pose, Rect, Vec2};

/// Kinematic state of one agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Vec2,
    pub goal: Vec2,
    pub vel: Vec2,
    /// Radians in `[0, 2π)`.
    pub heading: f64,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.vel.norm()
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.pos, self.heading)
    }

    /// Agent at `pos` moving with `speed` along `heading`.
    pub fn moving(pos: Vec2, goal: Vec2, heading: f64, speed: f64) -> Self {
        let heading = normalize_heading(heading);
        AgentState { pos, goal, vel: Vec2::from_angle(heading) * speed, heading }
    }

    /// Agent at `pos` walking toward `goal` at `speed`.
    pub fn toward_goal(pos: Vec2, goal: Vec2, speed: f64) -> Self {
        let d = goal - pos;
        let heading = if d.norm() > 0.0 { normalize_heading(d.angle()) } else { 0.0 };
        AgentState::moving(pos, goal, heading, speed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Pedestrian,
    Car,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExoAgent {
    pub kind: AgentKind,
    pub state: AgentState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ego: AgentState,
    pub exo: Vec<ExoAgent>,
    /// Static over an episode; shared between states.
    pub obstacles: Arc<[Rect]>,
    pub t: u32,
}

/// Discrete longitudinal command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Acc {
    Accelerate,
    Decelerate,
    Maintain,
}

impl Acc {
    /// Fixed action order used for network logits and policies.
    pub const ALL: [Acc; 3] = [Acc::Accelerate, Acc::Decelerate, Acc::Maintain];
    /// Tie-break preference, safest first.
    pub const SAFETY_ORDER: [Acc; 3] = [Acc::Decelerate, Acc::Maintain, Acc::Accelerate];

    pub fn index(self) -> usize {
        match self {
            Acc::Accelerate => 0,
            Acc::Decelerate => 1,
            Acc::Maintain => 2,
        }
    }

    pub fn from_index(i: usize) -> Acc {
        Acc::ALL[i]
    }

    /// Rank in [`Acc::SAFETY_ORDER`]; lower is safer.
    pub fn safety_rank(self) -> usize {
        match self {
            Acc::Decelerate => 0,
            Acc::Maintain => 1,
            Acc::Accelerate => 2,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

pub const MAX_STEER_DEG: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Signed steering angle in degrees, `|steer| ≤ 50`; positive turns left.
    pub steer: f64,
    pub acc: Acc,
}

impl Action {
    pub fn new(steer: f64, acc: Acc) -> Self {
        Action { steer: steer.clamp(-MAX_STEER_DEG, MAX_STEER_DEG), acc }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: AgentState,
    /// `None` when the agent is occluded.
    pub exo_pos: Vec<Option<Vec2>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RewardConfig {
    pub gamma: f64,
    pub r_crash: f64,
    pub r_near_miss: f64,
    pub r_goal: f64,
    pub r_step: f64,
    pub r_acc_switch: f64,
    pub d_crash: f64,
    pub d_near: f64,
    pub v_near_min: f64,
    pub d_goal: f64,
    pub dt: f64,
    pub v_max_ego: f64,
    pub accel_rate: f64,
    pub decel_rate: f64,
    pub wheelbase: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 0.98,
            r_crash: -1000.0,
            r_near_miss: -200.0,
            r_goal: 1000.0,
            r_step: -1.0,
            r_acc_switch: -0.1,
            d_crash: 1.3,
            d_near: 2.0,
            v_near_min: 0.5,
            d_goal: 2.0,
            dt: 0.25,
            v_max_ego: 8.33,
            accel_rate: 1.5,
            decel_rate: -3.0,
            wheelbase: 2.5,
        }
    }
}

impl RewardConfig {
    pub fn rate(&self, acc: Acc) -> f64 {
        match acc {
            Acc::Accelerate => self.accel_rate,
            Acc::Decelerate => self.decel_rate,
            Acc::Maintain => 0.0,
        }
    }

    pub fn validate(&self) -> bool {
        self.gamma > 0.0
            && self.gamma < 1.0
            && self.d_crash < self.d_near
            && self.decel_rate < 0.0
            && self.accel_rate > 0.0
            && self.dt > 0.0
    }
}

/// Rear-axle kinematic bicycle, speed updated before pose. Speed and steer
/// are then held over the step, so the rear axle follows a circular arc;
/// the displacement is its chord, `v·dt·sinc(Δθ/2)` along the mid heading.
pub fn bicycle_step(ego: &AgentState, action: &Action, cfg: &RewardConfig) -> AgentState {
    let steer = action.steer.clamp(-MAX_STEER_DEG, MAX_STEER_DEG).to_radians();
    let speed = (ego.speed() + cfg.rate(action.acc) * cfg.dt).clamp(0.0, cfg.v_max_ego);
    let turn = speed / cfg.wheelbase * steer.tan() * cfg.dt;
    let half = 0.5 * turn;
    let sinc = if half.abs() < 1e-9 { 1.0 } else { half.sin() / half };
    let chord = Vec2::from_angle(ego.heading + half) * (speed * cfg.dt * sinc);
    let heading = normalize_heading(ego.heading + turn);
    AgentState { pos: ego.pos + chord, goal: ego.goal, vel: Vec2::from_angle(heading) * speed, heading }
}

/// Straight-line motion toward the agent's goal at its current speed.
pub fn exo_step(agent: &AgentState, dt: f64) -> AgentState {
    let to_goal = agent.goal - agent.pos;
    let dist = to_goal.norm();
    if dist == 0.0 {
        return *agent;
    }
    let speed = agent.speed();
    let step = speed * dt;
    let dir = to_goal * (1.0 / dist);
    let heading = normalize_heading(dir.angle());
    if dist <= step {
        return AgentState { pos: agent.goal, goal: agent.goal, vel: Vec2::ZERO, heading };
    }
    AgentState { pos: agent.pos + dir * step, goal: agent.goal, vel: dir * speed, heading }
}

pub fn transition(s: &WorldState, action: &Action, cfg: &RewardConfig) -> WorldState {
    WorldState {
        ego: bicycle_step(&s.ego, action, cfg),
        exo: s
            .exo
            .iter()
            .map(|a| ExoAgent { kind: a.kind, state: exo_step(&a.state, cfg.dt) })
            .collect(),
        obstacles: Arc::clone(&s.obstacles),
        t: s.t + 1,
    }
}

pub fn line_of_sight(from: Vec2, to: Vec2, obstacles: &[Rect]) -> bool {
    !obstacles.iter().any(|r| r.blocks_segment(from, to))
}

pub fn observe(s: &WorldState) -> Observation {
    Observation {
        ego: s.ego,
        exo_pos: s
            .exo
            .iter()
            .map(|a| line_of_sight(s.ego.pos, a.state.pos, &s.obstacles).then_some(a.state.pos))
            .collect(),
    }
}

/// Terminal-category event detected in a single state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Crash,
    NearMiss,
    Goal,
    Timeout,
}

/// Distance from the ego to the nearest pedestrian, `∞` when there is none.
pub fn min_pedestrian_distance(s: &WorldState) -> f64 {
    s.exo
        .iter()
        .filter(|a| a.kind == AgentKind::Pedestrian)
        .map(|a| a.state.pos.distance(s.ego.pos))
        .fold(f64::INFINITY, f64::min)
}

/// Event fired by a state, with precedence crash > near-miss > goal.
pub fn step_event(s: &WorldState, cfg: &RewardConfig) -> Option<Outcome> {
    let d = min_pedestrian_distance(s);
    if d < cfg.d_crash {
        Some(Outcome::Crash)
    } else if d < cfg.d_near && s.ego.speed() > cfg.v_near_min {
        Some(Outcome::NearMiss)
    } else if s.ego.pos.distance(s.ego.goal) < cfg.d_goal {
        Some(Outcome::Goal)
    } else {
        None
    }
}

pub fn reward(
    _s: &WorldState,
    action: &Action,
    next: &WorldState,
    prev_acc: Acc,
    cfg: &RewardConfig,
) -> f64 {
    match step_event(next, cfg) {
        Some(Outcome::Crash) => cfg.r_crash,
        Some(Outcome::NearMiss) => cfg.r_near_miss,
        Some(Outcome::Goal) => cfg.r_goal,
        _ => cfg.r_step + if action.acc != prev_acc { cfg.r_acc_switch } else { 0.0 },
    }
}

/// First terminal event along a trajectory together with its state index.
pub fn first_event(episode: &[WorldState], cfg: &RewardConfig) -> Option<(usize, Outcome)> {
    episode.iter().enumerate().find_map(|(i, s)| step_event(s, cfg).map(|e| (i, e)))
}

/// Classifies an episode. Only the first `t_max + 1` states (initial state
/// plus `t_max` steps) are inspected.
pub fn classify_outcome(episode: &[WorldState], cfg: &RewardConfig, t_max: usize) -> Outcome {
    assert!(!episode.is_empty(), "episode must contain at least one state");
    let horizon = episode.len().min(t_max + 1);
    first_event(&episode[..horizon], cfg).map_or(Outcome::Timeout, |(_, e)| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn ego(x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
        AgentState::moving(Vec2::new(x, y), Vec2::new(100.0, y), heading, speed)
    }

    fn ped(x: f64, y: f64) -> ExoAgent {
        ExoAgent {
            kind: AgentKind::Pedestrian,
            state: AgentState::toward_goal(Vec2::new(x, y), Vec2::new(x, y + 10.0), 0.0),
        }
    }

    fn world(ego: AgentState, exo: Vec<ExoAgent>, obstacles: Vec<Rect>) -> WorldState {
        WorldState { ego, exo, obstacles: obstacles.into(), t: 0 }
    }

    #[test]
    fn straight_step() {
        let next = bicycle_step(&ego(0.0, 0.0, 0.0, 5.0), &Action::new(0.0, Acc::Maintain), &cfg());
        assert!((next.pos.x - 1.25).abs() < 1e-12);
        assert_eq!(next.pos.y, 0.0);
        assert_eq!(next.heading, 0.0);
    }

    #[test]
    fn zero_speed_is_fixed_point() {
        let e = ego(3.0, 4.0, 1.0, 0.0);
        for steer in [-50.0, -10.0, 0.0, 33.0, 50.0] {
            let next = bicycle_step(&e, &Action::new(steer, Acc::Maintain), &cfg());
            assert_eq!(next.pos, e.pos);
            assert_eq!(next.heading, e.heading);
        }
    }

    #[test]
    fn steering_heading_closed_form() {
        let next = bicycle_step(&ego(0.0, 0.0, 0.0, 4.0), &Action::new(10.0, Acc::Maintain), &cfg());
        let expected = 4.0 / 2.5 * 10f64.to_radians().tan() * 0.25;
        assert!((next.heading - expected).abs() < 1e-12);
        assert!((expected - 0.07053).abs() < 1e-5);
    }

    #[test]
    fn speed_clamped() {
        let c = cfg();
        let fast = bicycle_step(&ego(0.0, 0.0, 0.0, 8.3), &Action::new(0.0, Acc::Accelerate), &c);
        assert_eq!(fast.speed(), c.v_max_ego);
        let stop = bicycle_step(&ego(0.0, 0.0, 0.0, 0.2), &Action::new(0.0, Acc::Decelerate), &c);
        assert_eq!(stop.speed(), 0.0);
    }

    #[test]
    fn exo_straight_line() {
        let a = AgentState::toward_goal(Vec2::ZERO, Vec2::new(10.0, 0.0), 1.0);
        assert_eq!(exo_step(&a, 0.25).pos, Vec2::new(0.25, 0.0));

        let near = AgentState::toward_goal(Vec2::new(9.9, 0.0), Vec2::new(10.0, 0.0), 1.0);
        assert_eq!(exo_step(&near, 0.25).pos, Vec2::new(10.0, 0.0));

        let diag = AgentState::toward_goal(Vec2::ZERO, Vec2::new(3.0, 4.0), 1.0);
        let p = exo_step(&diag, 0.25).pos;
        assert!((p.x - 0.15).abs() < 1e-12 && (p.y - 0.20).abs() < 1e-12);

        let parked = AgentState::toward_goal(Vec2::new(2.0, 2.0), Vec2::new(2.0, 2.0), 1.0);
        assert_eq!(exo_step(&parked, 0.25), parked);
    }

    #[test]
    fn transition_moves_everyone() {
        let c = cfg();
        let empty = world(ego(0.0, 0.0, 0.0, 5.0), vec![], vec![]);
        let next = transition(&empty, &Action::new(0.0, Acc::Maintain), &c);
        assert!(next.exo.is_empty());
        assert_eq!(next.t, 1);

        let mut two = world(ego(0.0, 0.0, 0.0, 5.0), vec![ped(5.0, -5.0), ped(8.0, -3.0)], vec![]);
        two.exo[0].state = AgentState::toward_goal(Vec2::new(5.0, -5.0), Vec2::new(5.0, 5.0), 1.0);
        two.exo[1].state = AgentState::toward_goal(Vec2::new(8.0, -3.0), Vec2::new(0.0, -3.0), 2.0);
        let next = transition(&two, &Action::new(0.0, Acc::Maintain), &c);
        assert_eq!(next.exo[0].state, exo_step(&two.exo[0].state, c.dt));
        assert_eq!(next.exo[1].state, exo_step(&two.exo[1].state, c.dt));
    }

    #[test]
    fn observation_occlusion() {
        let e = ego(0.0, 0.0, 0.0, 5.0);
        let open = world(e, vec![ped(10.0, 0.0)], vec![]);
        assert_eq!(observe(&open).exo_pos, vec![Some(Vec2::new(10.0, 0.0))]);

        let wall = Rect::new(Vec2::new(4.0, -1.0), Vec2::new(5.0, 1.0));
        let blocked = world(e, vec![ped(10.0, 0.0)], vec![wall]);
        assert_eq!(observe(&blocked).exo_pos, vec![None]);
        assert_eq!(observe(&blocked).ego, e);

        // pedestrian standing exactly on the rectangle corner
        let corner = world(e, vec![ped(4.0, 1.0)], vec![wall]);
        assert_eq!(observe(&corner).exo_pos, vec![Some(Vec2::new(4.0, 1.0))]);
    }

    #[test]
    fn reward_branches() {
        let c = cfg();
        let a = Action::new(0.0, Acc::Maintain);
        let s = world(ego(0.0, 0.0, 0.0, 3.0), vec![], vec![]);
        let crash = world(ego(0.0, 0.0, 0.0, 3.0), vec![ped(1.0, 0.0)], vec![]);
        assert_eq!(reward(&s, &a, &crash, Acc::Maintain, &c), -1000.0);
        let near = world(ego(0.0, 0.0, 0.0, 3.0), vec![ped(1.8, 0.0)], vec![]);
        assert_eq!(reward(&s, &a, &near, Acc::Maintain, &c), -200.0);
        let slow = world(ego(0.0, 0.0, 0.0, 0.3), vec![ped(1.8, 0.0)], vec![]);
        assert_eq!(reward(&s, &a, &slow, Acc::Maintain, &c), -1.0);
        let mut goal = world(ego(0.0, 0.0, 0.0, 3.0), vec![ped(30.0, 0.0)], vec![]);
        goal.ego.goal = Vec2::new(1.0, 0.0);
        assert_eq!(reward(&s, &a, &goal, Acc::Maintain, &c), 1000.0);
        let plain = world(ego(0.0, 0.0, 0.0, 3.0), vec![ped(30.0, 0.0)], vec![]);
        assert_eq!(reward(&s, &a, &plain, Acc::Maintain, &c), -1.0);
        let switch = Action::new(0.0, Acc::Accelerate);
        assert!((reward(&s, &switch, &plain, Acc::Maintain, &c) + 1.1).abs() < 1e-12);
    }

    #[test]
    fn outcome_classification() {
        let c = cfg();
        let run = |peds: Vec<f64>| -> Vec<WorldState> {
            peds.into_iter()
                .map(|d| world(ego(0.0, 0.0, 0.0, 3.0), vec![ped(d, 0.0)], vec![]))
                .collect()
        };
        assert_eq!(classify_outcome(&run(vec![10.0, 5.0, 1.0, 0.5]), &c, 120), Outcome::Crash);
        assert_eq!(classify_outcome(&run(vec![10.0, 1.9, 1.0]), &c, 120), Outcome::NearMiss);

        let mut reach: Vec<WorldState> = (0..5)
            .map(|k| {
                let mut w = world(ego(k as f64 * 2.0, 0.0, 0.0, 3.0), vec![], vec![]);
                w.ego.goal = Vec2::new(8.0, 0.0);
                w
            })
            .collect();
        assert_eq!(classify_outcome(&reach, &c, 120), Outcome::Goal);
        assert_eq!(first_event(&reach, &c), Some((4, Outcome::Goal)));
        reach.truncate(4);
        assert_eq!(classify_outcome(&reach, &c, 120), Outcome::Timeout);

        let quiet = run(vec![30.0; 121]);
        assert_eq!(classify_outcome(&quiet, &c, 120), Outcome::Timeout);
    }

    proptest! {
        #[test]
        fn heading_and_speed_invariants(
            steps in proptest::collection::vec((-50.0f64..50.0, 0usize..3), 1..60),
            h0 in 0.0f64..std::f64::consts::TAU,
            v0 in 0.0f64..8.33,
        ) {
            let c = cfg();
            let mut e = ego(0.0, 0.0, h0, v0);
            for (steer, acc) in steps {
                e = bicycle_step(&e, &Action::new(steer, Acc::from_index(acc)), &c);
                prop_assert!(e.heading >= 0.0 && e.heading < std::f64::consts::TAU);
                prop_assert!(e.speed() <= c.v_max_ego + 1e-9);
            }
        }

        #[test]
        fn straight_line_keeps_lane(accs in proptest::collection::vec(0usize..3, 1..80)) {
            let c = cfg();
            let mut e = ego(0.0, -1.5, 0.0, 2.0);
            for acc in accs {
                e = bicycle_step(&e, &Action::new(0.0, Acc::from_index(acc)), &c);
                prop_assert_eq!(e.pos.y, -1.5);
            }
        }

        #[test]
        fn transition_is_pure(steer in -50.0f64..50.0, acc in 0usize..3, px in -10.0f64..10.0) {
            let c = cfg();
            let w = world(ego(0.0, 0.0, 0.3, 4.0), vec![ped(px, -4.0)], vec![]);
            let a = Action::new(steer, Acc::from_index(acc));
            prop_assert_eq!(transition(&w, &a, &c), transition(&w, &a, &c));
        }

        #[test]
        fn observation_is_noiseless(px in -20.0f64..20.0, py in -20.0f64..20.0) {
            let wall = Rect::new(Vec2::new(3.0, -2.0), Vec2::new(4.0, 2.0));
            let w = world(ego(0.0, 0.0, 0.0, 4.0), vec![ped(px, py)], vec![wall]);
            if let Some(p) = observe(&w).exo_pos[0] {
                prop_assert_eq!(p, w.exo[0].state.pos);
            }
        }
    }
}
