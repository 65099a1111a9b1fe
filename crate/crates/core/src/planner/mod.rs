//! Anytime belief-tree search over determinized scenarios for the
//! longitudinal action, with pluggable node bounds.
//!
//! Trials descend from the root along the action with the highest upper
//! bound and the child observation with the largest weighted, discounted
//! bound gap, expand leaves by stepping every scenario under every action,
//! and back bounds up along the visited path. Nodes are closed (never
//! expanded) when they are terminal, their gap is zero, or the bounds
//! provider reports confidence at or above the pruning threshold.

pub mod driving;
pub mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meter::Meter;
use crate::world::Acc;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("belief has no particles")]
    EmptyBelief,
    #[error("invalid planner configuration")]
    InvalidConfig,
    #[error("bounds need a trained model")]
    MissingModel,
    #[error("bounds need a calibration table")]
    MissingCalibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PlannerConfig {
    pub num_scenarios: usize,
    pub max_depth: usize,
    pub eps_term: f64,
    pub budget_ms: f64,
    pub trial_cap: usize,
    pub prune_confidence: f64,
    pub obs_pos_bin: f64,
    pub obs_speed_bin: f64,
    pub temperature: f64,
    pub gamma: f64,
    /// Dropout passes per deployment bound evaluation.
    pub mc_samples: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            num_scenarios: 32,
            max_depth: 20,
            eps_term: 0.05,
            budget_ms: 100.0,
            trial_cap: 200,
            prune_confidence: 0.95,
            obs_pos_bin: 1.0,
            obs_speed_bin: 0.5,
            temperature: 0.5,
            gamma: 0.98,
            mc_samples: 10,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let ok = self.num_scenarios >= 1
            && self.max_depth >= 1
            && self.eps_term > 0.0
            && self.eps_term < 1.0
            && self.trial_cap >= 1
            && self.temperature > 0.0
            && self.obs_pos_bin > 0.0
            && self.obs_speed_bin > 0.0
            && self.mc_samples >= 2;
        if ok {
            Ok(())
        } else {
            Err(PlannerError::InvalidConfig)
        }
    }
}

/// Result of advancing one scenario by one action.
#[derive(Clone, Debug)]
pub struct Step<S> {
    pub next: S,
    pub reward: f64,
    /// Discretized observation; scenarios with equal keys share a child.
    pub obs: Vec<i64>,
    pub terminal: bool,
}

pub trait PlanningModel {
    type State: Clone;
    fn step(&self, s: &Self::State, a: Acc, seed: u64) -> Step<Self::State>;
}

/// One determinized hypothesis: start state, weight and random seed.
#[derive(Clone, Debug)]
pub struct Scenario<S> {
    pub state: S,
    pub weight: f64,
    pub seed: u64,
}

/// Scenarios that reach a node, as seen by a bounds provider.
pub struct NodeView<'a, S> {
    pub states: &'a [S],
    /// Absolute scenario weights (the root sums to 1).
    pub weights: &'a [f64],
    pub depth: usize,
}

impl<S> NodeView<'_, S> {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    pub lower: f64,
    pub upper: f64,
    /// Confidence in `upper` as the node value; 0 when not applicable.
    pub phi: f64,
}

impl NodeBounds {
    pub fn exact(v: f64) -> Self {
        NodeBounds { lower: v, upper: v, phi: 0.0 }
    }
}

pub trait BoundsProvider<S> {
    fn bounds(&mut self, node: &NodeView<'_, S>, meter: &mut Meter) -> NodeBounds;

    /// Network evaluation time accumulated since the last call, in ms.
    fn take_network_ms(&mut self) -> f64 {
        0.0
    }
}

/// Planning-effort counters for one decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EffortStats {
    /// PT
    pub planning_time_ms: f64,
    /// PTN
    pub trial_count: usize,
    /// PTD
    pub mean_trial_depth: f64,
    /// BNN
    pub nodes_created: usize,
    /// OBF
    pub mean_obs_branching: f64,
    /// NNET
    pub network_eval_ms: f64,
}

impl EffortStats {
    pub fn from_trace(trace: &PlanTrace, planning_time_ms: f64, network_eval_ms: f64) -> Self {
        let mean = |xs: &mut dyn Iterator<Item = usize>| {
            let (s, n) = xs.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
            if n == 0 {
                0.0
            } else {
                s as f64 / n as f64
            }
        };
        EffortStats {
            planning_time_ms,
            trial_count: trace.trials.len(),
            mean_trial_depth: mean(&mut trace.trials.iter().map(|t| t.depth)),
            nodes_created: trace.nodes.len(),
            mean_obs_branching: mean(&mut trace.expansions.iter().map(|e| e.children)),
            network_eval_ms,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    /// Node ids from the root to where the trial stopped.
    pub path: Vec<usize>,
    /// Action index taken at each step of `path`.
    pub actions: Vec<usize>,
    pub depth: usize,
    pub root_lower: f64,
    pub root_upper: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTrace {
    pub node: usize,
    pub action: usize,
    pub children: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub weight: f64,
    pub initial: Option<NodeBounds>,
    pub lower: f64,
    pub upper: f64,
    pub closed: bool,
}

/// Everything a decision did, in creation order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub trials: Vec<TrialTrace>,
    pub expansions: Vec<ExpansionTrace>,
    pub nodes: Vec<NodeTrace>,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    /// Distribution over [`Acc::ALL`].
    pub policy: [f64; 3],
    pub action: Acc,
    /// Root action lower bounds, [`Acc::ALL`] order.
    pub q_lower: [f64; 3],
    pub q_upper: [f64; 3],
    pub root_lower: f64,
    pub root_upper: f64,
    pub effort: EffortStats,
    pub trace: PlanTrace,
}

#[derive(Clone, Debug)]
struct Branch {
    reward: f64,
    children: Vec<usize>,
    lower: f64,
    upper: f64,
}

#[derive(Clone, Debug)]
struct Node<S> {
    states: Vec<S>,
    seeds: Vec<u64>,
    weights: Vec<f64>,
    weight: f64,
    depth: usize,
    parent: Option<usize>,
    initial: Option<NodeBounds>,
    lower: f64,
    upper: f64,
    closed: bool,
    branches: Vec<Branch>,
}

impl<S> Node<S> {
    fn gap(&self) -> f64 {
        if self.closed {
            0.0
        } else {
            (self.upper - self.lower).max(0.0)
        }
    }
}

/// Scenarios sharing an observation key after one action: key, terminal
/// flag, states, seeds, weights.
type ObsGroup<S> = (Vec<i64>, bool, Vec<S>, Vec<u64>, Vec<f64>);

/// Index of the largest value, ties resolved toward the safer action.
pub fn safest_argmax(values: &[f64; 3]) -> Acc {
    let mut best = Acc::SAFETY_ORDER[0];
    for a in Acc::SAFETY_ORDER {
        if values[a.index()] > values[best.index()] {
            best = a;
        }
    }
    best
}

/// Softmax over range-normalized action values at temperature `t`.
pub fn planner_policy(values: &[f64; 3], t: f64) -> [f64; 3] {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min + 1e-9;
    let e: Vec<f64> = values.iter().map(|v| ((v - max) / range / t).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

struct Search<'a, M: PlanningModel, B> {
    model: &'a M,
    bounds: &'a mut B,
    cfg: &'a PlannerConfig,
    nodes: Vec<Node<M::State>>,
    trace: PlanTrace,
}

impl<'a, M: PlanningModel, B: BoundsProvider<M::State>> Search<'a, M, B> {
    #[allow(clippy::too_many_arguments)]
    fn add_node(
        &mut self,
        states: Vec<M::State>,
        seeds: Vec<u64>,
        weights: Vec<f64>,
        depth: usize,
        parent: Option<usize>,
        terminal: bool,
        meter: &mut Meter,
    ) -> usize {
        let weight = weights.iter().sum();
        let (initial, lower, upper, closed) = if terminal {
            (None, 0.0, 0.0, true)
        } else {
            let view = NodeView { states: &states, weights: &weights, depth };
            let mut b = self.bounds.bounds(&view, meter);
            b.lower = b.lower.min(b.upper);
            let pruned = b.phi >= self.cfg.prune_confidence;
            // a trusted estimate is taken as the node value
            let lower = if pruned { b.upper } else { b.lower };
            (Some(b), lower, b.upper, pruned || b.upper - lower <= 0.0)
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            states,
            seeds,
            weights,
            weight,
            depth,
            parent,
            initial,
            lower,
            upper,
            closed,
            branches: Vec::new(),
        });
        id
    }

    fn expand(&mut self, id: usize, meter: &mut Meter) {
        let depth = self.nodes[id].depth + 1;
        let mut branches = Vec::with_capacity(3);
        for a in Acc::ALL {
            let node = &self.nodes[id];
            let mut groups: Vec<ObsGroup<M::State>> = Vec::new();
            let mut reward = 0.0;
            for ((s, &seed), &w) in node.states.iter().zip(&node.seeds).zip(&node.weights) {
                let st = self.model.step(s, a, seed);
                reward += w * st.reward;
                match groups.iter_mut().find(|g| g.0 == st.obs && g.1 == st.terminal) {
                    Some(g) => {
                        g.2.push(st.next);
                        g.3.push(seed);
                        g.4.push(w);
                    }
                    None => groups.push((st.obs, st.terminal, vec![st.next], vec![seed], vec![w])),
                }
            }
            meter.charge_n(crate::meter::Cost::ScenarioStep, node.states.len() as u64);
            let reward = reward / node.weight;
            let mut children = Vec::with_capacity(groups.len());
            for (_, terminal, states, seeds, weights) in groups {
                children.push(self.add_node(states, seeds, weights, depth, Some(id), terminal, meter));
            }
            self.trace.expansions.push(ExpansionTrace { node: id, action: a.index(), children: children.len() });
            branches.push(Branch { reward, children, lower: 0.0, upper: 0.0 });
        }
        self.nodes[id].branches = branches;
        self.backup(id);
    }

    fn backup(&mut self, id: usize) {
        let gamma = self.cfg.gamma;
        let w = self.nodes[id].weight;
        let mut best_l = f64::NEG_INFINITY;
        let mut best_u = f64::NEG_INFINITY;
        let mut branches = std::mem::take(&mut self.nodes[id].branches);
        for b in &mut branches {
            let (mut l, mut u) = (0.0, 0.0);
            for &c in &b.children {
                let child = &self.nodes[c];
                l += child.weight / w * child.lower;
                u += child.weight / w * child.upper;
            }
            b.lower = b.reward + gamma * l;
            b.upper = b.reward + gamma * u;
            best_l = best_l.max(b.lower);
            best_u = best_u.max(b.upper);
        }
        let node = &mut self.nodes[id];
        node.branches = branches;
        node.lower = node.lower.max(best_l);
        node.upper = node.upper.min(best_u);
        node.lower = node.lower.min(node.upper);
    }

    fn weighted_gap(&self, id: usize) -> f64 {
        let n = &self.nodes[id];
        n.weight * self.cfg.gamma.powi(n.depth as i32) * n.gap()
    }

    fn trial(&mut self, threshold: f64, meter: &mut Meter) -> TrialTrace {
        let mut path = vec![0];
        let mut actions = Vec::new();
        let mut id = 0;
        loop {
            let n = &self.nodes[id];
            if id != 0 && (n.closed || n.depth >= self.cfg.max_depth || self.weighted_gap(id) <= threshold) {
                break;
            }
            if n.depth >= self.cfg.max_depth {
                break;
            }
            if self.nodes[id].branches.is_empty() {
                self.expand(id, meter);
            }
            let n = &self.nodes[id];
            let q_upper = [n.branches[0].upper, n.branches[1].upper, n.branches[2].upper];
            let a = safest_argmax(&q_upper);
            let next = n.branches[a.index()]
                .children
                .iter()
                .copied()
                .fold(None, |best: Option<(usize, f64)>, c| {
                    let g = self.weighted_gap(c);
                    match best {
                        Some((_, bg)) if bg >= g => best,
                        _ => Some((c, g)),
                    }
                });
            let Some((child, _)) = next else { break };
            actions.push(a.index());
            path.push(child);
            id = child;
        }
        for &p in path.iter().rev().skip(1) {
            self.backup(p);
        }
        let root = &self.nodes[0];
        TrialTrace { depth: self.nodes[id].depth, path, actions, root_lower: root.lower, root_upper: root.upper }
    }
}

/// Runs the anytime search from `scenarios`, charging `meter` and stopping at
/// the budget, the trial cap, or when the root gap falls to `eps_term` of its
/// initial value. At least one trial always runs.
pub fn plan<M: PlanningModel, B: BoundsProvider<M::State>>(
    model: &M,
    bounds: &mut B,
    scenarios: Vec<Scenario<M::State>>,
    cfg: &PlannerConfig,
    meter: &mut Meter,
) -> Result<PlanResult, PlannerError> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(PlannerError::EmptyBelief);
    }
    let start_ms = meter.elapsed_ms();
    bounds.take_network_ms();
    let mut search = Search { model, bounds, cfg, nodes: Vec::new(), trace: PlanTrace::default() };
    let (mut states, mut seeds, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for s in scenarios {
        states.push(s.state);
        seeds.push(s.seed);
        weights.push(s.weight);
    }
    search.add_node(states, seeds, weights, 0, None, false, meter);
    let initial_gap = (search.nodes[0].upper - search.nodes[0].lower).max(0.0);
    let threshold = cfg.eps_term * initial_gap;

    loop {
        let before = search.nodes.len();
        let t = search.trial(threshold, meter);
        search.trace.trials.push(t);
        let root = &search.nodes[0];
        // a trial that grew nothing would be repeated verbatim
        if search.nodes.len() == before
            || search.trace.trials.len() >= cfg.trial_cap
            || (root.upper - root.lower).max(0.0) <= threshold
            || meter.elapsed_ms() - start_ms >= cfg.budget_ms
        {
            break;
        }
    }

    let root = &search.nodes[0];
    let q_lower = [root.branches[0].lower, root.branches[1].lower, root.branches[2].lower];
    let q_upper = [root.branches[0].upper, root.branches[1].upper, root.branches[2].upper];
    let (root_lower, root_upper) = (root.lower, root.upper);
    let mut trace = std::mem::take(&mut search.trace);
    trace.nodes = search
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| NodeTrace {
            id,
            parent: n.parent,
            depth: n.depth,
            weight: n.weight,
            initial: n.initial,
            lower: n.lower,
            upper: n.upper,
            closed: n.closed,
        })
        .collect();
    let nnet = search.bounds.take_network_ms();
    let effort = EffortStats::from_trace(&trace, meter.elapsed_ms() - start_ms, nnet);
    Ok(PlanResult {
        policy: planner_policy(&q_lower, cfg.temperature),
        action: safest_argmax(&q_lower),
        q_lower,
        q_upper,
        root_lower,
        root_upper,
        effort,
        trace,
    })
}
