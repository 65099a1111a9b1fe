//! Small random determinized POMDPs and their exhaustive expectimax value,
//! used to validate the search.
//!
//! Rewards, observations and terminal flags are pure hashes of
//! `(instance seed, scenario, action history)`, so the planner and the
//! oracle see exactly the same tree.

use rand::Rng;

use super::{BoundsProvider, NodeBounds, NodeView, PlanningModel, Scenario, Step};
use crate::meter::Meter;
use crate::world::Acc;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyState {
    pub scenario: usize,
    pub history: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct ToyPomdp {
    pub seed: u64,
    pub scenarios: usize,
    pub depth: usize,
    pub num_obs: u64,
    pub terminal_prob: f64,
    pub gamma: f64,
    /// Bound on the magnitude of any value in the tree.
    pub value_bound: f64,
}

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl ToyPomdp {
    pub fn random(rng: &mut impl Rng, max_scenarios: usize, max_depth: usize) -> Self {
        ToyPomdp {
            seed: rng.gen(),
            scenarios: rng.gen_range(1..=max_scenarios),
            depth: rng.gen_range(1..=max_depth),
            num_obs: rng.gen_range(1..=3),
            terminal_prob: 0.15,
            gamma: 0.98,
            value_bound: 100.0,
        }
    }

    fn hash(&self, s: &ToyState, tag: u64) -> u64 {
        let mut h = mix(self.seed, tag);
        h = mix(h, s.scenario as u64);
        for &a in &s.history {
            h = mix(h, a as u64 + 1);
        }
        mix(h, s.history.len() as u64)
    }

    fn unit(&self, s: &ToyState, tag: u64) -> f64 {
        (self.hash(s, tag) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Value of a leaf scenario at the depth limit.
    pub fn leaf_value(&self, s: &ToyState) -> f64 {
        -20.0 + 40.0 * self.unit(s, 1)
    }

    /// Equal-weight start scenarios.
    pub fn root(&self) -> Vec<Scenario<ToyState>> {
        (0..self.scenarios)
            .map(|k| Scenario {
                state: ToyState { scenario: k, history: Vec::new() },
                weight: 1.0 / self.scenarios as f64,
                seed: k as u64,
            })
            .collect()
    }

    /// Exhaustive expectimax over the determinized tree; also returns the
    /// value of each root action.
    pub fn expectimax(&self) -> (f64, [f64; 3]) {
        let root: Vec<(ToyState, f64)> = self.root().into_iter().map(|s| (s.state, s.weight)).collect();
        let q = self.q_values(&root);
        (q.iter().copied().fold(f64::NEG_INFINITY, f64::max), q)
    }

    fn q_values(&self, node: &[(ToyState, f64)]) -> [f64; 3] {
        let w: f64 = node.iter().map(|p| p.1).sum();
        let mut q = [0.0; 3];
        for a in Acc::ALL {
            let mut reward = 0.0;
            #[allow(clippy::type_complexity)]
            let mut groups: Vec<(Vec<i64>, bool, Vec<(ToyState, f64)>)> = Vec::new();
            for (s, sw) in node {
                let st = self.step(s, a, 0);
                reward += sw * st.reward;
                match groups.iter_mut().find(|g| g.0 == st.obs && g.1 == st.terminal) {
                    Some(g) => g.2.push((st.next, *sw)),
                    None => groups.push((st.obs, st.terminal, vec![(st.next, *sw)])),
                }
            }
            let mut future = 0.0;
            for (_, terminal, child) in &groups {
                let cw: f64 = child.iter().map(|p| p.1).sum();
                future += cw / w * if *terminal { 0.0 } else { self.value(child) };
            }
            q[a.index()] = reward / w + self.gamma * future;
        }
        q
    }

    fn value(&self, node: &[(ToyState, f64)]) -> f64 {
        if node[0].0.history.len() >= self.depth {
            let w: f64 = node.iter().map(|p| p.1).sum();
            return node.iter().map(|(s, sw)| sw * self.leaf_value(s)).sum::<f64>() / w;
        }
        self.q_values(node).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl PlanningModel for ToyPomdp {
    type State = ToyState;

    fn step(&self, s: &ToyState, a: Acc, _seed: u64) -> Step<ToyState> {
        let mut next = s.clone();
        next.history.push(a.index() as u8);
        Step {
            reward: -10.0 + 20.0 * self.unit(&next, 2),
            obs: vec![(self.hash(&next, 3) % self.num_obs) as i64],
            terminal: self.unit(&next, 4) < self.terminal_prob,
            next,
        }
    }
}

/// Exact values at the depth limit, `±value_bound` elsewhere.
pub struct ToyBounds<'a> {
    pub pomdp: &'a ToyPomdp,
    /// Confidence reported for every non-leaf node.
    pub phi: f64,
}

impl BoundsProvider<ToyState> for ToyBounds<'_> {
    fn bounds(&mut self, node: &NodeView<'_, ToyState>, _meter: &mut Meter) -> NodeBounds {
        if node.depth >= self.pomdp.depth {
            let w = node.total_weight();
            let v = node.states.iter().zip(node.weights).map(|(s, sw)| sw * self.pomdp.leaf_value(s)).sum::<f64>() / w;
            return NodeBounds::exact(v);
        }
        NodeBounds { lower: -self.pomdp.value_bound, upper: self.pomdp.value_bound, phi: self.phi }
    }
}
