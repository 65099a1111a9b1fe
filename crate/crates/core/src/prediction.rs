//! Exo-agent trajectory forecasts for the costmap and the intention image.

use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::geometry::Vec2;
use crate::world::{exo_step, AgentState, Observation};

pub const HORIZON: usize = 20;

/// Forecast positions per exo agent. `paths[i][k]` is agent `i` after
/// `k + 1` steps; `origins[i]` is the position the forecast starts from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajPrediction {
    pub origins: Vec<Vec2>,
    pub paths: Vec<Vec<Vec2>>,
}

impl TrajPrediction {
    pub fn empty() -> Self {
        TrajPrediction::default()
    }

    pub fn horizon(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }
}

pub trait Predictor {
    fn predict(&self, obs: &Observation, b: &Belief, horizon: usize, dt: f64) -> TrajPrediction;
}

/// Straight-line rollout of the belief's highest-weight particle.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModePredictor;

pub fn rollout(start: &AgentState, horizon: usize, dt: f64) -> Vec<Vec2> {
    let mut s = *start;
    (0..horizon)
        .map(|_| {
            s = exo_step(&s, dt);
            s.pos
        })
        .collect()
}

impl Predictor for ModePredictor {
    fn predict(&self, obs: &Observation, b: &Belief, horizon: usize, dt: f64) -> TrajPrediction {
        assert!(horizon >= 1, "prediction horizon must be positive");
        let mode = b.mode();
        let mut origins = Vec::with_capacity(mode.exo.len());
        let mut paths = Vec::with_capacity(mode.exo.len());
        for (i, hyp) in mode.exo.iter().enumerate() {
            let start = match obs.exo_pos.get(i).copied().flatten() {
                Some(p) if p != hyp.pos => AgentState::toward_goal(p, hyp.goal, mode.speeds[i]),
                _ => *hyp,
            };
            origins.push(start.pos);
            paths.push(rollout(&start, horizon, dt));
        }
        TrajPrediction { origins, paths }
    }
}

pub fn predict_trajectories(obs: &Observation, b: &Belief, horizon: usize, dt: f64) -> TrajPrediction {
    ModePredictor.predict(obs, b, horizon, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::init_belief;
    use crate::scenarios::{build_scene, ScenarioTemplate};
    use crate::world::{line_of_sight, observe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_line_example() {
        let a = AgentState::toward_goal(Vec2::ZERO, Vec2::new(10.0, 0.0), 1.0);
        let p = rollout(&a, 4, 0.25);
        assert_eq!(p, vec![
            Vec2::new(0.25, 0.0),
            Vec2::new(0.5, 0.0),
            Vec2::new(0.75, 0.0),
            Vec2::new(1.0, 0.0)
        ]);
    }

    #[test]
    fn agent_at_goal_stays() {
        let g = Vec2::new(3.0, 4.0);
        let a = AgentState::toward_goal(g, g, 1.5);
        assert_eq!(rollout(&a, 5, 0.25), vec![g; 5]);
    }

    #[test]
    fn occluded_prediction_starts_hidden() {
        for t in [2u8, 4] {
            for d in [5.0, 20.0, 45.0] {
                let s = build_scene(&ScenarioTemplate::by_id(t).unwrap(), 1.0, d, 2).unwrap();
                let o = observe(&s.initial_state());
                let b = init_belief(&o, &s, &mut ChaCha8Rng::seed_from_u64(4));
                let pred = predict_trajectories(&o, &b, HORIZON, 0.25);
                assert!(!line_of_sight(o.ego.pos, pred.origins[0], &s.obstacles));
                assert_eq!(pred.horizon(), HORIZON);
            }
        }
    }

    #[test]
    fn mode_tie_breaks_to_lowest_index() {
        let s = build_scene(&ScenarioTemplate::by_id(1).unwrap(), 1.0, 20.0, 2).unwrap();
        let o = observe(&s.initial_state());
        let b = init_belief(&o, &s, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(b.mode_index(), 0);
        let pred = predict_trajectories(&o, &b, 6, 0.25);
        assert_eq!(pred.paths[0], rollout(&b.particles[0].exo[0], 6, 0.25));
        assert_eq!(pred, predict_trajectories(&o, &b, 6, 0.25));
    }

    proptest::proptest! {
        #[test]
        fn kinematically_feasible(
            x in -20.0f64..20.0, y in -20.0f64..20.0,
            gx in -20.0f64..20.0, gy in -20.0f64..20.0,
            v in 0.0f64..7.0,
        ) {
            let a = AgentState::toward_goal(Vec2::new(x, y), Vec2::new(gx, gy), v);
            let path = rollout(&a, HORIZON, 0.25);
            let mut prev = a.pos;
            for p in path {
                proptest::prop_assert!(p.is_finite());
                proptest::prop_assert!(p.distance(prev) <= v * 0.25 + 1e-9);
                prev = p;
            }
        }
    }
}
