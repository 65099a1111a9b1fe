//! Particle belief over the hidden part of the exo agents' state.
//!
//! Observations are noiseless, so a visible agent's position is known
//! exactly; what stays uncertain is its goal and speed. Occluded agents are
//! additionally uncertain in position and are constrained to stay hidden.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Rect, Vec2};
use crate::scenarios::Scene;
use crate::world::{
    bicycle_step, exo_step, line_of_sight, Action, AgentKind, AgentState, ExoAgent, Observation,
    RewardConfig, WorldState,
};

pub const NUM_PARTICLES: usize = 100;
pub const SIGMA_OBS: f64 = 0.5;
/// Spacing of the candidate grid used to place occluded hypotheses.
const HIDDEN_GRID_STEP: f64 = 0.25;

/// Prior knowledge about one exo agent, taken from the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPrior {
    pub kind: AgentKind,
    pub goal_set: Vec<Vec2>,
    pub speed_range: (f64, f64),
    pub spawn_region: Rect,
}

/// One joint hypothesis over all exo agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub exo: Vec<AgentState>,
    /// Hypothesized cruising speed per agent. Kept separately because an
    /// agent that reached its goal stops and loses its velocity.
    pub speeds: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct Belief {
    pub particles: Vec<Particle>,
    pub ego: AgentState,
    pub t: u32,
    /// Number of degenerate updates that forced a re-initialization.
    pub resets: u32,
    priors: Arc<[AgentPrior]>,
    obstacles: Arc<[Rect]>,
    rng: ChaCha8Rng,
}

/// Positions inside `region` hidden from `eye` by `obstacles`, on a regular grid.
pub fn hidden_points(region: &Rect, eye: Vec2, obstacles: &[Rect]) -> Vec<Vec2> {
    let nx = (region.width() / HIDDEN_GRID_STEP).floor() as usize;
    let ny = (region.height() / HIDDEN_GRID_STEP).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            let p = Vec2::new(
                region.min.x + i as f64 * HIDDEN_GRID_STEP,
                region.min.y + j as f64 * HIDDEN_GRID_STEP,
            );
            let inside_obstacle = obstacles.iter().any(|r| r.contains(p));
            if !inside_obstacle && !line_of_sight(eye, p, obstacles) {
                out.push(p);
            }
        }
    }
    out
}

fn sample_hypothesis(
    prior: &AgentPrior,
    observed: Option<Vec2>,
    hidden: &[Vec2],
    rng: &mut impl Rng,
) -> (AgentState, f64) {
    let goal = prior.goal_set[rng.gen_range(0..prior.goal_set.len())];
    let (lo, hi) = prior.speed_range;
    let speed = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let pos = match observed {
        Some(p) => p,
        None if !hidden.is_empty() => hidden[rng.gen_range(0..hidden.len())],
        None => prior.spawn_region.center(),
    };
    (AgentState::toward_goal(pos, goal, speed), speed)
}

fn hidden_candidates(prior: &AgentPrior, ego: Vec2, obstacles: &[Rect]) -> Vec<Vec2> {
    let mut pts = hidden_points(&prior.spawn_region, ego, obstacles);
    if pts.is_empty() && !obstacles.is_empty() {
        let wide = obstacles
            .iter()
            .fold(prior.spawn_region, |acc, r| acc.union(r))
            .expand(5.0);
        pts = hidden_points(&wide, ego, obstacles);
    }
    if pts.is_empty() {
        log::warn!("no hidden position available for an occluded agent; using its spawn centre");
    }
    pts
}

pub fn init_belief(o0: &Observation, scene: &Scene, rng: &mut impl Rng) -> Belief {
    let priors: Arc<[AgentPrior]> = scene
        .exo
        .iter()
        .map(|a| AgentPrior {
            kind: a.kind,
            goal_set: a.goal_set.clone(),
            speed_range: a.speed_range,
            spawn_region: a.spawn_region,
        })
        .collect();
    let obstacles: Arc<[Rect]> = scene.obstacles.clone().into();
    let hidden: Vec<Vec<Vec2>> = priors
        .iter()
        .zip(&o0.exo_pos)
        .map(|(p, o)| match o {
            Some(_) => Vec::new(),
            None => hidden_candidates(p, o0.ego.pos, &obstacles),
        })
        .collect();
    let w = 1.0 / NUM_PARTICLES as f64;
    let particles = (0..NUM_PARTICLES)
        .map(|_| {
            let (exo, speeds) = priors
                .iter()
                .zip(&o0.exo_pos)
                .zip(&hidden)
                .map(|((p, o), h)| sample_hypothesis(p, *o, h, rng))
                .unzip();
            Particle { exo, speeds, weight: w }
        })
        .collect();
    Belief {
        particles,
        ego: o0.ego,
        t: 0,
        resets: 0,
        priors,
        obstacles,
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
    }
}

impl Belief {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[AgentPrior] {
        &self.priors
    }

    pub fn obstacles(&self) -> &Arc<[Rect]> {
        &self.obstacles
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights())
    }

    /// Highest-weight particle, ties broken by lowest index.
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.weight > self.particles[best].weight {
                best = i;
            }
        }
        best
    }

    pub fn mode(&self) -> &Particle {
        &self.particles[self.mode_index()]
    }

    /// Full world state under particle `i`.
    pub fn world_state(&self, i: usize) -> WorldState {
        let p = &self.particles[i];
        WorldState {
            ego: self.ego,
            exo: self
                .priors
                .iter()
                .zip(&p.exo)
                .map(|(pr, s)| ExoAgent { kind: pr.kind, state: *s })
                .collect(),
            obstacles: Arc::clone(&self.obstacles),
            t: self.t,
        }
    }

    /// Particle indices ordered by decreasing weight, index as tie-break.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.particles[b].weight.total_cmp(&self.particles[a].weight).then(a.cmp(&b))
        });
        idx
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        1.0 / s2
    } else {
        0.0
    }
}

/// Systematic resampling: returns `n` ancestor indices for normalized `weights`.
pub fn systematic_resample(weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let u0: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while i + 1 < weights.len() && cum + weights[i] < u {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

pub fn predict_particles(b: &Belief, a: &Action, cfg: &RewardConfig) -> Belief {
    let mut next = b.clone();
    next.ego = bicycle_step(&b.ego, a, cfg);
    next.t = b.t + 1;
    for p in &mut next.particles {
        for s in &mut p.exo {
            *s = exo_step(s, cfg.dt);
        }
    }
    next
}

fn likelihood(particle_pos: Vec2, obs: Option<Vec2>, ego: Vec2, obstacles: &[Rect]) -> f64 {
    match obs {
        Some(o) => (-(particle_pos - o).norm_sq() / (2.0 * SIGMA_OBS * SIGMA_OBS)).exp(),
        None => {
            if line_of_sight(ego, particle_pos, obstacles) {
                0.0
            } else {
                1.0
            }
        }
    }
}

pub fn update_belief(b: &Belief, o: &Observation) -> Belief {
    let mut next = b.clone();
    next.ego = o.ego;
    let n_agents = next.priors.len();
    let ego = o.ego.pos;

    let mut factors: Vec<Vec<f64>> = next
        .particles
        .iter()
        .map(|p| {
            (0..n_agents)
                .map(|i| likelihood(p.exo[i].pos, o.exo_pos[i], ego, &next.obstacles))
                .collect()
        })
        .collect();

    let joint = |factors: &[Vec<f64>], particles: &[Particle]| -> Vec<f64> {
        particles
            .iter()
            .zip(factors)
            .map(|(p, f)| p.weight * f.iter().product::<f64>())
            .collect()
    };
    let mut w = joint(&factors, &next.particles);

    if w.iter().sum::<f64>() <= 0.0 {
        next.resets += 1;
        log::debug!("belief degenerate at t={}, re-initializing", next.t);
        for i in 0..n_agents {
            let marginal: f64 =
                next.particles.iter().zip(&factors).map(|(p, f)| p.weight * f[i]).sum();
            if marginal > 0.0 {
                continue;
            }
            let prior = next.priors[i].clone();
            let hidden = match o.exo_pos[i] {
                Some(_) => Vec::new(),
                None => hidden_candidates(&prior, ego, &next.obstacles),
            };
            for (p, f) in next.particles.iter_mut().zip(&mut factors) {
                let (s, v) = sample_hypothesis(&prior, o.exo_pos[i], &hidden, &mut next.rng);
                p.exo[i] = s;
                p.speeds[i] = v;
                f[i] = 1.0;
            }
        }
        w = joint(&factors, &next.particles);
        if w.iter().sum::<f64>() <= 0.0 {
            w = vec![1.0; next.particles.len()];
        }
    }

    let total: f64 = w.iter().sum();
    for (p, wi) in next.particles.iter_mut().zip(&w) {
        p.weight = wi / total;
        for i in 0..n_agents {
            if let Some(obs) = o.exo_pos[i] {
                let goal = p.exo[i].goal;
                p.exo[i] = AgentState::toward_goal(obs, goal, p.speeds[i]);
                if obs == goal {
                    p.exo[i].vel = Vec2::ZERO;
                }
            }
        }
    }

    let k = next.particles.len();
    if next.ess() < k as f64 / 2.0 {
        let weights = next.weights();
        let ancestors = systematic_resample(&weights, k, &mut next.rng);
        let uniform = 1.0 / k as f64;
        next.particles = ancestors
            .into_iter()
            .map(|a| Particle { weight: uniform, ..next.particles[a].clone() })
            .collect();
    }
    next
}
