//! Advantage estimation, the planner-imitation PPO objective and its optimizer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, LearnerError, LstmState, Network};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub reg: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub chunk_len: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            value_coef: 0.5,
            reg: 1e-5,
            gae_lambda: 0.95,
            gamma: 0.98,
            lr: 3e-4,
            minibatch: 32,
            epochs: 4,
            chunk_len: 8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> bool {
        self.clip > 0.0
            && self.value_coef >= 0.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.chunk_len > 0
            && self.minibatch >= self.chunk_len
    }
}

/// Backward-recursion GAE. `values` carries one bootstrap entry at the end.
pub fn gae<T: Real>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    gamma: T,
    lambda: T,
) -> Result<Vec<T>, LearnerError> {
    if values.len() != rewards.len() + 1 || dones.len() != rewards.len() {
        return Err(LearnerError::LengthMismatch { rewards: rewards.len(), values: values.len(), dones: dones.len() });
    }
    let mut adv = vec![T::zero(); rewards.len()];
    let mut next = T::zero();
    for t in (0..rewards.len()).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    Ok(adv)
}

/// One executed step as recorded during a rollout.
#[derive(Clone, Debug)]
pub struct Transition {
    pub image: Vec<f32>,
    pub features: Vec<f32>,
    /// Recurrent state fed into this step.
    pub state: LstmState<f32>,
    pub planner_policy: [f64; 3],
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    /// Value predicted at rollout time.
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub image: Vec<f32>,
    pub features: Vec<T>,
    pub planner_policy: Vec<T>,
    pub action: usize,
    pub reward: T,
    pub done: bool,
    /// Advantage from rollout-time values; fixed during the update.
    pub adv_fixed: T,
}

/// Contiguous run of steps replayed from a stored recurrent state.
#[derive(Clone, Debug)]
pub struct Chunk<T> {
    pub init: LstmState<T>,
    pub steps: Vec<Sample<T>>,
    /// Detached value of the step after the chunk (0 when it ended the episode).
    pub next_value: T,
    /// Detached advantage of the step after the chunk.
    pub next_adv: T,
}

/// Splits one episode buffer into chunks. `bootstrap` is the value of the
/// state reached after the final transition (ignored when it is terminal).
pub fn make_chunks<T: Real>(
    buffer: &[Transition],
    bootstrap: f64,
    cfg: &PpoConfig,
) -> Result<Vec<Chunk<T>>, LearnerError> {
    let rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
    let mut values: Vec<f64> = buffer.iter().map(|t| t.value).collect();
    values.push(bootstrap);
    let dones: Vec<bool> = buffer.iter().map(|t| t.done).collect();
    let adv = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda)?;
    let mut chunks = Vec::new();
    for start in (0..buffer.len()).step_by(cfg.chunk_len) {
        let end = (start + cfg.chunk_len).min(buffer.len());
        let steps = (start..end)
            .map(|i| {
                let t = &buffer[i];
                Sample {
                    image: t.image.clone(),
                    features: t.features.iter().map(|v| T::lit(*v as f64)).collect(),
                    planner_policy: t.planner_policy.iter().map(|v| T::lit(*v)).collect(),
                    action: t.action,
                    reward: T::lit(t.reward),
                    done: t.done,
                    adv_fixed: T::lit(adv[i]),
                }
            })
            .collect();
        let (next_value, next_adv) = if end < buffer.len() { (values[end], adv[end]) } else { (bootstrap, 0.0) };
        chunks.push(Chunk {
            init: buffer[start].state.cast(),
            steps,
            next_value: T::lit(next_value),
            next_adv: T::lit(next_adv),
        });
    }
    Ok(chunks)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    pub policy: T,
    pub value: T,
    pub reg: T,
    pub total: T,
}

/// Clipped surrogate for one sample and its derivative w.r.t. `rho`.
pub fn clipped_surrogate<T: Real>(rho: T, adv: T, eps: T) -> (T, T) {
    let clipped = rho.max(T::one() - eps).min(T::one() + eps);
    let (a, b) = (rho * adv, clipped * adv);
    if a <= b {
        (a, adv)
    } else {
        (b, T::zero())
    }
}

/// `J = -J_π + c·J_V + λ_reg·‖params‖²` over the samples of `chunks`, and its gradient.
pub fn ppo_loss<T: Real>(
    net: &Network<T>,
    chunks: &[&Chunk<T>],
    cfg: &PpoConfig,
) -> Result<(LossParts<T>, Vec<T>), LearnerError> {
    let n_total: usize = chunks.iter().map(|c| c.steps.len()).sum();
    let n = T::lit(n_total.max(1) as f64);
    let (gamma, lambda, eps, coef) =
        (T::lit(cfg.gamma), T::lit(cfg.gae_lambda), T::lit(cfg.clip), T::lit(cfg.value_coef));
    let mut grad = vec![T::zero(); net.num_params()];
    let (mut j_pi, mut j_v) = (T::zero(), T::zero());

    for chunk in chunks {
        let len = chunk.steps.len();
        let mut caches = Vec::with_capacity(len);
        let mut logits = Vec::with_capacity(len);
        let mut values = Vec::with_capacity(len);
        let mut state = chunk.init.clone();
        for s in &chunk.steps {
            let cache = net.trunk_cached(&s.image, &s.features, &state);
            let (l, v) = net.heads(&cache.h, None);
            state = LstmState { h: cache.h.clone(), c: cache.c.clone() };
            caches.push(cache);
            logits.push(l);
            values.push(v);
        }

        // policy term
        let mut dlogits = Vec::with_capacity(len);
        for (s, l) in chunk.steps.iter().zip(&logits) {
            let denom = s.planner_policy[s.action];
            if denom <= T::zero() {
                return Err(LearnerError::DegeneratePolicy);
            }
            let p = softmax(l);
            let rho = p[s.action] / denom;
            let (surr, dsurr) = clipped_surrogate(rho, s.adv_fixed, eps);
            j_pi += surr;
            let g_rho = -dsurr / n;
            dlogits.push(
                (0..p.len())
                    .map(|j| {
                        let ind = if j == s.action { T::one() } else { T::zero() };
                        g_rho * rho * (ind - p[j])
                    })
                    .collect::<Vec<T>>(),
            );
        }

        // value term through the advantage recursion
        let mut adv = vec![T::zero(); len];
        let mut next_adv = chunk.next_adv;
        for t in (0..len).rev() {
            let s = &chunk.steps[t];
            let live = if s.done { T::zero() } else { T::one() };
            let v_next = if t + 1 < len { values[t + 1] } else { chunk.next_value };
            let delta = s.reward + gamma * live * v_next - values[t];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[t] = next_adv;
        }
        let mut dvalues = vec![T::zero(); len];
        let mut carry = T::zero();
        for t in 0..len {
            j_v += adv[t] * adv[t];
            let ga = coef * T::lit(2.0) * adv[t] / n + carry;
            let live = if chunk.steps[t].done { T::zero() } else { T::one() };
            dvalues[t] -= ga;
            if t + 1 < len {
                dvalues[t + 1] += gamma * live * ga;
            }
            carry = gamma * lambda * live * ga;
        }

        let h = net.arch().hidden;
        let mut dh = vec![T::zero(); h];
        let mut dc = vec![T::zero(); h];
        for t in (0..len).rev() {
            net.backward_step(&caches[t], &dlogits[t], dvalues[t], &mut dh, &mut dc, &mut grad);
        }
    }

    let reg_w = T::lit(cfg.reg);
    let mut reg = T::zero();
    for (g, p) in grad.iter_mut().zip(net.params()) {
        reg += *p * *p;
        *g += T::lit(2.0) * reg_w * *p;
    }
    let policy = j_pi / n;
    let value = j_v / n;
    let reg = reg_w * reg;
    let total = -policy + coef * value + reg;
    Ok((LossParts { policy, value, reg, total }, grad))
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Several epochs of minibatch updates over the chunks of one buffer.
pub fn train_update<T: Real>(
    net: &mut Network<T>,
    adam: &mut Adam<T>,
    chunks: &[Chunk<T>],
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats, LearnerError> {
    let per_batch = (cfg.minibatch / cfg.chunk_len).max(1);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for group in order.chunks(per_batch) {
            let batch: Vec<&Chunk<T>> = group.iter().map(|&i| &chunks[i]).collect();
            let (loss, grad) = ppo_loss(net, &batch, cfg)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnerError::NonFiniteLoss);
            }
            if stats.steps == 0 {
                stats.first_loss = loss.total.as_f64();
            }
            stats.last_loss = loss.total.as_f64();
            stats.steps += 1;
            adam.step(net.params_mut(), &grad);
        }
    }
    Ok(stats)
}

/// Mean loss over all chunks, no gradient bookkeeping returned.
pub fn buffer_loss<T: Real>(net: &Network<T>, chunks: &[Chunk<T>], cfg: &PpoConfig) -> Result<T, LearnerError> {
    let all: Vec<&Chunk<T>> = chunks.iter().collect();
    Ok(ppo_loss(net, &all, cfg)?.0.total)
}
