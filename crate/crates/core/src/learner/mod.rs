//! NavPPO actor-critic network.
//!
//! Image → three conv layers (each with layer normalization and ReLU) →
//! dense 128 → concat with the 5 scalar features → LSTM → dropout → policy
//! logits and value. Backpropagation is written out by hand; the same code
//! runs in `f32` for training and `f64` for finite-difference checks.

mod io;
mod layers;
pub mod ppo;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::world::{Acc, RewardConfig};

pub use io::{load_params, save_params, ModelMeta, MODEL_MAGIC, MODEL_VERSION};
use layers::{conv_backward, conv_forward, dot, ConvCache, ConvGeom};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("sequence lengths disagree: {rewards} rewards, {values} values, {dones} terminal flags")]
    LengthMismatch { rewards: usize, values: usize, dones: usize },
    #[error("planner assigned zero probability to the taken action")]
    DegeneratePolicy,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("model file version/architecture mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArchConfig {
    pub image: usize,
    pub channels: usize,
    pub convs: Vec<ConvSpec>,
    pub dense: usize,
    pub features: usize,
    pub hidden: usize,
    pub actions: usize,
    pub dropout: f64,
    /// Constant factor on the value head output so returns in the
    /// thousands are reachable from unit-scale activations.
    pub value_scale: f64,
}

impl ArchConfig {
    pub fn navppo() -> Self {
        ArchConfig {
            image: 84,
            channels: 3,
            convs: vec![
                ConvSpec { out: 16, kernel: 8, stride: 4 },
                ConvSpec { out: 32, kernel: 4, stride: 2 },
                ConvSpec { out: 32, kernel: 3, stride: 1 },
            ],
            dense: 128,
            features: 5,
            hidden: 128,
            actions: 3,
            dropout: 0.2,
            value_scale: 1000.0,
        }
    }

    /// Small variant with the same topology for gradient checks.
    pub fn tiny() -> Self {
        ArchConfig {
            image: 8,
            convs: vec![
                ConvSpec { out: 4, kernel: 3, stride: 1 },
                ConvSpec { out: 4, kernel: 3, stride: 2 },
                ConvSpec { out: 4, kernel: 2, stride: 1 },
            ],
            dense: 8,
            hidden: 6,
            value_scale: 1.0,
            ..ArchConfig::navppo()
        }
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let mut out = Vec::with_capacity(self.convs.len());
        let (mut c, mut s) = (self.channels, self.image);
        for spec in &self.convs {
            let g = ConvGeom { in_c: c, in_hw: s, out_c: spec.out, k: spec.kernel, stride: spec.stride };
            (c, s) = (g.out_c, g.out_hw());
            out.push(g);
        }
        out
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image * self.image
    }

    pub fn flat_dim(&self) -> usize {
        self.geoms().last().map_or(self.image_len(), |g| g.out_c * g.out_hw() * g.out_hw())
    }

    pub fn lstm_input(&self) -> usize {
        self.dense + self.features
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvOffsets {
    w: usize,
    b: usize,
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Offsets {
    conv: Vec<ConvOffsets>,
    dense_w: usize,
    dense_b: usize,
    lstm_wx: usize,
    lstm_wh: usize,
    lstm_b: usize,
    pol_w: usize,
    pol_b: usize,
    val_w: usize,
    val_b: usize,
}

fn layout(arch: &ArchConfig) -> (Vec<TensorInfo>, Offsets) {
    let mut tensors = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| -> usize {
        let offset = tensors.last().map_or(0, |t: &TensorInfo| t.offset + t.len);
        let len = shape.iter().product();
        tensors.push(TensorInfo { name, shape, offset, len });
        offset
    };
    let mut conv = Vec::new();
    for (i, g) in arch.geoms().iter().enumerate() {
        conv.push(ConvOffsets {
            w: add(format!("conv{i}.weight"), vec![g.out_c, g.in_c, g.k, g.k]),
            b: add(format!("conv{i}.bias"), vec![g.out_c]),
            gain: add(format!("norm{i}.gain"), vec![g.out_c]),
            bias: add(format!("norm{i}.bias"), vec![g.out_c]),
        });
    }
    let four_h = 4 * arch.hidden;
    let off = Offsets {
        conv,
        dense_w: add("dense.weight".into(), vec![arch.dense, arch.flat_dim()]),
        dense_b: add("dense.bias".into(), vec![arch.dense]),
        lstm_wx: add("lstm.weight_x".into(), vec![four_h, arch.lstm_input()]),
        lstm_wh: add("lstm.weight_h".into(), vec![four_h, arch.hidden]),
        lstm_b: add("lstm.bias".into(), vec![four_h]),
        pol_w: add("policy.weight".into(), vec![arch.actions, arch.hidden]),
        pol_b: add("policy.bias".into(), vec![arch.actions]),
        val_w: add("value.weight".into(), vec![1, arch.hidden]),
        val_b: add("value.bias".into(), vec![1]),
    };
    (tensors, off)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }

    pub fn cast<U: Real>(&self) -> LstmState<U> {
        let f = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        LstmState { h: f(&self.h), c: f(&self.c) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output<T> {
    pub logits: Vec<T>,
    pub value: T,
    pub state: LstmState<T>,
}

/// Non-visual input `(r_{t-1}/1000, onehot(acc_{t-1}), v_t / v_max)`.
pub fn features<T: Real>(prev_reward: f64, prev_acc: Acc, speed: f64, cfg: &RewardConfig) -> Vec<T> {
    let oh = prev_acc.one_hot();
    [prev_reward / 1000.0, oh[0], oh[1], oh[2], speed / cfg.v_max_ego]
        .iter()
        .map(|v| T::lit(v.clamp(-1.0, 1.0)))
        .collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|l| (*l - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Intermediate values of one trunk pass retained for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct StepCache<T> {
    convs: Vec<ConvCache<T>>,
    flat: Vec<T>,
    dense_out: Vec<T>,
    lstm_in: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    arch: ArchConfig,
    params: Vec<T>,
    tensors: Vec<TensorInfo>,
    off: Offsets,
    geoms: Vec<ConvGeom>,
}

impl<T: Real> Network<T> {
    pub fn zeros(arch: ArchConfig) -> Self {
        let (tensors, off) = layout(&arch);
        let n = tensors.last().map_or(0, |t| t.offset + t.len);
        let geoms = arch.geoms();
        let mut net = Network { arch, params: vec![T::zero(); n], tensors, off, geoms };
        for c in net.off.conv.clone() {
            let out = net.tensor_len(c.gain);
            net.params[c.gain..c.gain + out].fill(T::one());
        }
        net
    }

    /// Scaled uniform initialization; LSTM forget-gate biases start at 1.
    pub fn init(arch: ArchConfig, rng: &mut impl Rng) -> Self {
        let mut net = Network::zeros(arch);
        for t in net.tensors.clone() {
            if t.shape.len() < 2 {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = (3.0 / fan_in as f64).sqrt();
            for p in &mut net.params[t.offset..t.offset + t.len] {
                *p = T::lit(rng.gen_range(-bound..bound));
            }
        }
        let h = net.arch.hidden;
        let b = net.off.lstm_b;
        net.params[b + h..b + 2 * h].fill(T::one());
        net
    }

    fn tensor_len(&self, offset: usize) -> usize {
        self.tensors.iter().find(|t| t.offset == offset).map_or(0, |t| t.len)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
            tensors: self.tensors.clone(),
            off: self.off.clone(),
            geoms: self.geoms.clone(),
        }
    }

    fn check(&self, img: &[f32], x: &[T], s: &LstmState<T>) -> Result<(), LearnerError> {
        let checks = [
            ("image", self.arch.image_len(), img.len()),
            ("features", self.arch.features, x.len()),
            ("lstm h", self.arch.hidden, s.h.len()),
            ("lstm c", self.arch.hidden, s.c.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(LearnerError::ShapeMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    pub(crate) fn trunk_cached(&self, img: &[f32], x: &[T], s: &LstmState<T>) -> StepCache<T> {
        let p = &self.params;
        let mut act: Vec<T> = img.iter().map(|v| T::lit(*v as f64)).collect();
        let mut convs = Vec::with_capacity(self.geoms.len());
        for (g, o) in self.geoms.iter().zip(&self.off.conv) {
            let cache = conv_forward(g, &act, p, o.w, o.b, o.gain, o.bias);
            act = cache.out.clone();
            convs.push(cache);
        }
        let flat = act;
        let (d, f) = (self.arch.dense, flat.len());
        let dense_out: Vec<T> = (0..d)
            .map(|i| {
                let z = dot(&p[self.off.dense_w + i * f..self.off.dense_w + (i + 1) * f], &flat)
                    + p[self.off.dense_b + i];
                z.max(T::zero())
            })
            .collect();
        let mut lstm_in = dense_out.clone();
        lstm_in.extend_from_slice(x);
        let (h, ni) = (self.arch.hidden, lstm_in.len());
        let mut gates = vec![T::zero(); 4 * h];
        for (r, gate) in gates.iter_mut().enumerate() {
            let wx = &p[self.off.lstm_wx + r * ni..self.off.lstm_wx + (r + 1) * ni];
            let wh = &p[self.off.lstm_wh + r * h..self.off.lstm_wh + (r + 1) * h];
            let pre = dot(wx, &lstm_in) + dot(wh, &s.h) + p[self.off.lstm_b + r];
            *gate = if (2 * h..3 * h).contains(&r) { pre.tanh() } else { sigmoid(pre) };
        }
        let mut c = vec![T::zero(); h];
        let mut tanh_c = vec![T::zero(); h];
        let mut hv = vec![T::zero(); h];
        for j in 0..h {
            let (i, fg, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = fg * s.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            hv[j] = o * tanh_c[j];
        }
        StepCache {
            convs,
            flat,
            dense_out,
            lstm_in,
            h_prev: s.h.clone(),
            c_prev: s.c.clone(),
            gates,
            c,
            tanh_c,
            h: hv,
        }
    }

    /// Runs the convolutional and recurrent trunk, returning the new state.
    pub fn trunk(&self, img: &[f32], x: &[T], s: &LstmState<T>) -> Result<LstmState<T>, LearnerError> {
        self.check(img, x, s)?;
        let cache = self.trunk_cached(img, x, s);
        Ok(LstmState { h: cache.h, c: cache.c })
    }

    /// Policy logits and value from a hidden vector, optionally masked.
    pub fn heads(&self, h: &[T], mask: Option<&[T]>) -> (Vec<T>, T) {
        let p = &self.params;
        let hd: Vec<T> = match mask {
            Some(m) => h.iter().zip(m).map(|(a, b)| *a * *b).collect(),
            None => h.to_vec(),
        };
        let n = hd.len();
        let logits = (0..self.arch.actions)
            .map(|a| dot(&p[self.off.pol_w + a * n..self.off.pol_w + (a + 1) * n], &hd) + p[self.off.pol_b + a])
            .collect();
        let raw = dot(&p[self.off.val_w..self.off.val_w + n], &hd) + p[self.off.val_b];
        (logits, raw * T::lit(self.arch.value_scale))
    }

    pub fn forward(
        &self,
        img: &[f32],
        x: &[T],
        s: &LstmState<T>,
        mask: Option<&[T]>,
    ) -> Result<Output<T>, LearnerError> {
        if let Some(m) = mask {
            if m.len() != self.arch.hidden {
                return Err(LearnerError::ShapeMismatch { what: "dropout mask", expected: self.arch.hidden, got: m.len() });
            }
        }
        let state = self.trunk(img, x, s)?;
        let (logits, value) = self.heads(&state.h, mask);
        Ok(Output { logits, value, state })
    }

    /// Inverted-dropout mask: each unit kept with probability `1 - p` and
    /// rescaled by `1 / (1 - p)`.
    pub fn dropout_mask(&self, rng: &mut impl Rng) -> Vec<T> {
        let p = self.arch.dropout;
        let keep = T::lit(1.0 / (1.0 - p));
        (0..self.arch.hidden).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
    }

    /// Mean and unbiased variance of the value over `f` dropout masks. The
    /// trunk runs once; only the heads are re-evaluated per mask.
    pub fn mc_value_stats(&self, h: &[T], f: usize, rng: &mut impl Rng) -> (T, T) {
        assert!(f >= 2, "at least two stochastic passes are required");
        let values: Vec<T> = (0..f).map(|_| self.heads(h, Some(&self.dropout_mask(rng))).1).collect();
        sample_stats(&values)
    }

    pub fn mc_forward_stats(
        &self,
        img: &[f32],
        x: &[T],
        s: &LstmState<T>,
        f: usize,
        rng: &mut impl Rng,
    ) -> Result<(T, T), LearnerError> {
        let state = self.trunk(img, x, s)?;
        Ok(self.mc_value_stats(&state.h, f, rng))
    }

    /// Gradient of `dlogits · logits + dvalue · value` for a single step
    /// without dropout.
    pub fn output_gradient(
        &self,
        img: &[f32],
        x: &[T],
        s: &LstmState<T>,
        dlogits: &[T],
        dvalue: T,
    ) -> Result<Vec<T>, LearnerError> {
        self.check(img, x, s)?;
        if dlogits.len() != self.arch.actions {
            return Err(LearnerError::ShapeMismatch { what: "logit weights", expected: self.arch.actions, got: dlogits.len() });
        }
        let cache = self.trunk_cached(img, x, s);
        let mut grad = vec![T::zero(); self.num_params()];
        let (mut dh, mut dc) = (vec![T::zero(); self.arch.hidden], vec![T::zero(); self.arch.hidden]);
        self.backward_step(&cache, dlogits, dvalue, &mut dh, &mut dc, &mut grad);
        Ok(grad)
    }

    /// Backpropagates one step. `dh`/`dc` carry gradient from later steps and
    /// are replaced with the gradient w.r.t. this step's incoming state.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache<T>,
        dlogits: &[T],
        dvalue: T,
        dh: &mut Vec<T>,
        dc: &mut Vec<T>,
        grad: &mut [T],
    ) {
        let p = &self.params;
        let h = self.arch.hidden;
        let o = &self.off;

        // heads (no dropout during training)
        let mut dh_total = dh.clone();
        for (a, &dl) in dlogits.iter().enumerate() {
            grad[o.pol_b + a] += dl;
            for j in 0..h {
                grad[o.pol_w + a * h + j] += dl * cache.h[j];
                dh_total[j] += dl * p[o.pol_w + a * h + j];
            }
        }
        let dv = dvalue * T::lit(self.arch.value_scale);
        grad[o.val_b] += dv;
        for j in 0..h {
            grad[o.val_w + j] += dv * cache.h[j];
            dh_total[j] += dv * p[o.val_w + j];
        }

        // LSTM cell
        let mut da = vec![T::zero(); 4 * h];
        let mut dc_prev = vec![T::zero(); h];
        let one = T::one();
        for j in 0..h {
            let (i, f, g, og) = (cache.gates[j], cache.gates[h + j], cache.gates[2 * h + j], cache.gates[3 * h + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh_total[j] * tc;
            let dcj = dc[j] + dh_total[j] * og * (one - tc * tc);
            da[j] = dcj * g * i * (one - i);
            da[h + j] = dcj * cache.c_prev[j] * f * (one - f);
            da[2 * h + j] = dcj * i * (one - g * g);
            da[3 * h + j] = d_o * og * (one - og);
            dc_prev[j] = dcj * f;
        }
        let ni = cache.lstm_in.len();
        let mut din = vec![T::zero(); ni];
        let mut dh_prev = vec![T::zero(); h];
        for (r, &dar) in da.iter().enumerate() {
            if dar == T::zero() {
                continue;
            }
            grad[o.lstm_b + r] += dar;
            let wx = o.lstm_wx + r * ni;
            for k in 0..ni {
                grad[wx + k] += dar * cache.lstm_in[k];
                din[k] += dar * p[wx + k];
            }
            let wh = o.lstm_wh + r * h;
            for k in 0..h {
                grad[wh + k] += dar * cache.h_prev[k];
                dh_prev[k] += dar * p[wh + k];
            }
        }
        *dh = dh_prev;
        *dc = dc_prev;

        // dense + ReLU
        let f = cache.flat.len();
        let mut dflat = vec![T::zero(); f];
        for i in 0..self.arch.dense {
            if cache.dense_out[i] <= T::zero() {
                continue;
            }
            let dz = din[i];
            grad[o.dense_b + i] += dz;
            let w = o.dense_w + i * f;
            for k in 0..f {
                grad[w + k] += dz * cache.flat[k];
                dflat[k] += dz * p[w + k];
            }
        }

        // conv stack, last layer first; the image gradient is not needed
        let mut dact = dflat;
        for (li, (g, co)) in self.geoms.iter().zip(&o.conv).enumerate().rev() {
            let need_input = li > 0;
            dact = conv_backward(g, &cache.convs[li], &dact, p, grad, co.w, co.b, co.gain, co.bias, need_input);
        }
    }
}

/// Mean and unbiased variance. Deviations are taken from the first value so
/// that a constant sample gives exactly that value and zero variance.
pub fn sample_stats<T: Real>(values: &[T]) -> (T, T) {
    let n = T::lit(values.len() as f64);
    let v0 = values[0];
    let md = values.iter().map(|v| *v - v0).sum::<T>() / n;
    let var = values.iter().map(|v| (*v - v0 - md) * (*v - v0 - md)).sum::<T>() / (n - T::one());
    (v0 + md, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn parameter_count() {
        let net: Network<f32> = Network::zeros(ArchConfig::navppo());
        let a = ArchConfig::navppo();
        assert_eq!(a.flat_dim(), 1568);
        let conv = (16 * 3 * 64 + 16 * 3) + (32 * 16 * 16 + 32 * 3) + (32 * 32 * 9 + 32 * 3);
        let dense = 128 * 1568 + 128;
        let lstm = 512 * 133 + 512 * 128 + 512;
        let heads = 3 * 128 + 3 + 128 + 1;
        assert_eq!(net.num_params(), conv + dense + lstm + heads);
    }

    #[test]
    fn zero_network_returns_biases() {
        let mut net: Network<f64> = Network::zeros(ArchConfig::tiny());
        let o = net.off.clone();
        net.params[o.pol_b..o.pol_b + 3].copy_from_slice(&[0.5, -1.0, 2.0]);
        net.params[o.val_b] = 3.25;
        let img = vec![0.0f32; net.arch.image_len()];
        let out = net.forward(&img, &[0.0; 5], &LstmState::zeros(6), None).unwrap();
        assert_eq!(out.logits, vec![0.5, -1.0, 2.0]);
        assert_eq!(out.value, 3.25);
    }

    #[test]
    fn deterministic_without_mask() {
        let net: Network<f32> = Network::init(ArchConfig::tiny(), &mut rng());
        let img: Vec<f32> = (0..192).map(|i| (i % 7) as f32 / 7.0).collect();
        let x = [0.1f32, 1.0, 0.0, 0.0, 0.5];
        let s = LstmState::zeros(6);
        assert_eq!(net.forward(&img, &x, &s, None).unwrap(), net.forward(&img, &x, &s, None).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let net: Network<f32> = Network::zeros(ArchConfig::tiny());
        let err = net.forward(&[0.0; 10], &[0.0; 5], &LstmState::zeros(6), None).unwrap_err();
        assert!(matches!(err, LearnerError::ShapeMismatch { what: "image", .. }));
    }

    #[test]
    fn softmax_is_distribution() {
        let p = softmax(&[1000.0f64, -3.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sample_stats_hand_values() {
        assert_eq!(sample_stats(&[1.0f64, 3.0]), (2.0, 2.0));
        assert_eq!(sample_stats(&[0.1f64; 10]), (0.1, 0.0));
    }

    #[test]
    fn dropout_statistics() {
        let net: Network<f64> = Network::init(ArchConfig::tiny(), &mut rng());
        let img: Vec<f32> = (0..192).map(|i| ((i * 13) % 11) as f32 / 11.0).collect();
        let x = [0.0, 0.0, 0.0, 1.0, 0.6];
        let s = LstmState::zeros(6);
        let (mu, var) = net.mc_forward_stats(&img, &x, &s, 10, &mut rng()).unwrap();
        assert!(var > 0.0);
        assert_eq!((mu, var), net.mc_forward_stats(&img, &x, &s, 10, &mut rng()).unwrap());

        let mut arch = ArchConfig::tiny();
        arch.dropout = 0.0;
        let mut plain: Network<f64> = Network::zeros(arch);
        plain.params.copy_from_slice(&net.params);
        let (mu0, var0) = plain.mc_forward_stats(&img, &x, &s, 10, &mut rng()).unwrap();
        assert_eq!(var0, 0.0);
        assert_eq!(mu0, plain.forward(&img, &x, &s, None).unwrap().value);
    }

    #[test]
    fn features_layout() {
        let f: Vec<f64> = features(-200.0, Acc::Decelerate, 4.165, &RewardConfig::default());
        assert_eq!(f, vec![-0.2, 0.0, 1.0, 0.0, 0.5]);
    }
}
