//! Central finite-difference oracle for the tiny network variant.

use hyplan_core::learner::ppo::{make_chunks, ppo_loss, Chunk, PpoConfig, Transition};
use hyplan_core::learner::{ArchConfig, LstmState, Network};
use rand::Rng;

pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-3;
/// Fallback step that separates ReLU/clip crossings from genuine mismatches.
const FINE_STEP: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub entries: usize,
    /// Entries that failed at `STEP` but agree at a finer step: the
    /// perturbation crossed a ReLU or clip boundary.
    pub crossings: usize,
    pub failures: usize,
    pub worst: f64,
}

impl CheckStats {
    pub fn merge(&mut self, o: CheckStats) {
        self.entries += o.entries;
        self.crossings += o.crossings;
        self.failures += o.failures;
        self.worst = self.worst.max(o.worst);
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn central(net: &mut Network<f64>, i: usize, h: f64, f: &dyn Fn(&Network<f64>) -> f64) -> f64 {
    let orig = net.params()[i];
    net.params_mut()[i] = orig + h;
    let up = f(net);
    net.params_mut()[i] = orig - h;
    let down = f(net);
    net.params_mut()[i] = orig;
    (up - down) / (2.0 * h)
}

/// Compares `analytic` with central differences of `f` on every parameter.
pub fn check(net: &mut Network<f64>, analytic: &[f64], f: &dyn Fn(&Network<f64>) -> f64) -> CheckStats {
    let mut st = CheckStats::default();
    for (i, &a) in analytic.iter().enumerate() {
        st.entries += 1;
        let e = rel_err(a, central(net, i, STEP, f));
        if e <= TOL {
            st.worst = st.worst.max(e);
        } else if rel_err(a, central(net, i, FINE_STEP, f)) <= TOL {
            st.crossings += 1;
        } else {
            st.failures += 1;
            st.worst = st.worst.max(e);
        }
    }
    st
}

pub struct Draw {
    pub net: Network<f64>,
    pub image: Vec<f32>,
    pub features: Vec<f64>,
    pub state: LstmState<f64>,
}

pub fn draw(rng: &mut impl Rng) -> Draw {
    let mut net = Network::init(ArchConfig::tiny(), rng);
    // perturb gains/biases away from their initial constants
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let arch = net.arch().clone();
    let image = (0..arch.image_len()).map(|_| rng.gen::<f32>()).collect();
    let features = (0..arch.features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = arch.hidden;
    let state = LstmState {
        h: (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        c: (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    Draw { net, image, features, state }
}

pub fn value_check(d: &mut Draw) -> CheckStats {
    let g = d.net.output_gradient(&d.image, &d.features, &d.state, &[0.0; 3], 1.0).unwrap();
    let (img, x, s) = (d.image.clone(), d.features.clone(), d.state.clone());
    check(&mut d.net, &g, &|n| n.forward(&img, &x, &s, None).unwrap().value)
}

pub fn policy_check(d: &mut Draw, rng: &mut impl Rng) -> CheckStats {
    let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = d.net.output_gradient(&d.image, &d.features, &d.state, &w, 0.0).unwrap();
    let (img, x, s) = (d.image.clone(), d.features.clone(), d.state.clone());
    check(&mut d.net, &g, &|n| {
        let l = n.forward(&img, &x, &s, None).unwrap().logits;
        l.iter().zip(&w).map(|(a, b)| a * b).sum()
    })
}

/// Random episode of `len` steps split into chunks of `chunk_len`.
pub fn random_chunks(d: &Draw, len: usize, chunk_len: usize, rng: &mut impl Rng) -> (Vec<Chunk<f64>>, PpoConfig) {
    let cfg = PpoConfig { chunk_len, minibatch: chunk_len * 4, ..PpoConfig::default() };
    let arch = d.net.arch();
    let buffer: Vec<Transition> = (0..len)
        .map(|t| {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            Transition {
                image: if t == 0 { d.image.clone() } else { (0..arch.image_len()).map(|_| rng.gen::<f32>()).collect() },
                features: (0..arch.features).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                state: d.state.cast(),
                planner_policy: [raw[0] / sum, raw[1] / sum, raw[2] / sum],
                action: rng.gen_range(0..3),
                reward: rng.gen_range(-1.0..1.0),
                done: t + 1 == len && rng.gen_bool(0.5),
                value: rng.gen_range(-1.0..1.0),
            }
        })
        .collect();
    let chunks = make_chunks(&buffer, rng.gen_range(-1.0..1.0), &cfg).unwrap();
    (chunks, cfg)
}

pub fn loss_check(d: &mut Draw, rng: &mut impl Rng) -> CheckStats {
    let (chunks, cfg) = random_chunks(d, 5, 3, rng);
    let refs: Vec<&Chunk<f64>> = chunks.iter().collect();
    let (_, g) = ppo_loss(&d.net, &refs, &cfg).unwrap();
    check(&mut d.net, &g, &|n| ppo_loss(n, &refs, &cfg).unwrap().0.total)
}
