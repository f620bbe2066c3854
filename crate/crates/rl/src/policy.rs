//! Tanh-squashed diagonal Gaussian policy and value function.
//!
//! The policy network maps an observation to `2 * act_dim` outputs:
//! the first half is the Gaussian mean, the second half the raw
//! log-standard-deviation, clamped to [`LOG_STD_MIN`, `LOG_STD_MAX`]
//! (with zero gradient outside the range). Actions are sampled as
//! `a = tanh(mu + sigma * eps)` so every channel lies in (-1, 1).
//!
//! Log-probabilities use the change-of-variables correction
//! `log(1 - tanh(z)^2) = 2 (ln 2 - z - softplus(-2 z))`, which stays
//! finite for large |z|. The entropy reported for diagnostics and the
//! entropy bonus is the pre-squash Gaussian entropy
//! `sum(log sigma + 0.5 ln(2 pi e))`.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mlp::{BatchCache, Mlp};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)
const LN_2: f64 = core::f64::consts::LN_2;

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable per-dimension log(1 - tanh(z)^2).
pub fn tanh_log_det_term(z: f64) -> f64 {
    2.0 * (LN_2 - z - softplus(-2.0 * z))
}

/// Log-probability of the squashed action whose pre-squash value is
/// `pre`, under the diagonal Gaussian N(mean, exp(log_std)^2).
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], pre: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..mean.len() {
        let sigma = log_std[i].exp();
        let t = (pre[i] - mean[i]) / sigma;
        lp += -0.5 * t * t - log_std[i] - 0.5 * LN_2PI - tanh_log_det_term(pre[i]);
    }
    lp
}

/// Per-dimension partial derivatives of `squashed_log_prob` with the
/// pre-squash action held fixed: (d/d mean, d/d log_std) =
/// (t / sigma, t^2 - 1) where t = (pre - mean) / sigma.
pub fn squashed_log_prob_grads(
    mean: &[f64],
    log_std: &[f64],
    pre: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = mean.len();
    let mut d_mean = vec![0.0; n];
    let mut d_log_std = vec![0.0; n];
    for i in 0..n {
        let sigma = log_std[i].exp();
        let t = (pre[i] - mean[i]) / sigma;
        d_mean[i] = t / sigma;
        d_log_std[i] = t * t - 1.0;
    }
    (d_mean, d_log_std)
}

/// Pre-squash Gaussian entropy: sum(log_std + 0.5 ln(2 pi e)).
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std
        .iter()
        .map(|ls| ls + 0.5 * (LN_2PI + 1.0))
        .sum()
}

/// One sampled action with its pre-squash value and log-probability.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Draws z = mean + sigma * eps, squashes with tanh, and evaluates the
/// squashed log-probability.
pub fn sample_action(mean: &[f64], log_std: &[f64], rng: &mut ChaCha8Rng) -> Sample {
    let n = mean.len();
    let mut pre = vec![0.0; n];
    let mut action = vec![0.0; n];
    for i in 0..n {
        let eps: f64 = StandardNormal.sample(rng);
        pre[i] = mean[i] + log_std[i].exp() * eps;
        action[i] = pre[i].tanh();
    }
    let log_prob = squashed_log_prob(mean, log_std, &pre);
    Sample {
        pre_squash: pre,
        action,
        log_prob,
    }
}

/// Policy and value networks over a shared observation space.
#[derive(Debug, Clone)]
pub struct Policy {
    pub pi: Mlp,
    pub vf: Mlp,
    pub obs_dim: usize,
    pub act_dim: usize,
}

/// Cached forward intermediates plus the raw (pre-clamp) log-std
/// outputs, needed to mask clamped gradients in the backward pass.
pub struct PolicyCache {
    pi: BatchCache,
    vf: BatchCache,
    raw_log_std: Array2<f64>,
}

/// Batched heads: mean and clamped log-std are (batch, act_dim),
/// values are (batch).
pub struct PolicyHeads {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    pub value: Array1<f64>,
}

impl Policy {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        depth: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Policy {
        let hidden = vec![width; depth];
        let mut pi = Mlp::new(obs_dim, &hidden, 2 * act_dim, rng);
        // Shrink the mean head so early actions stay near zero; the
        // raw log-std head is left at Xavier scale (sigma near 1).
        {
            let last = pi.layers.last_mut().expect("nonempty net");
            last.w.slice_mut(s![..act_dim, ..]).mapv_inplace(|v| v * 0.01);
            last.b.slice_mut(s![..act_dim]).mapv_inplace(|v| v * 0.01);
        }
        let vf = Mlp::new(obs_dim, &hidden, 1, rng);
        Policy {
            pi,
            vf,
            obs_dim,
            act_dim,
        }
    }

    /// Single observation: (mean, clamped log-std, value).
    pub fn forward_one(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let raw = self.pi.forward_one(obs);
        let mean = raw[..self.act_dim].to_vec();
        let log_std = raw[self.act_dim..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        let value = self.vf.forward_one(obs)[0];
        (mean, log_std, value)
    }

    pub fn value_one(&self, obs: &[f64]) -> f64 {
        self.vf.forward_one(obs)[0]
    }

    /// Batched forward with caches for the learner.
    pub fn forward_batch(&self, obs: &Array2<f64>) -> (PolicyHeads, PolicyCache) {
        let (pi_out, pi_cache) = self.pi.forward_batch_cached(obs);
        let (vf_out, vf_cache) = self.vf.forward_batch_cached(obs);
        let mean = pi_out.slice(s![.., ..self.act_dim]).to_owned();
        let raw_log_std = pi_out.slice(s![.., self.act_dim..]).to_owned();
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let value = vf_out.column(0).to_owned();
        (
            PolicyHeads {
                mean,
                log_std,
                value,
            },
            PolicyCache {
                pi: pi_cache,
                vf: vf_cache,
                raw_log_std,
            },
        )
    }

    /// Backpropagates loss gradients with respect to the batched heads
    /// into parameter gradients. `d_log_std` is taken with respect to
    /// the clamped log-std; rows whose raw output sits outside the
    /// clamp range receive zero gradient.
    pub fn backward_batch(
        &self,
        cache: &PolicyCache,
        d_mean: &Array2<f64>,
        d_log_std: &Array2<f64>,
        d_value: &Array1<f64>,
        grads_pi: &mut Mlp,
        grads_vf: &mut Mlp,
    ) {
        let batch = d_mean.nrows();
        let mut pi_grad = Array2::zeros((batch, 2 * self.act_dim));
        pi_grad.slice_mut(s![.., ..self.act_dim]).assign(d_mean);
        {
            let mut tail = pi_grad.slice_mut(s![.., self.act_dim..]);
            tail.assign(d_log_std);
            for (g, raw) in tail.iter_mut().zip(cache.raw_log_std.iter()) {
                if *raw <= LOG_STD_MIN || *raw >= LOG_STD_MAX {
                    *g = 0.0;
                }
            }
        }
        self.pi.backward_batch(&cache.pi, &pi_grad, grads_pi);
        let vf_grad = d_value
            .view()
            .insert_axis(ndarray::Axis(1))
            .to_owned();
        self.vf.backward_batch(&cache.vf, &vf_grad, grads_vf);
    }

    pub fn num_params(&self) -> usize {
        self.pi.num_params() + self.vf.num_params()
    }

    /// Policy parameters first, then value parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        let k = self.pi.write_flat(&mut out);
        self.vf.write_flat(&mut out[k..]);
        out
    }

    pub fn read_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.num_params(), "flat parameter length");
        let k = self.pi.read_flat(src);
        self.vf.read_flat(&src[k..]);
    }
}
