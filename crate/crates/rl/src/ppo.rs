//! Clipped-surrogate policy optimization with Adam.
//!
//! The update minimizes, per minibatch of size B,
//!
//! ```text
//! L = -mean(min(rho * A, clip(rho, 1-eps, 1+eps) * A))
//!     + value_coef * mean(0.5 * (V - R)^2)
//!     - entropy_coef * mean(H)
//! ```
//!
//! where rho = exp(log pi(a|s) - log pi_old(a|s)) is evaluated at the
//! stored pre-squash actions and H is the pre-squash Gaussian entropy.
//! The surrogate gradient follows the min branch: -A * rho * d log pi
//! when the unclipped term is active, the same inside the clip band,
//! and zero when the clipped branch is active outside the band.
//!
//! All parameters (policy network then value network) are optimized as
//! one flat vector; gradients are clipped to a global norm before the
//! Adam moments are updated.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::RlError;
use crate::gae::{compute_gae, normalize_advantages};
use crate::normalizer::RunningNorm;
use crate::policy::{gaussian_entropy, squashed_log_prob, squashed_log_prob_grads, Policy};
use crate::rollout::{run_rollouts, Environment, EpisodeStat, RolloutBatch, Trajectory};

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam state size");
        assert_eq!(grad.len(), self.m.len(), "gradient size");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `g` in place so its global norm is at most `max_norm`.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    norm
}

/// Flattened training data for one iteration: normalized observations,
/// stored pre-squash actions, behavior log-probs, normalized
/// advantages, and value targets.
#[derive(Debug)]
pub struct Dataset {
    pub obs: Array2<f64>,
    pub pre_squash: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

/// Runs advantage estimation per trajectory, concatenates in worker
/// order, and normalizes advantages over the whole batch.
pub fn prepare_dataset(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<Dataset, RlError> {
    let total: usize = batch.trajectories.iter().map(|t| t.rewards.len()).sum();
    if total == 0 {
        return Err(RlError::Shape("empty rollout batch".into()));
    }
    let obs_dim = batch.trajectories[0].obs[0].len();
    let act_dim = batch.trajectories[0].actions[0].len();
    let mut obs = Array2::zeros((total, obs_dim));
    let mut pre = Array2::zeros((total, act_dim));
    let mut old_log_probs = Vec::with_capacity(total);
    let mut advantages = Vec::with_capacity(total);
    let mut returns = Vec::with_capacity(total);

    let mut row = 0;
    for traj in &batch.trajectories {
        let (adv, ret) = compute_gae(
            &traj.rewards,
            &traj.values,
            &traj.dones,
            traj.bootstrap,
            gamma,
            lambda,
        )?;
        for t in 0..traj.rewards.len() {
            for (j, v) in traj.obs[t].iter().enumerate() {
                obs[[row, j]] = *v;
            }
            for (j, v) in traj.pre_squash[t].iter().enumerate() {
                pre[[row, j]] = *v;
            }
            old_log_probs.push(traj.log_probs[t]);
            advantages.push(adv[t]);
            returns.push(ret[t]);
            row += 1;
        }
    }
    let advantages = normalize_advantages(&advantages);
    Ok(Dataset {
        obs,
        pre_squash: pre,
        old_log_probs,
        advantages,
        returns,
    })
}

/// Averaged diagnostics over the minibatches of one update.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

fn gather_rows(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), src.ncols()), |(i, j)| src[[idx[i], j]])
}

fn gather(src: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| src[i]).collect()
}

/// Loss and flat gradient (policy params then value params) for one
/// minibatch. Shared by the update loop and by gradient tests.
pub fn loss_and_grads(
    policy: &Policy,
    obs: &Array2<f64>,
    pre_squash: &Array2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>, PpoStats), RlError> {
    let b = obs.nrows();
    if b == 0 {
        return Err(RlError::Shape("empty minibatch".into()));
    }
    let act_dim = policy.act_dim;
    let (heads, cache) = policy.forward_batch(obs);

    let mut d_mean = Array2::zeros((b, act_dim));
    let mut d_log_std = Array2::zeros((b, act_dim));
    let mut d_value = Array1::zeros(b);

    let eps = cfg.clip_epsilon;
    let inv_b = 1.0 / b as f64;
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut clipped = 0usize;
    let mut kl_sum = 0.0;

    for i in 0..b {
        let mean_i = heads.mean.row(i);
        let mean_i = mean_i.as_slice().expect("contiguous row");
        let ls_i = heads.log_std.row(i);
        let ls_i = ls_i.as_slice().expect("contiguous row");
        let pre_i = pre_squash.row(i);
        let pre_i = pre_i.as_slice().expect("contiguous row");

        let logp = squashed_log_prob(mean_i, ls_i, pre_i);
        let log_ratio = logp - old_log_probs[i];
        let rho = log_ratio.exp();
        if !rho.is_finite() {
            return Err(RlError::Fault(format!(
                "non-finite ratio at sample {i}: logp {logp}, old {}",
                old_log_probs[i]
            )));
        }
        let a = advantages[i];
        let rho_clipped = rho.clamp(1.0 - eps, 1.0 + eps);
        let unclipped = rho * a;
        let clipped_term = rho_clipped * a;
        policy_loss -= unclipped.min(clipped_term) * inv_b;
        kl_sum += (rho - 1.0) - log_ratio;
        if (rho - 1.0).abs() > eps {
            clipped += 1;
        }

        // Surrogate gradient coefficient on d log pi.
        let coef = if unclipped <= clipped_term {
            -a * rho
        } else if rho > 1.0 - eps && rho < 1.0 + eps {
            -a * rho
        } else {
            0.0
        };
        let (dl_mean, dl_ls) = squashed_log_prob_grads(mean_i, ls_i, pre_i);
        for j in 0..act_dim {
            d_mean[[i, j]] = coef * dl_mean[j] * inv_b;
            // Entropy bonus: d(-c_e * H)/d log_std_j = -c_e.
            d_log_std[[i, j]] = (coef * dl_ls[j] - cfg.entropy_coef) * inv_b;
        }
        entropy_sum += gaussian_entropy(ls_i);

        let err = heads.value[i] - returns[i];
        value_loss += 0.5 * err * err * inv_b;
        d_value[i] = cfg.value_coef * err * inv_b;
    }

    let entropy = entropy_sum * inv_b;
    let total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(RlError::Fault(format!(
            "non-finite loss: policy {policy_loss}, value {value_loss}, entropy {entropy}"
        )));
    }

    let mut g_pi = policy.pi.zeros_like();
    let mut g_vf = policy.vf.zeros_like();
    policy.backward_batch(&cache, &d_mean, &d_log_std, &d_value, &mut g_pi, &mut g_vf);
    let mut grad = g_pi.to_flat();
    grad.extend_from_slice(&g_vf.to_flat());

    let stats = PpoStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 * inv_b,
        approx_kl: kl_sum * inv_b,
        grad_norm: 0.0,
        minibatches: 1,
    };
    Ok((total, grad, stats))
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over the
/// dataset. Shuffling is seeded from (seed, iteration, epoch), so the
/// update is bitwise reproducible.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    dataset: &Dataset,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<PpoStats, RlError> {
    let n = dataset.len();
    if n == 0 {
        return Err(RlError::Shape("empty dataset".into()));
    }
    let mb_size = cfg.minibatch_size.min(n).max(1);
    let mut flat = policy.to_flat();
    let mut agg = PpoStats::default();
    let mut weight = 0.0;

    for epoch in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rollout::stream_seed(
            cfg.seed,
            iteration,
            epoch as u64,
            3,
        ));
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(mb_size) {
            let obs = gather_rows(&dataset.obs, chunk);
            let pre = gather_rows(&dataset.pre_squash, chunk);
            let old = gather(&dataset.old_log_probs, chunk);
            let adv = gather(&dataset.advantages, chunk);
            let ret = gather(&dataset.returns, chunk);
            let (_, mut grad, stats) =
                loss_and_grads(policy, &obs, &pre, &old, &adv, &ret, cfg)?;
            let norm = clip_global_norm(&mut grad, cfg.grad_clip);
            adam.step(&mut flat, &grad, cfg.learning_rate);
            policy.read_flat(&flat);

            let w = chunk.len() as f64;
            agg.policy_loss += stats.policy_loss * w;
            agg.value_loss += stats.value_loss * w;
            agg.entropy += stats.entropy * w;
            agg.clip_fraction += stats.clip_fraction * w;
            agg.approx_kl += stats.approx_kl * w;
            agg.grad_norm += norm * w;
            agg.minibatches += 1;
            weight += w;
        }
    }

    if flat.iter().any(|v| !v.is_finite()) {
        return Err(RlError::Fault(format!(
            "non-finite parameters after update at iteration {iteration}"
        )));
    }
    agg.policy_loss /= weight;
    agg.value_loss /= weight;
    agg.entropy /= weight;
    agg.clip_fraction /= weight;
    agg.approx_kl /= weight;
    agg.grad_norm /= weight;
    Ok(agg)
}

/// Report for one collect-and-update iteration.
#[derive(Debug)]
pub struct IterationReport {
    pub iteration: u64,
    pub steps: usize,
    pub stats: PpoStats,
    pub episodes: Vec<EpisodeStat>,
    pub failed_workers: Vec<usize>,
}

/// Owns the full training state: policy, optimizer, observation
/// normalizer, environments, and step counters.
pub struct Trainer<E: Environment> {
    pub policy: Policy,
    pub adam: Adam,
    pub normalizer: RunningNorm,
    pub cfg: TrainConfig,
    pub envs: Vec<E>,
    pub iteration: u64,
    pub env_steps: u64,
}

impl<E: Environment> Trainer<E> {
    pub fn new(cfg: TrainConfig, envs: Vec<E>) -> Result<Trainer<E>, RlError> {
        cfg.validate()?;
        if envs.len() != cfg.workers {
            return Err(RlError::Config(format!(
                "expected {} environments, got {}",
                cfg.workers,
                envs.len()
            )));
        }
        let obs_dim = envs[0].obs_dim();
        let act_dim = envs[0].action_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rollout::stream_seed(cfg.seed, 0, 0, 0));
        let policy = Policy::new(obs_dim, act_dim, cfg.depth, cfg.width, &mut rng);
        let adam = Adam::new(policy.num_params());
        let normalizer = RunningNorm::new(obs_dim, cfg.obs_clip);
        Ok(Trainer {
            policy,
            adam,
            normalizer,
            cfg,
            envs,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Collects one batch with the frozen normalizer, folds the new
    /// raw-observation statistics in (worker order), and applies the
    /// clipped-surrogate update.
    pub fn run_iteration(&mut self) -> Result<IterationReport, RlError> {
        let batch = run_rollouts(
            &self.policy,
            &self.normalizer,
            &mut self.envs,
            &self.cfg,
            self.iteration,
        )?;
        let dataset = prepare_dataset(&batch, self.cfg.gamma, self.cfg.lambda)?;
        for traj in &batch.trajectories {
            self.normalizer.merge(&traj.acc)?;
        }
        let stats = ppo_update(
            &mut self.policy,
            &mut self.adam,
            &dataset,
            &self.cfg,
            self.iteration,
        )?;
        let report = IterationReport {
            iteration: self.iteration,
            steps: batch.steps,
            stats,
            episodes: batch.episode_stats,
            failed_workers: batch.failed_workers,
        };
        self.env_steps += batch.steps as u64;
        self.iteration += 1;
        Ok(report)
    }

    /// Trajectories are not retained; this accessor exists for tests
    /// that need one raw batch without an update.
    pub fn collect_only(&mut self) -> Result<Vec<Trajectory>, RlError> {
        let batch = run_rollouts(
            &self.policy,
            &self.normalizer,
            &mut self.envs,
            &self.cfg,
            self.iteration,
        )?;
        Ok(batch.trajectories)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            minibatch_size: 8,
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn random_minibatch(
        policy: &Policy,
        b: usize,
        perturb: f64,
        seed: u64,
    ) -> (Array2<f64>, Array2<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = Array2::from_shape_fn((b, policy.obs_dim), |_| rng.gen_range(-1.0..1.0));
        let pre = Array2::from_shape_fn((b, policy.act_dim), |_| rng.gen_range(-1.5..1.5));
        let mut old = Vec::with_capacity(b);
        for i in 0..b {
            let (mean, ls, _) = policy.forward_one(obs.row(i).as_slice().unwrap());
            let lp = squashed_log_prob(&mean, &ls, pre.row(i).as_slice().unwrap());
            let jitter = if perturb > 0.0 {
                rng.gen_range(-perturb..perturb)
            } else {
                0.0
            };
            old.push(lp + jitter);
        }
        let adv: Vec<f64> = (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ret: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (obs, pre, old, adv, ret)
    }

    #[test]
    fn gradient_matches_finite_differences_over_every_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy = Policy::new(3, 2, 1, 5, &mut rng);
        let cfg = small_cfg();
        let (obs, pre, old, adv, ret) = random_minibatch(&policy, 8, 0.3, 77);

        // Keep every ratio comfortably away from the clip kinks so the
        // loss is differentiable at the test point.
        for i in 0..8 {
            let (mean, ls, _) = policy.forward_one(obs.row(i).as_slice().unwrap());
            let rho =
                (squashed_log_prob(&mean, &ls, pre.row(i).as_slice().unwrap()) - old[i]).exp();
            for kink in [1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon] {
                assert!(
                    (rho - kink).abs() > 1e-3,
                    "sample {i} ratio {rho} too close to a clip kink; reseed the test"
                );
            }
        }

        let (_, grad, _) =
            loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
        let mut flat = policy.to_flat();
        let h = 1e-6;
        let mut worst = 0.0_f64;
        for k in 0..flat.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            policy.read_flat(&flat);
            let (lp, _, _) =
                loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
            flat[k] = orig - h;
            policy.read_flat(&flat);
            let (lm, _, _) =
                loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
            flat[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let diff = (numeric - grad[k]).abs();
            worst = worst.max(diff);
            assert!(
                diff < 1e-4,
                "param {k}: numeric {numeric} vs analytic {}",
                grad[k]
            );
        }
        policy.read_flat(&flat);
        assert!(worst < 1e-4, "worst finite-difference gap {worst}");
    }

    #[test]
    fn identity_ratios_give_zero_kl_and_zero_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = Policy::new(3, 2, 1, 6, &mut rng);
        let cfg = small_cfg();
        let (obs, pre, _, adv, ret) = random_minibatch(&policy, 16, 0.0, 11);
        // Behavior log-probs computed from the current policy itself.
        let mut old = Vec::new();
        for i in 0..16 {
            let (mean, ls, _) = policy.forward_one(obs.row(i).as_slice().unwrap());
            old.push(squashed_log_prob(&mean, &ls, pre.row(i).as_slice().unwrap()));
        }
        let adv = normalize_advantages(&adv);
        let (_, _, stats) =
            loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(stats.approx_kl.abs() < 1e-12, "kl {}", stats.approx_kl);
        // With rho = 1 the surrogate is -mean(adv), which is ~0 after
        // normalization.
        assert!(stats.policy_loss.abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_turn_off_the_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let policy = Policy::new(2, 1, 1, 4, &mut rng);
        let mut cfg = small_cfg();
        cfg.value_coef = 0.0;
        cfg.entropy_coef = 0.0;
        let (obs, pre, old, _, ret) = random_minibatch(&policy, 8, 0.2, 21);
        let adv = vec![0.0; 8];
        let (_, grad, _) =
            loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
        assert_eq!(global_norm(&grad), 0.0);
    }

    #[test]
    fn clipped_samples_outside_the_band_contribute_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy = Policy::new(2, 1, 1, 4, &mut rng);
        let mut cfg = small_cfg();
        cfg.value_coef = 0.0;
        cfg.entropy_coef = 0.0;
        let obs = arr2(&[[0.3, -0.4]]);
        let pre = arr2(&[[0.6]]);
        let (mean, ls, _) = policy.forward_one(obs.row(0).as_slice().unwrap());
        let lp = squashed_log_prob(&mean, &ls, pre.row(0).as_slice().unwrap());
        // Make rho = e^{0.5} ~ 1.65 >> 1 + eps with positive advantage:
        // the min picks the clipped constant branch -> zero gradient.
        let old = vec![lp - 0.5];
        let adv = vec![1.0];
        let ret = vec![0.0];
        let (loss, grad, stats) =
            loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
        assert_eq!(global_norm(&grad), 0.0);
        assert_abs_diff_eq!(loss, -(1.0 + cfg.clip_epsilon), epsilon = 1e-12);
        assert_eq!(stats.clip_fraction, 1.0);

        // Same ratio with negative advantage: the min keeps the
        // unclipped branch, so gradient flows.
        let adv = vec![-1.0];
        let (_, grad, _) =
            loss_and_grads(&policy, &obs, &pre, &old, &adv, &ret, &cfg).unwrap();
        assert!(global_norm(&grad) > 0.0);
    }

    #[test]
    fn global_norm_clipping_caps_the_gradient() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 0.5);
        assert_abs_diff_eq!(norm, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(global_norm(&g), 0.5, epsilon = 1e-12);
        let mut g2 = vec![0.1, 0.2];
        clip_global_norm(&mut g2, 0.5);
        assert_eq!(g2, vec![0.1, 0.2]);
    }

    #[test]
    fn adam_first_step_size_equals_the_learning_rate() {
        let mut adam = Adam::new(1);
        let mut p = vec![1.0];
        adam.step(&mut p, &[1234.5], 0.01);
        // Bias correction makes the first step lr * g / |g|.
        assert_abs_diff_eq!(p[0], 1.0 - 0.01, epsilon = 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = Adam::new(1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = 2.0 * p[0];
            adam.step(&mut p, &[g], 0.05);
        }
        assert!(p[0].abs() < 1e-3, "final {}", p[0]);
    }

    #[test]
    fn update_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let policy = Policy::new(3, 2, 1, 6, &mut rng);
        let cfg = small_cfg();
        let (obs, pre, old, adv, ret) = random_minibatch(&policy, 32, 0.1, 33);
        let dataset = Dataset {
            obs,
            pre_squash: pre,
            old_log_probs: old,
            advantages: normalize_advantages(&adv),
            returns: ret,
        };
        let run = || {
            let mut p = policy.clone();
            let mut adam = Adam::new(p.num_params());
            ppo_update(&mut p, &mut adam, &dataset, &cfg, 4).unwrap();
            p.to_flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn value_function_regresses_toward_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut policy = Policy::new(1, 1, 1, 16, &mut rng);
        let mut adam = Adam::new(policy.num_params());
        let mut cfg = small_cfg();
        cfg.entropy_coef = 0.0;
        cfg.learning_rate = 3e-3;
        cfg.epochs = 8;
        let n = 64;
        let obs = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64 - 0.5);
        let returns: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64 - 0.5) * 2.0).collect();
        let pre = Array2::zeros((n, 1));
        let mut old = Vec::new();
        for i in 0..n {
            let (mean, ls, _) = policy.forward_one(obs.row(i).as_slice().unwrap());
            old.push(squashed_log_prob(&mean, &ls, pre.row(i).as_slice().unwrap()));
        }
        let dataset = Dataset {
            obs,
            pre_squash: pre,
            old_log_probs: old,
            advantages: vec![0.0; n],
            returns,
        };
        let first = ppo_update(&mut policy, &mut adam, &dataset, &cfg, 0).unwrap();
        for it in 1..30 {
            ppo_update(&mut policy, &mut adam, &dataset, &cfg, it).unwrap();
        }
        let last = ppo_update(&mut policy, &mut adam, &dataset, &cfg, 30).unwrap();
        assert!(
            last.value_loss < first.value_loss * 0.2,
            "value loss {} -> {}",
            first.value_loss,
            last.value_loss
        );
    }

    #[test]
    fn non_finite_behavior_log_prob_is_a_fault() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let policy = Policy::new(2, 1, 1, 4, &mut rng);
        let cfg = small_cfg();
        let obs = arr2(&[[0.1, 0.2]]);
        let pre = arr2(&[[0.3]]);
        let err = loss_and_grads(
            &policy,
            &obs,
            &pre,
            &[f64::NEG_INFINITY],
            &[1.0],
            &[0.0],
            &cfg,
        );
        assert!(matches!(err, Err(RlError::Fault(_))));
    }

    #[test]
    fn prepare_dataset_concatenates_and_normalizes() {
        let traj = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = 12;
            Trajectory {
                obs: (0..len).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect(),
                pre_squash: (0..len).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect(),
                actions: (0..len).map(|_| vec![0.0]).collect(),
                log_probs: (0..len).map(|_| rng.gen_range(-2.0..0.0)).collect(),
                rewards: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                values: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                dones: (0..len).map(|t| t == 5).collect(),
                bootstrap: 0.3,
                stats: vec![],
                acc: crate::normalizer::ObsAccumulator::new(1),
            }
        };
        let batch = RolloutBatch {
            trajectories: vec![traj(1), traj(2)],
            episode_stats: vec![],
            steps: 24,
            failed_workers: vec![],
        };
        let ds = prepare_dataset(&batch, 0.99, 0.95).unwrap();
        assert_eq!(ds.len(), 24);
        let mean: f64 = ds.advantages.iter().sum::<f64>() / 24.0;
        let var: f64 = ds.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 24.0;
        assert!(mean.abs() < 1e-9);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-9);
    }
}
