//! Parallel experience collection.
//!
//! Each worker owns one environment and collects a fixed-length
//! segment per iteration. All randomness is derived from
//! (root seed, worker index, iteration), never from thread timing, so
//! a rollout is bitwise reproducible regardless of scheduling, and a
//! panicked worker's segment can be re-collected on the main thread
//! with identical results.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::RlError;
use crate::normalizer::{ObsAccumulator, RunningNorm};
use crate::policy::{sample_action, Policy};

/// One environment transition as seen by the learner.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Minimal environment interface for training. `reset(seed)` must
/// fully restore the environment to a deterministic initial state.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> EnvStep;
}

impl<T: Environment + ?Sized> Environment for Box<T> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> EnvStep {
        (**self).step(action)
    }
}

/// Summary of one completed episode.
#[derive(Debug, Clone)]
pub struct EpisodeStat {
    pub ret: f64,
    pub len: usize,
    pub success: bool,
}

/// One worker's fixed-length segment. Observations are stored already
/// normalized (the learner consumes them as-is); `bootstrap` is the
/// value estimate of the observation following the final step, zero if
/// that step terminated.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub obs: Vec<Vec<f64>>,
    pub pre_squash: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap: f64,
    pub stats: Vec<EpisodeStat>,
    pub acc: ObsAccumulator,
}

/// All workers' segments for one iteration, in worker order.
#[derive(Debug)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub episode_stats: Vec<EpisodeStat>,
    pub steps: usize,
    pub failed_workers: Vec<usize>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic stream seed for (root, worker, iteration, salt).
pub fn stream_seed(root: u64, worker: u64, iteration: u64, salt: u64) -> u64 {
    let mut h = splitmix64(root ^ 0x5851_F42D_4C95_7F2D);
    for v in [worker, iteration, salt] {
        h = splitmix64(h ^ splitmix64(v));
    }
    h
}

fn collect_one<E: Environment>(
    policy: &Policy,
    normalizer: &RunningNorm,
    env: &mut E,
    root_seed: u64,
    worker: usize,
    iteration: u64,
    horizon: usize,
) -> Trajectory {
    let w = worker as u64;
    let mut action_rng = ChaCha8Rng::seed_from_u64(stream_seed(root_seed, w, iteration, 1));
    let mut episode = 0u64;
    let mut obs_raw = env.reset(stream_seed(root_seed, w, iteration, 2 + episode));
    let mut acc = ObsAccumulator::new(policy.obs_dim);

    let mut traj = Trajectory {
        obs: Vec::with_capacity(horizon),
        pre_squash: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        dones: Vec::with_capacity(horizon),
        bootstrap: 0.0,
        stats: Vec::new(),
        acc: ObsAccumulator::new(0), // replaced below
    };

    let mut ep_return = 0.0;
    let mut ep_len = 0usize;
    let mut last_done = false;

    for _ in 0..horizon {
        acc.push(&obs_raw);
        let obs_n = normalizer.normalize(&obs_raw);
        let (mean, log_std, value) = policy.forward_one(&obs_n);
        let sample = sample_action(&mean, &log_std, &mut action_rng);
        let step = env.step(&sample.action);

        traj.obs.push(obs_n);
        traj.pre_squash.push(sample.pre_squash);
        traj.actions.push(sample.action);
        traj.log_probs.push(sample.log_prob);
        traj.rewards.push(step.reward);
        traj.values.push(value);
        traj.dones.push(step.done);

        ep_return += step.reward;
        ep_len += 1;
        last_done = step.done;

        if step.done {
            traj.stats.push(EpisodeStat {
                ret: ep_return,
                len: ep_len,
                success: step.success,
            });
            ep_return = 0.0;
            ep_len = 0;
            episode += 1;
            obs_raw = env.reset(stream_seed(root_seed, w, iteration, 2 + episode));
        } else {
            obs_raw = step.observation;
        }
    }

    traj.bootstrap = if last_done {
        0.0
    } else {
        policy.value_one(&normalizer.normalize(&obs_raw))
    };
    traj.acc = acc;
    traj
}

/// Collects one segment per worker. The normalizer is frozen for the
/// whole call; merge the returned accumulators afterwards. A worker
/// whose thread panics is recorded in `failed_workers` and its segment
/// is re-collected on the calling thread from the same seeds, so the
/// returned batch is identical to one collected without the failure.
pub fn run_rollouts<E: Environment>(
    policy: &Policy,
    normalizer: &RunningNorm,
    envs: &mut [E],
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<RolloutBatch, RlError> {
    if envs.len() != cfg.workers {
        return Err(RlError::Config(format!(
            "expected {} environments, got {}",
            cfg.workers,
            envs.len()
        )));
    }
    if normalizer.dim() != policy.obs_dim {
        return Err(RlError::Shape(format!(
            "normalizer dim {} vs policy obs dim {}",
            normalizer.dim(),
            policy.obs_dim
        )));
    }
    for (w, env) in envs.iter().enumerate() {
        if env.obs_dim() != policy.obs_dim || env.action_dim() != policy.act_dim {
            return Err(RlError::Shape(format!(
                "worker {w}: env dims ({}, {}) vs policy ({}, {})",
                env.obs_dim(),
                env.action_dim(),
                policy.obs_dim,
                policy.act_dim
            )));
        }
    }

    let horizon = cfg.rollout_length;
    let root = cfg.seed;
    let n = envs.len();
    let mut slots: Vec<Option<Trajectory>> = Vec::with_capacity(n);

    if n == 1 {
        slots.push(Some(collect_one(
            policy, normalizer, &mut envs[0], root, 0, iteration, horizon,
        )));
    } else {
        let outcomes: Vec<Option<Trajectory>> = std::thread::scope(|scope| {
            let handles: Vec<_> = envs
                .iter_mut()
                .enumerate()
                .map(|(w, env)| {
                    scope.spawn(move || {
                        catch_unwind(AssertUnwindSafe(|| {
                            collect_one(policy, normalizer, env, root, w, iteration, horizon)
                        }))
                        .ok()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().ok().flatten())
                .collect()
        });
        slots = outcomes;
    }

    let mut failed_workers = Vec::new();
    for w in 0..n {
        if slots[w].is_none() {
            failed_workers.push(w);
            let retry = catch_unwind(AssertUnwindSafe(|| {
                collect_one(policy, normalizer, &mut envs[w], root, w, iteration, horizon)
            }));
            match retry {
                Ok(traj) => slots[w] = Some(traj),
                Err(_) => {
                    return Err(RlError::Fault(format!(
                        "worker {w} failed twice during iteration {iteration}"
                    )))
                }
            }
        }
    }

    let trajectories: Vec<Trajectory> = slots.into_iter().map(|s| s.expect("filled")).collect();
    let episode_stats = trajectories
        .iter()
        .flat_map(|t| t.stats.iter().cloned())
        .collect();
    Ok(RolloutBatch {
        steps: n * horizon,
        episode_stats,
        trajectories,
        failed_workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;

    /// One-dimensional integrator: pos += 0.1 * a, reward = -pos^2,
    /// fixed horizon of 17 steps, "success" when |pos| < 0.05 at the
    /// terminal step. Fully determined by the reset seed and actions.
    struct LineEnv {
        pos: f64,
        t: usize,
    }

    impl LineEnv {
        fn new() -> LineEnv {
            LineEnv { pos: 0.0, t: 0 }
        }
    }

    impl Environment for LineEnv {
        fn obs_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn reset(&mut self, seed: u64) -> Vec<f64> {
            self.pos = ((seed % 1000) as f64) / 1000.0 - 0.5;
            self.t = 0;
            vec![self.pos]
        }
        fn step(&mut self, action: &[f64]) -> EnvStep {
            self.pos += 0.1 * action[0];
            self.t += 1;
            let done = self.t >= 17;
            EnvStep {
                observation: vec![self.pos],
                reward: -self.pos * self.pos,
                done,
                success: done && self.pos.abs() < 0.05,
            }
        }
    }

    /// Panics on its first `step` while the flag is armed; identical
    /// to `LineEnv` otherwise.
    struct FlakyEnv {
        inner: LineEnv,
        fail_once: Arc<AtomicBool>,
    }

    impl Environment for FlakyEnv {
        fn obs_dim(&self) -> usize {
            self.inner.obs_dim()
        }
        fn action_dim(&self) -> usize {
            self.inner.action_dim()
        }
        fn reset(&mut self, seed: u64) -> Vec<f64> {
            self.inner.reset(seed)
        }
        fn step(&mut self, action: &[f64]) -> EnvStep {
            if self.fail_once.swap(false, Ordering::SeqCst) {
                panic!("injected worker failure");
            }
            self.inner.step(action)
        }
    }

    fn test_policy() -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Policy::new(1, 1, 1, 8, &mut rng)
    }

    fn test_cfg(workers: usize, horizon: usize) -> TrainConfig {
        TrainConfig {
            workers,
            rollout_length: horizon,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn assert_batches_equal(a: &RolloutBatch, b: &RolloutBatch) {
        assert_eq!(a.trajectories.len(), b.trajectories.len());
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.obs, tb.obs);
            assert_eq!(ta.pre_squash, tb.pre_squash);
            assert_eq!(ta.actions, tb.actions);
            assert_eq!(ta.log_probs, tb.log_probs);
            assert_eq!(ta.rewards, tb.rewards);
            assert_eq!(ta.values, tb.values);
            assert_eq!(ta.dones, tb.dones);
            assert_eq!(ta.bootstrap, tb.bootstrap);
            assert_eq!(ta.acc.count, tb.acc.count);
            assert_eq!(ta.acc.sum, tb.acc.sum);
        }
    }

    #[test]
    fn rollouts_are_bitwise_reproducible() {
        let policy = test_policy();
        let norm = RunningNorm::new(1, 10.0);
        let cfg = test_cfg(3, 40);
        let mut envs1: Vec<LineEnv> = (0..3).map(|_| LineEnv::new()).collect();
        let mut envs2: Vec<LineEnv> = (0..3).map(|_| LineEnv::new()).collect();
        let b1 = run_rollouts(&policy, &norm, &mut envs1, &cfg, 7).unwrap();
        let b2 = run_rollouts(&policy, &norm, &mut envs2, &cfg, 7).unwrap();
        assert_batches_equal(&b1, &b2);
        // Workers see different streams.
        assert_ne!(b1.trajectories[0].actions, b1.trajectories[1].actions);
        // Iterations see different streams.
        let mut envs3: Vec<LineEnv> = (0..3).map(|_| LineEnv::new()).collect();
        let b3 = run_rollouts(&policy, &norm, &mut envs3, &cfg, 8).unwrap();
        assert_ne!(b1.trajectories[0].actions, b3.trajectories[0].actions);
    }

    #[test]
    fn accounting_matches_the_fixed_horizon() {
        let policy = test_policy();
        let norm = RunningNorm::new(1, 10.0);
        let cfg = test_cfg(2, 40);
        let mut envs: Vec<LineEnv> = (0..2).map(|_| LineEnv::new()).collect();
        let batch = run_rollouts(&policy, &norm, &mut envs, &cfg, 0).unwrap();
        assert_eq!(batch.steps, 80);
        assert!(batch.failed_workers.is_empty());
        for traj in &batch.trajectories {
            assert_eq!(traj.obs.len(), 40);
            assert_eq!(traj.rewards.len(), 40);
            // Episodes end every 17 steps: dones at indices 16 and 33.
            for (t, done) in traj.dones.iter().enumerate() {
                assert_eq!(*done, t == 16 || t == 33, "step {t}");
            }
            assert_eq!(traj.stats.len(), 2);
            for stat in &traj.stats {
                assert_eq!(stat.len, 17);
            }
            // Final step is mid-episode, so a bootstrap value exists.
            assert!(!traj.dones[39]);
            assert_eq!(traj.acc.count, 40.0);
        }
        let total: usize = batch.trajectories.iter().map(|t| t.stats.len()).sum();
        assert_eq!(batch.episode_stats.len(), total);
    }

    #[test]
    fn episode_returns_sum_the_rewards() {
        let policy = test_policy();
        let norm = RunningNorm::new(1, 10.0);
        let cfg = test_cfg(1, 60);
        let mut envs = vec![LineEnv::new()];
        let batch = run_rollouts(&policy, &norm, &mut envs, &cfg, 3).unwrap();
        let traj = &batch.trajectories[0];
        let first: f64 = traj.rewards[..17].iter().sum();
        assert!((traj.stats[0].ret - first).abs() < 1e-12);
        let second: f64 = traj.rewards[17..34].iter().sum();
        assert!((traj.stats[1].ret - second).abs() < 1e-12);
    }

    #[test]
    fn failed_worker_segment_is_recollected_identically() {
        let policy = test_policy();
        let norm = RunningNorm::new(1, 10.0);
        let cfg = test_cfg(3, 25);

        let mut clean: Vec<FlakyEnv> = (0..3)
            .map(|_| FlakyEnv {
                inner: LineEnv::new(),
                fail_once: Arc::new(AtomicBool::new(false)),
            })
            .collect();
        let reference = run_rollouts(&policy, &norm, &mut clean, &cfg, 11).unwrap();
        assert!(reference.failed_workers.is_empty());

        let mut flaky: Vec<FlakyEnv> = (0..3)
            .map(|w| FlakyEnv {
                inner: LineEnv::new(),
                fail_once: Arc::new(AtomicBool::new(w == 1)),
            })
            .collect();
        let batch = run_rollouts(&policy, &norm, &mut flaky, &cfg, 11).unwrap();
        assert_eq!(batch.failed_workers, vec![1]);
        assert_batches_equal(&reference, &batch);
    }

    #[test]
    fn frozen_normalizer_statistics_are_applied() {
        let policy = test_policy();
        let mut norm = RunningNorm::new(1, 10.0);
        let mut acc = ObsAccumulator::new(1);
        for k in 0..100 {
            acc.push(&[(k % 2) as f64]); // mean 0.5
        }
        norm.merge(&acc).unwrap();
        let cfg = test_cfg(1, 5);
        let mut envs = vec![LineEnv::new()];
        let batch = run_rollouts(&policy, &norm, &mut envs, &cfg, 0).unwrap();
        let mut probe = LineEnv::new();
        let raw0 = probe.reset(stream_seed(cfg.seed, 0, 0, 2));
        let expected = norm.normalize(&raw0);
        assert_eq!(batch.trajectories[0].obs[0], expected);
        // The rollout must not have mutated the normalizer's stats.
        assert_eq!(norm.count, 100.0);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let policy = test_policy();
        let norm = RunningNorm::new(2, 10.0);
        let cfg = test_cfg(1, 5);
        let mut envs = vec![LineEnv::new()];
        assert!(run_rollouts(&policy, &norm, &mut envs, &cfg, 0).is_err());

        let norm = RunningNorm::new(1, 10.0);
        let bad_cfg = test_cfg(2, 5);
        assert!(run_rollouts(&policy, &norm, &mut envs, &bad_cfg, 0).is_err());
    }
}
