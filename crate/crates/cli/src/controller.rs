//! Evaluation controllers: the shared control interface plus the
//! random-action and learned-policy implementations.

use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ublocks_rl::checkpoint::load_checkpoint;
use ublocks_rl::normalizer::RunningNorm;
use ublocks_rl::policy::{sample_action, Policy};
use ublocks_rl::rollout::stream_seed;
use ublocks_sim::env::{Env, StepInfo};

/// Anything that can drive an episode. `begin_episode` receives the
/// reset observation; `act` receives the latest observation and, after
/// the first step, the previous step's info block.
pub trait Controller {
    fn name(&self) -> &'static str;
    fn begin_episode(&mut self, env: &Env, obs: &[f64], seed: u64);
    fn act(&mut self, env: &Env, obs: &[f64], info: Option<&StepInfo>) -> Vec<f64>;
}

/// Uniform actions in [-1, 1), deterministic per (root, episode seed).
pub struct RandomController {
    root: u64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(root: u64) -> RandomController {
        RandomController {
            root,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Controller for RandomController {
    fn name(&self) -> &'static str {
        "random"
    }

    fn begin_episode(&mut self, _env: &Env, _obs: &[f64], seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(stream_seed(self.root, seed, 0, 11));
    }

    fn act(&mut self, env: &Env, _obs: &[f64], _info: Option<&StepInfo>) -> Vec<f64> {
        (0..env.action_dim())
            .map(|_| self.rng.gen_range(-1.0..1.0))
            .collect()
    }
}

/// Runs a trained policy loaded from a checkpoint file. Deterministic
/// mode squashes the mean action; stochastic mode samples as during
/// training.
pub struct PolicyController {
    policy: Policy,
    norm: RunningNorm,
    deterministic: bool,
    root: u64,
    rng: ChaCha8Rng,
}

impl PolicyController {
    pub fn from_checkpoint(
        path: &Path,
        deterministic: bool,
        root: u64,
    ) -> Result<PolicyController> {
        let ck = load_checkpoint(path)
            .with_context(|| format!("load checkpoint {}", path.display()))?;
        let mut policy = Policy::new(
            ck.obs_dim,
            ck.act_dim,
            ck.depth,
            ck.width,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        policy.read_flat(&ck.params);
        Ok(PolicyController {
            policy,
            norm: ck.normalizer,
            deterministic,
            root,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.policy.act_dim
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &'static str {
        "policy"
    }

    fn begin_episode(&mut self, env: &Env, _obs: &[f64], seed: u64) {
        assert_eq!(
            env.obs_dim(),
            self.policy.obs_dim,
            "checkpoint expects {}-dim observations but the environment produces {}",
            self.policy.obs_dim,
            env.obs_dim()
        );
        assert_eq!(
            env.action_dim(),
            self.policy.act_dim,
            "checkpoint expects {}-dim actions but the environment takes {}",
            self.policy.act_dim,
            env.action_dim()
        );
        self.rng = ChaCha8Rng::seed_from_u64(stream_seed(self.root, seed, 0, 12));
    }

    fn act(&mut self, _env: &Env, obs: &[f64], _info: Option<&StepInfo>) -> Vec<f64> {
        let normalized = self.norm.normalize(obs);
        let (mean, log_std, _) = self.policy.forward_one(&normalized);
        if self.deterministic {
            mean.iter().map(|m| m.tanh()).collect()
        } else {
            sample_action(&mean, &log_std, &mut self.rng).action
        }
    }
}
