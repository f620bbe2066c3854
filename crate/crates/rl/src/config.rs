use serde::{Deserialize, Serialize};

use crate::error::RlError;

/// Learner and rollout hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE exponential weight.
    pub lambda: f64,
    /// PPO ratio clip.
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    /// Optimization epochs per collected batch.
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Env steps collected per worker per iteration.
    pub rollout_length: usize,
    pub workers: usize,
    /// Total env steps to train for.
    pub total_steps: usize,
    /// Hidden layers in both networks.
    pub depth: usize,
    /// Units per hidden layer.
    pub width: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
    /// Clip applied to normalized observations.
    pub obs_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 1024,
            rollout_length: 512,
            workers: 4,
            total_steps: 1_000_000,
            depth: 2,
            width: 256,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            grad_clip: 0.5,
            obs_clip: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.gamma) || !in_unit(self.lambda) {
            return Err(RlError::Config("gamma and lambda must be in [0, 1]".into()));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err(RlError::Config("clip_epsilon must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(RlError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_length == 0 {
            return Err(RlError::Config(
                "epochs, minibatch_size, rollout_length must be > 0".into(),
            ));
        }
        if self.workers == 0 {
            return Err(RlError::Config("workers must be >= 1".into()));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(RlError::Config("network depth and width must be > 0".into()));
        }
        if !(self.grad_clip > 0.0) || !(self.obs_clip > 0.0) {
            return Err(RlError::Config("grad_clip and obs_clip must be > 0".into()));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(RlError::Config("loss coefficients must be >= 0".into()));
        }
        Ok(())
    }

    /// Env steps per learner iteration.
    pub fn batch_size(&self) -> usize {
        self.workers * self.rollout_length
    }
}
