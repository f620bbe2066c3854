//! Tiny closed-form environments for exercising the training stack.

use crate::rollout::{EnvStep, Environment};

/// One-step continuous bandit: the observation is always `[0.0]`, the
/// reward is `-a^2`, and every episode ends immediately. The optimal
/// policy concentrates its action at zero.
#[derive(Debug, Default, Clone)]
pub struct Bandit;

impl Environment for Bandit {
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&mut self, action: &[f64]) -> EnvStep {
        let a = action[0];
        EnvStep {
            observation: vec![0.0],
            reward: -a * a,
            done: true,
            success: a.abs() < 0.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::ppo::Trainer;

    /// The policy mean action must approach the optimum (zero) after a
    /// modest training budget.
    #[test]
    fn bandit_policy_mean_converges_to_zero() {
        let cfg = TrainConfig {
            workers: 2,
            rollout_length: 64,
            minibatch_size: 128,
            epochs: 4,
            depth: 1,
            width: 16,
            learning_rate: 3e-3,
            total_steps: 20_000,
            seed: 17,
            ..TrainConfig::default()
        };
        let envs = vec![Bandit, Bandit];
        let mut trainer = Trainer::new(cfg, envs).unwrap();

        let mean_action = |t: &Trainer<Bandit>| -> f64 {
            let obs = t.normalizer.normalize(&[0.0]);
            let (mean, _, _) = t.policy.forward_one(&obs);
            mean[0].tanh()
        };
        let initial = mean_action(&trainer).abs();
        assert!(initial < 0.2, "mean head init too large: {initial}");

        while trainer.env_steps < trainer.cfg.total_steps as u64 {
            trainer.run_iteration().unwrap();
        }
        let final_mean = mean_action(&trainer).abs();
        assert!(
            final_mean < 0.05,
            "bandit mean action {final_mean} after {} steps",
            trainer.env_steps
        );
        // The sampled-action scale must also have shrunk: check the
        // learned log-std dropped below its initial value.
        let obs = trainer.normalizer.normalize(&[0.0]);
        let (_, log_std, _) = trainer.policy.forward_one(&obs);
        assert!(log_std[0] < 0.0, "log-std {} did not shrink", log_std[0]);
    }
}
