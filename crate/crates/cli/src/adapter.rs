//! Glue between the simulation environment and the learner's
//! environment interface.

use std::path::Path;

use anyhow::{Context, Result};

use ublocks_rl::rollout::{EnvStep, Environment};
use ublocks_sim::env::Env;
use ublocks_sim::kinematics::KinematicChain;
use ublocks_sim::world::{Blueprint, WorldConfig};

use crate::config::{ExperimentConfig, TaskKind};

/// Builds a simulation environment from an experiment configuration,
/// loading chain and blueprint files when given.
pub fn build_env(cfg: &ExperimentConfig) -> Result<Env> {
    let chain = match &cfg.chain_file {
        Some(path) => load_chain(path)?,
        None => KinematicChain::default_arm(),
    };
    let blueprint = match &cfg.blueprint_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("read blueprint file {}", path.display()))?;
            Blueprint::from_toml(&text)?
        }
        None => Blueprint::default_u_shape(),
    };
    let env = Env::new(
        cfg.env.clone(),
        cfg.actuation.clone(),
        WorldConfig::default(),
        [chain.clone(), chain],
        &blueprint,
    )?;
    Ok(env)
}

fn load_chain(path: &Path) -> Result<KinematicChain> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("read chain file {}", path.display()))?;
    Ok(KinematicChain::from_toml(&text)?)
}

/// Exposes `Env` through the learner's `Environment` trait, applying
/// the task's episode semantics.
///
/// For the full task, success and termination come straight from the
/// environment. For the reach task, the episode ends as soon as an
/// active tool has come within `reach_threshold` of its assigned
/// block, and that latched event is the episode's success signal.
///
/// Simulation contract violations panic; the rollout layer catches a
/// panicked worker, retries the segment deterministically, and reports
/// a fault if it fails again.
pub struct SimEnvAdapter {
    env: Env,
    task: TaskKind,
    reach_threshold: f64,
    reached: bool,
}

impl SimEnvAdapter {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<SimEnvAdapter> {
        Ok(SimEnvAdapter {
            env: build_env(cfg)?,
            task: cfg.task,
            reach_threshold: cfg.reach_threshold,
            reached: false,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut Env {
        &mut self.env
    }
}

impl Environment for SimEnvAdapter {
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.reached = false;
        self.env.reset(seed).expect("environment reset")
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let r = self.env.step(action).expect("environment step");
        match self.task {
            TaskKind::Full => EnvStep {
                observation: r.observation,
                reward: r.reward,
                done: r.done,
                success: r.info.success,
            },
            TaskKind::Reach => {
                if r.info.min_assigned_distance <= self.reach_threshold && !r.info.fault {
                    self.reached = true;
                }
                EnvStep {
                    observation: r.observation,
                    reward: r.reward,
                    done: r.done || self.reached,
                    success: self.reached,
                }
            }
        }
    }
}

/// One adapter per worker, all from the same configuration.
pub fn build_worker_envs(cfg: &ExperimentConfig) -> Result<Vec<SimEnvAdapter>> {
    (0..cfg.train.workers)
        .map(|_| SimEnvAdapter::from_config(cfg))
        .collect()
}
