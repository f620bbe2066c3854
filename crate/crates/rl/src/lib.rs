//! PPO with GAE over hand-rolled MLP policy and value networks, plus a
//! deterministic multi-worker rollout collector, an observation
//! normalizer, and versioned binary checkpoints. Environment-agnostic:
//! anything implementing [`rollout::Environment`] can be trained.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gae;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod toy;

pub use config::TrainConfig;
pub use error::RlError;
