//! Experiment configuration: one TOML file describing the environment,
//! the learner, the actuation pipeline, and the run layout, with
//! dotted-path command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ublocks_rl::TrainConfig;
use ublocks_sim::actuation::ActuationConfig;
use ublocks_sim::env::config::EnvConfig;

/// Which objective the environment adapter exposes to the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Three-block assembly; success is the full structure.
    Full,
    /// Single-arm reaching; success is bringing the tool within
    /// `reach_threshold` of its assigned block.
    Reach,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub actuation: ActuationConfig,
    /// Optional kinematic-chain TOML used for both arms; the built-in
    /// arm is used when absent.
    pub chain_file: Option<PathBuf>,
    /// Optional blueprint TOML describing blocks and desired
    /// connections; the built-in U-shape is used when absent.
    pub blueprint_file: Option<PathBuf>,
    /// Run directory root.
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    pub task: TaskKind,
    /// Tool-to-block distance that counts as a successful reach, m.
    pub reach_threshold: f64,
    /// Evaluate with the deterministic policy mean (tanh(mu)) instead
    /// of sampling.
    pub eval_deterministic: bool,
    /// Save a numbered checkpoint every this many iterations (the
    /// rolling `ckpt_latest.bin` is refreshed every iteration batch).
    pub checkpoint_every: u64,
    /// Number of leading evaluation episodes recorded as replay logs.
    pub trace_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            actuation: ActuationConfig::default(),
            chain_file: None,
            blueprint_file: None,
            out_dir: PathBuf::from("runs"),
            eval_episodes: 40,
            task: TaskKind::Full,
            reach_threshold: 0.05,
            eval_deterministic: true,
            checkpoint_every: 10,
            trace_episodes: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate().context("env config")?;
        self.train.validate().context("train config")?;
        self.actuation.validate().context("actuation config")?;
        if self.eval_episodes == 0 {
            bail!("eval_episodes must be at least 1");
        }
        if !(self.reach_threshold > 0.0) {
            bail!("reach_threshold must be positive");
        }
        if self.checkpoint_every == 0 {
            bail!("checkpoint_every must be at least 1");
        }
        Ok(())
    }

    /// The fully-materialized TOML for this configuration (every
    /// default spelled out), written into each run directory.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serialize resolved config")
    }
}

/// Parses `key=value`. The value is interpreted as a TOML literal
/// (numbers, booleans, strings, arrays); bare words fall back to
/// strings.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override '{spec}' is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        bail!("override '{spec}' has an empty key");
    }
    let value = parse_toml_literal(raw)?;
    Ok((key.to_string(), value))
}

fn parse_toml_literal(raw: &str) -> Result<toml::Value> {
    let wrapped = format!("v = {raw}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return Ok(v.clone());
        }
    }
    // Bare word: treat as a string.
    Ok(toml::Value::String(raw.to_string()))
}

/// Sets `doc[path...] = value`, creating intermediate tables. Dotted
/// paths address nested fields, e.g. `env.force_limit_block_floor`.
pub fn apply_override(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key '{key}' has an empty path segment");
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override key '{key}': '{part}' is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads a config file, applies overrides in order, validates, and
/// returns the typed configuration.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("read config file {}", path.display()))?;
    let mut doc: toml::Table = text
        .parse()
        .with_context(|| format!("parse config file {}", path.display()))?;
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut doc, &key, value)?;
    }
    config_from_table(doc)
}

/// Builds a config from an already-parsed table plus overrides; used
/// by sweeps, which share one base document across cells.
pub fn config_from_overridden(base: &toml::Table, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc = base.clone();
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut doc, &key, value)?;
    }
    config_from_table(doc)
}

fn config_from_table(doc: toml::Table) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::Value::Table(doc)
        .try_into()
        .context("interpret configuration")?;
    cfg.validate()?;
    Ok(cfg)
}
