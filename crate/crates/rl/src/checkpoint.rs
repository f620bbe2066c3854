//! Binary checkpointing of the full training state.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "UBRL"
//! version u32      1
//! obs_dim u64, act_dim u64, depth u64, width u64
//! params  u64 count, then count f64 (policy net, then value net)
//! adam_t  u64
//! adam_m  u64 count, then count f64
//! adam_v  u64 count, then count f64
//! norm    u64 dim, f64 count, dim f64 mean, dim f64 m2, f64 clip
//! iteration u64, env_steps u64
//! ```
//!
//! Loading validates the magic, version, and every shape against the
//! receiving trainer, so a checkpoint can never be applied to a
//! mismatched architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::RlError;
use crate::normalizer::RunningNorm;
use crate::policy::Policy;
use crate::ppo::{Adam, Trainer};
use crate::rollout::Environment;

const MAGIC: &[u8; 4] = b"UBRL";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64_slice(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    write_u64(w, v.len() as u64)?;
    for x in v {
        write_f64(w, *x)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64_vec(r: &mut impl Read, limit: u64) -> Result<Vec<f64>, RlError> {
    let n = read_u64(r)?;
    if n > limit {
        return Err(RlError::Checkpoint(format!(
            "implausible array length {n} (limit {limit})"
        )));
    }
    let mut v = Vec::with_capacity(n as usize);
    for _ in 0..n {
        v.push(read_f64(r)?);
    }
    Ok(v)
}

const ARRAY_LIMIT: u64 = 1 << 32;

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub normalizer: RunningNorm,
    pub iteration: u64,
    pub env_steps: u64,
}

/// Serializes the training state to `path`.
#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: &Path,
    policy: &Policy,
    adam: &Adam,
    normalizer: &RunningNorm,
    depth: usize,
    width: usize,
    iteration: u64,
    env_steps: u64,
) -> Result<(), RlError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, policy.obs_dim as u64)?;
    write_u64(&mut w, policy.act_dim as u64)?;
    write_u64(&mut w, depth as u64)?;
    write_u64(&mut w, width as u64)?;
    write_f64_slice(&mut w, &policy.to_flat())?;
    write_u64(&mut w, adam.t)?;
    write_f64_slice(&mut w, &adam.m)?;
    write_f64_slice(&mut w, &adam.v)?;
    write_u64(&mut w, normalizer.dim() as u64)?;
    write_f64(&mut w, normalizer.count)?;
    for x in &normalizer.mean {
        write_f64(&mut w, *x)?;
    }
    for x in &normalizer.m2 {
        write_f64(&mut w, *x)?;
    }
    write_f64(&mut w, normalizer.clip)?;
    write_u64(&mut w, iteration)?;
    write_u64(&mut w, env_steps)?;
    w.flush()?;
    Ok(())
}

/// Reads and validates a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RlError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RlError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(RlError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let obs_dim = read_u64(&mut r)? as usize;
    let act_dim = read_u64(&mut r)? as usize;
    let depth = read_u64(&mut r)? as usize;
    let width = read_u64(&mut r)? as usize;
    let params = read_f64_vec(&mut r, ARRAY_LIMIT)?;
    let adam_t = read_u64(&mut r)?;
    let m = read_f64_vec(&mut r, ARRAY_LIMIT)?;
    let v = read_f64_vec(&mut r, ARRAY_LIMIT)?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(RlError::Checkpoint(format!(
            "optimizer state sizes ({}, {}) do not match parameter count {}",
            m.len(),
            v.len(),
            params.len()
        )));
    }
    let norm_dim = read_u64(&mut r)? as usize;
    if norm_dim != obs_dim {
        return Err(RlError::Checkpoint(format!(
            "normalizer dim {norm_dim} does not match obs dim {obs_dim}"
        )));
    }
    let count = read_f64(&mut r)?;
    let mut mean = Vec::with_capacity(norm_dim);
    for _ in 0..norm_dim {
        mean.push(read_f64(&mut r)?);
    }
    let mut m2 = Vec::with_capacity(norm_dim);
    for _ in 0..norm_dim {
        m2.push(read_f64(&mut r)?);
    }
    let clip = read_f64(&mut r)?;
    let iteration = read_u64(&mut r)?;
    let env_steps = read_u64(&mut r)?;

    let mut adam = Adam::new(params.len());
    adam.t = adam_t;
    adam.m = m;
    adam.v = v;
    Ok(Checkpoint {
        obs_dim,
        act_dim,
        depth,
        width,
        params,
        adam,
        normalizer: RunningNorm {
            count,
            mean,
            m2,
            clip,
        },
        iteration,
        env_steps,
    })
}

impl<E: Environment> Trainer<E> {
    /// Writes the complete training state to `path`.
    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        save_checkpoint(
            path,
            &self.policy,
            &self.adam,
            &self.normalizer,
            self.cfg.depth,
            self.cfg.width,
            self.iteration,
            self.env_steps,
        )
    }

    /// Restores state saved by [`Trainer::save`]. The checkpoint's
    /// architecture must match this trainer's configuration.
    pub fn restore(&mut self, path: &Path) -> Result<(), RlError> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.obs_dim != self.policy.obs_dim || ckpt.act_dim != self.policy.act_dim {
            return Err(RlError::Checkpoint(format!(
                "checkpoint dims ({}, {}) do not match trainer ({}, {})",
                ckpt.obs_dim, ckpt.act_dim, self.policy.obs_dim, self.policy.act_dim
            )));
        }
        if ckpt.depth != self.cfg.depth || ckpt.width != self.cfg.width {
            return Err(RlError::Checkpoint(format!(
                "checkpoint net ({}x{}) does not match config ({}x{})",
                ckpt.depth, ckpt.width, self.cfg.depth, self.cfg.width
            )));
        }
        if ckpt.params.len() != self.policy.num_params() {
            return Err(RlError::Checkpoint(format!(
                "checkpoint has {} parameters, trainer expects {}",
                ckpt.params.len(),
                self.policy.num_params()
            )));
        }
        self.policy.read_flat(&ckpt.params);
        self.adam = ckpt.adam;
        self.normalizer = ckpt.normalizer;
        self.iteration = ckpt.iteration;
        self.env_steps = ckpt.env_steps;
        Ok(())
    }
}
