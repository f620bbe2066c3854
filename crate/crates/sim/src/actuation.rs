use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::{JointVector, DOF};

/// Command-generation settings between the low-rate policy and the
/// high-rate plant.
///
/// Timing model for one control period, in seconds from the instant the
/// new target arrives: commands equal the previous target until
/// `delay + interp_start`, ramp linearly to the new target over
/// `interp_duration`, and hold the new target afterwards. With
/// interpolation disabled the command jumps to the new target as soon as
/// the delay elapses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuationConfig {
    /// Policy rate, Hz.
    pub control_hz: u32,
    /// Command / physics rate, Hz. Must be an integer multiple of
    /// `control_hz`.
    pub command_hz: u32,
    /// Transmission delay before a new target has any effect, seconds.
    pub delay: f64,
    /// Extra hold after the delay before the ramp begins, seconds.
    pub interp_start: f64,
    /// Ramp length, seconds. Zero means a step at the ramp start.
    pub interp_duration: f64,
    /// When false, commands step from previous to new target after the
    /// delay (zero-order hold).
    pub interp_enabled: bool,
    /// First-order tracking rate of the position servo, 1/s. `None`
    /// means the plant follows commands instantaneously.
    pub plant_rate: Option<f64>,
}

impl Default for ActuationConfig {
    fn default() -> Self {
        ActuationConfig {
            control_hz: 4,
            command_hz: 100,
            delay: 0.05,
            interp_start: 0.0,
            interp_duration: 0.15,
            interp_enabled: true,
            plant_rate: Some(40.0),
        }
    }
}

impl ActuationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.control_hz == 0 || self.command_hz == 0 {
            return Err(SimError::config("rates must be positive"));
        }
        if self.command_hz % self.control_hz != 0 {
            return Err(SimError::config(format!(
                "command_hz ({}) must be an integer multiple of control_hz ({})",
                self.command_hz, self.control_hz
            )));
        }
        if self.delay < 0.0 || self.interp_start < 0.0 || self.interp_duration < 0.0 {
            return Err(SimError::config("delay and interpolation times must be >= 0"));
        }
        let period = 1.0 / self.control_hz as f64;
        // The full hold + ramp must fit inside one control period so a
        // command sequence always ends at the new target; this keeps
        // consecutive periods consistent (each period starts from the
        // target the previous one finished at).
        if self.delay + self.interp_start + self.interp_duration > period + 1e-9 {
            return Err(SimError::config(format!(
                "delay + interp_start + interp_duration ({:.4} s) exceeds the control period ({period} s)",
                self.delay + self.interp_start + self.interp_duration
            )));
        }
        if let Some(rate) = self.plant_rate {
            if !(rate > 0.0) {
                return Err(SimError::config("plant_rate must be > 0"));
            }
        }
        Ok(())
    }

    /// Commands emitted per control period.
    pub fn steps_per_control(&self) -> usize {
        (self.command_hz / self.control_hz) as usize
    }

    /// Physics/command tick length, seconds.
    pub fn command_dt(&self) -> f64 {
        1.0 / self.command_hz as f64
    }

    /// Control period, seconds.
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }

    /// Where command tick `k` (1-based; the command active during
    /// (k-1, k] ticks of the period) falls in the hold/ramp/new split.
    /// Boundaries are evaluated in tick units so the split is exact.
    fn phase(&self, k: usize) -> CommandPhase {
        let hz = self.command_hz as f64;
        let t = k as f64;
        if !self.interp_enabled {
            let delay_ticks = self.delay * hz;
            return if t <= delay_ticks + 1e-9 {
                CommandPhase::Previous
            } else {
                CommandPhase::New
            };
        }
        let start = (self.delay + self.interp_start) * hz;
        let end = start + self.interp_duration * hz;
        if t <= start + 1e-9 {
            CommandPhase::Previous
        } else if t >= end - 1e-9 {
            CommandPhase::New
        } else {
            CommandPhase::Ramp((t - start) / (end - start))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CommandPhase {
    Previous,
    Ramp(f64),
    New,
}

/// Expands one control-period target change into the per-tick position
/// commands sent to the plant.
pub fn plan_command_sequence(
    prev_target: &JointVector,
    new_target: &JointVector,
    cfg: &ActuationConfig,
) -> Vec<JointVector> {
    let n = cfg.steps_per_control();
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        match cfg.phase(k) {
            CommandPhase::Previous => out.push(*prev_target),
            CommandPhase::New => out.push(*new_target),
            CommandPhase::Ramp(frac) => {
                let mut cmd = [0.0; DOF];
                for i in 0..DOF {
                    cmd[i] = prev_target[i] + frac * (new_target[i] - prev_target[i]);
                }
                out.push(cmd);
            }
        }
    }
    out
}

/// Scalar version of `plan_command_sequence`, used for the gripper width
/// channel.
pub fn plan_command_sequence_scalar(
    prev_target: f64,
    new_target: f64,
    cfg: &ActuationConfig,
) -> Vec<f64> {
    let n = cfg.steps_per_control();
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        match cfg.phase(k) {
            CommandPhase::Previous => out.push(prev_target),
            CommandPhase::New => out.push(new_target),
            CommandPhase::Ramp(frac) => out.push(prev_target + frac * (new_target - prev_target)),
        }
    }
    out
}

/// Advances the first-order position plant by one command tick:
/// q' = q + (1 - exp(-rate * dt)) * (cmd - q). Instantaneous mode sets
/// q' = cmd exactly.
pub fn step_plant(q_actual: &JointVector, q_cmd: &JointVector, cfg: &ActuationConfig, dt: f64) -> JointVector {
    match cfg.plant_rate {
        None => *q_cmd,
        Some(rate) => {
            let alpha = 1.0 - (-rate * dt).exp();
            let mut out = [0.0; DOF];
            for i in 0..DOF {
                out[i] = q_actual[i] + alpha * (q_cmd[i] - q_actual[i]);
            }
            out
        }
    }
}

/// Scalar version of `step_plant` for the gripper width channel.
pub fn step_plant_scalar(actual: f64, cmd: f64, cfg: &ActuationConfig, dt: f64) -> f64 {
    match cfg.plant_rate {
        None => cmd,
        Some(rate) => {
            let alpha = 1.0 - (-rate * dt).exp();
            actual + alpha * (cmd - actual)
        }
    }
}
