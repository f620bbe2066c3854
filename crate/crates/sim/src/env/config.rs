use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::JointVector;

/// Reward term weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub grasp: f64,
    pub match_pos: f64,
    pub match_rot: f64,
    pub force: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            grasp: 1.0,
            match_pos: 2.0,
            match_rot: 0.5,
            force: 1.0,
        }
    }
}

/// Which arms the policy controls. The inactive arm holds its initial
/// pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    Both,
    LeftOnly,
}

/// Form of the magnet-orientation reward term. The `Aligned` form
/// penalizes the angle between each desired site-normal pair and exact
/// anti-alignment, reaching zero when the faces point at each other.
/// The `Legacy` form, -w * sum(1 - arccos(n_a . n_b)), is an earlier
/// variant kept selectable for comparison; it differs from `Aligned`
/// only by a constant offset per pair and does not vanish at the
/// assembled pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationRewardForm {
    Aligned,
    Legacy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub weights: RewardWeights,
    /// Force limit for block-floor contacts, force units.
    pub force_limit_block_floor: f64,
    /// Force limit for every other contact kind, force units.
    pub force_limit_general: f64,
    pub rotation_reward: RotationRewardForm,
    /// Observation noise master switch. Rewards and physics always use
    /// ground truth.
    pub noise_enabled: bool,
    /// Std of additive position noise per axis on observed block
    /// poses, m.
    pub noise_pos_sigma: f64,
    /// Std of the random-axis rotation angle noise on observed block
    /// poses, rad.
    pub noise_rot_sigma: f64,
    /// Episode length in control steps.
    pub episode_steps: usize,
    /// Control period, s. episode_steps * control_dt must equal the
    /// 50 s episode budget.
    pub control_dt: f64,
    /// A contact force above factor * limit sustained for
    /// `fault_substeps` consecutive substeps faults the episode.
    pub fault_force_factor: f64,
    pub fault_substeps: usize,
    pub arm_mode: ArmMode,
    /// Arm mount poses: [x, y, z, yaw].
    pub left_base: [f64; 4],
    pub right_base: [f64; 4],
    /// Initial joint positions.
    pub q_init_left: JointVector,
    pub q_init_right: JointVector,
    /// Initial gripper width, m.
    pub init_width: f64,
    /// Block spawn region, m.
    pub spawn_x: [f64; 2],
    pub spawn_y: [f64; 2],
    /// Minimum center separation between spawned blocks, m.
    pub spawn_min_separation: f64,
    /// Rejection-sampling budget per episode before reset fails.
    pub spawn_max_tries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            weights: RewardWeights::default(),
            force_limit_block_floor: 2.5,
            force_limit_general: 5.0,
            rotation_reward: RotationRewardForm::Aligned,
            noise_enabled: true,
            noise_pos_sigma: 0.01,
            noise_rot_sigma: 0.05,
            episode_steps: 200,
            control_dt: 0.25,
            fault_force_factor: 3.0,
            fault_substeps: 3,
            arm_mode: ArmMode::Both,
            left_base: [0.0, 0.34, 0.0, -0.7],
            right_base: [0.0, -0.34, 0.0, 0.7],
            q_init_left: [0.0, 0.55, 1.5, 0.0, 1.05, 0.0],
            q_init_right: [0.0, 0.55, 1.5, 0.0, 1.05, 0.0],
            init_width: 0.08,
            spawn_x: [0.12, 0.34],
            spawn_y: [-0.15, 0.15],
            spawn_min_separation: 0.16,
            spawn_max_tries: 200,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_dt > 0.0) {
            return Err(SimError::config("control_dt must be > 0"));
        }
        if self.episode_steps == 0 {
            return Err(SimError::config("episode_steps must be > 0"));
        }
        let budget = self.episode_steps as f64 * self.control_dt;
        if (budget - 50.0).abs() > 1e-9 {
            return Err(SimError::config(format!(
                "episode_steps * control_dt must equal the 50 s episode budget, got {budget} s"
            )));
        }
        if !(self.force_limit_block_floor > 0.0) || !(self.force_limit_general > 0.0) {
            return Err(SimError::config("force limits must be > 0"));
        }
        if self.noise_pos_sigma < 0.0 || self.noise_rot_sigma < 0.0 {
            return Err(SimError::config("noise scales must be >= 0"));
        }
        if !(self.fault_force_factor >= 1.0) {
            return Err(SimError::config("fault_force_factor must be >= 1"));
        }
        if self.fault_substeps == 0 {
            return Err(SimError::config("fault_substeps must be > 0"));
        }
        if self.spawn_x[0] >= self.spawn_x[1] || self.spawn_y[0] >= self.spawn_y[1] {
            return Err(SimError::config("spawn region must have positive extent"));
        }
        if !(self.spawn_min_separation > 0.0) {
            return Err(SimError::config("spawn_min_separation must be > 0"));
        }
        if !(self.init_width > 0.0) {
            return Err(SimError::config("init_width must be > 0"));
        }
        Ok(())
    }
}
