//! Replay records: one serializable entry per control step capturing
//! the action, the 4 Hz targets, every 100 Hz command and plant state,
//! contacts, ground-truth poses, and reward breakdown. Written as one
//! JSON object per line by the surrounding tooling.

use serde::{Deserialize, Serialize};

use crate::env::{RewardTerms, SubtaskFlags};
use crate::kinematics::{JointVector, PoseSpec};
use crate::world::ContactRecord;

/// One 100 Hz command tick: what was commanded and where the plant
/// actually ended up, for both arms, plus the contacts that tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubstepRecord {
    pub command_q: [JointVector; 2],
    pub actual_q: [JointVector; 2],
    pub command_width: [f64; 2],
    pub actual_width: [f64; 2],
    pub contacts: Vec<ContactRecord>,
}

/// One 4 Hz control step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based control step index within the episode.
    pub step: usize,
    /// Raw policy action as received.
    pub action: Vec<f64>,
    /// Joint position targets after limit clipping and integration.
    pub target_q: [JointVector; 2],
    pub target_width: [f64; 2],
    pub substeps: Vec<SubstepRecord>,
    /// Ground-truth block poses at the end of the step.
    pub block_poses: Vec<PoseSpec>,
    /// Gripper tool poses at the end of the step.
    pub gripper_poses: [PoseSpec; 2],
    /// The observation returned to the policy (noise included).
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terms: RewardTerms,
    pub flags: SubtaskFlags,
    pub done: bool,
    pub success: bool,
    pub fault: bool,
    pub timeout: bool,
}
