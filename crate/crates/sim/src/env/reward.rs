//! Reward terms. All terms read ground-truth world state; observation
//! noise never reaches them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, RotationRewardForm};
use crate::world::{ContactKind, ContactRecord, World};

/// Which gripper carries which block in the current stage, plus the
/// desired pair being worked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    /// Target block per gripper (index into world blocks).
    pub gripper_block: [usize; 2],
    /// Index of the desired connection this stage works toward.
    pub active_pair: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ConnectFirst,
    ConnectSecond,
    Done,
}

/// Scripted stage and gripper-to-block assignment, a pure function of
/// which desired connections currently exist.
///
/// Stage one: the left hand carries the first pair's peripheral block,
/// the right hand holds the hub. Stage two: hands swap roles for the
/// second pair. The hub is the block with the most desired connections
/// (the TypeB side bar in the default scene).
pub fn assign_targets(world: &World) -> (Stage, Assignment) {
    let stage = if !world.desired_pair_connected(0) {
        Stage::ConnectFirst
    } else if !world.desired_pair_connected(1) {
        Stage::ConnectSecond
    } else {
        Stage::Done
    };
    let pair_idx = match stage {
        Stage::ConnectFirst => 0,
        Stage::ConnectSecond | Stage::Done => 1,
    };
    let (sa, sb) = world.desired_pairs[pair_idx];
    // Hub: the block participating in the most desired pairs.
    let degree = |b: usize| {
        world
            .desired_pairs
            .iter()
            .filter(|(x, y)| x.block == b || y.block == b)
            .count()
    };
    let (hub, peripheral) = if degree(sa.block) >= degree(sb.block) {
        (sa.block, sb.block)
    } else {
        (sb.block, sa.block)
    };
    let gripper_block = match stage {
        Stage::ConnectFirst => [peripheral, hub],
        Stage::ConnectSecond | Stage::Done => [hub, peripheral],
    };
    (
        stage,
        Assignment {
            gripper_block,
            active_pair: pair_idx,
        },
    )
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub grasp: f64,
    pub match_pos: f64,
    pub match_rot: f64,
    pub force: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.grasp + self.match_pos + self.match_rot + self.force
    }
}

/// Distance shaping between each active gripper's tool center and its
/// assigned block center.
pub fn grasp_term(
    cfg: &EnvConfig,
    world: &World,
    assignment: &Assignment,
    active_grippers: &[usize],
) -> f64 {
    let mut sum = 0.0;
    for &g in active_grippers {
        let block = assignment.gripper_block[g];
        let d = (world.grippers[g].pose.position - world.states[block].position).norm();
        sum += d;
    }
    -cfg.weights.grasp * sum
}

/// Distance shaping between the desired magnet-site pairs.
pub fn match_pos_term(cfg: &EnvConfig, world: &World) -> f64 {
    let mut sum = 0.0;
    for (sa, sb) in &world.desired_pairs {
        sum += (world.site_world_position(*sa) - world.site_world_position(*sb)).norm();
    }
    -cfg.weights.match_pos * sum
}

/// Orientation shaping between the desired magnet-site normal pairs.
pub fn match_rot_term(cfg: &EnvConfig, world: &World) -> f64 {
    let mut sum = 0.0;
    for (sa, sb) in &world.desired_pairs {
        let u: Vector3<f64> = world.site_world_normal(*sa);
        let v: Vector3<f64> = world.site_world_normal(*sb);
        match cfg.rotation_reward {
            RotationRewardForm::Aligned => {
                // Angle from exact anti-alignment; zero when the faces
                // point at each other.
                sum += u.dot(&(-v)).clamp(-1.0, 1.0).acos();
            }
            RotationRewardForm::Legacy => {
                sum += 1.0 - u.dot(&v).clamp(-1.0, 1.0).acos();
            }
        }
    }
    -cfg.weights.match_rot * sum
}

/// Hinge penalty on contact forces above their per-kind limits.
pub fn force_term(cfg: &EnvConfig, contacts: &[ContactRecord]) -> f64 {
    let mut sum = 0.0;
    for r in contacts {
        let limit = force_limit_for(cfg, r.kind);
        sum += (r.force - limit).max(0.0);
    }
    -cfg.weights.force * sum
}

pub fn force_limit_for(cfg: &EnvConfig, kind: ContactKind) -> f64 {
    match kind {
        ContactKind::BlockFloor => cfg.force_limit_block_floor,
        _ => cfg.force_limit_general,
    }
}

/// All reward terms for one state snapshot and one set of contacts.
pub fn reward_terms(
    cfg: &EnvConfig,
    world: &World,
    assignment: &Assignment,
    active_grippers: &[usize],
    contacts: &[ContactRecord],
) -> RewardTerms {
    RewardTerms {
        grasp: grasp_term(cfg, world, assignment, active_grippers),
        match_pos: match_pos_term(cfg, world),
        match_rot: match_rot_term(cfg, world),
        force: force_term(cfg, contacts),
    }
}
