//! The reinforcement-learning environment: a 4 Hz reset/step loop over
//! the world, with noisy observations, shaped rewards, scripted
//! gripper-block assignments, and latched sub-task progress flags.
//!
//! Each control step expands the policy's joint-velocity action into
//! 100 Hz position commands through the actuation pipeline, tracks them
//! with the plant model, and advances the world one tick per command.

pub mod config;
pub mod reward;

pub use config::{ArmMode, EnvConfig, RewardWeights, RotationRewardForm};
pub use reward::{assign_targets, Assignment, RewardTerms, Stage};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::actuation::{
    plan_command_sequence, plan_command_sequence_scalar, step_plant, step_plant_scalar,
    ActuationConfig,
};
use crate::error::SimError;
use crate::kinematics::{
    clip_velocity_action, forward_kinematics, integrate_target, JointVector, KinematicChain,
    PoseSpec, DOF,
};
use crate::pose::RigidPose;
use crate::replay::{StepRecord, SubstepRecord};
use crate::world::{
    Blueprint, Capsule, ContactKind, GripperInput, World, WorldConfig, WorldInputs,
};

/// Latched sub-task milestones. Later milestones imply earlier ones, so
/// per-episode rates are monotone non-increasing down this list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskFlags {
    /// Both grippers held distinct blocks at the same time.
    pub two_block_pickup: bool,
    /// Some desired magnet pair is (or was) connected.
    pub two_block_connection: bool,
    /// After a connection existed, a gripper held a block outside it.
    pub third_block_pickup: bool,
    /// All desired pairs connected: task success.
    pub three_block_connection: bool,
}

impl SubtaskFlags {
    /// Latches the implication chain: each milestone implies all the
    /// earlier ones.
    fn imply(&mut self) {
        if self.three_block_connection {
            self.third_block_pickup = true;
        }
        if self.third_block_pickup {
            self.two_block_connection = true;
        }
        if self.two_block_connection {
            self.two_block_pickup = true;
        }
    }

    /// True when the flags respect the milestone ordering.
    pub fn monotone(&self) -> bool {
        (!self.three_block_connection || self.third_block_pickup)
            && (!self.third_block_pickup || self.two_block_connection)
            && (!self.two_block_connection || self.two_block_pickup)
    }
}

/// Largest contact force seen during a step, split by contact kind.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MaxForces {
    pub block_floor: f64,
    pub block_block: f64,
    pub gripper_block: f64,
    pub arm_arm: f64,
    pub arm_floor: f64,
}

impl MaxForces {
    fn record(&mut self, kind: ContactKind, force: f64) {
        let slot = match kind {
            ContactKind::BlockFloor => &mut self.block_floor,
            ContactKind::BlockBlock => &mut self.block_block,
            ContactKind::GripperBlock => &mut self.gripper_block,
            ContactKind::ArmArm => &mut self.arm_arm,
            ContactKind::ArmFloor => &mut self.arm_floor,
        };
        if force > *slot {
            *slot = force;
        }
    }

    pub fn overall(&self) -> f64 {
        self.block_floor
            .max(self.block_block)
            .max(self.gripper_block)
            .max(self.arm_arm)
            .max(self.arm_floor)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepInfo {
    pub success: bool,
    pub fault: bool,
    pub timeout: bool,
    pub flags: SubtaskFlags,
    /// Number of magnet connections at the end of the step.
    pub connections: usize,
    pub max_forces: MaxForces,
    /// Smallest distance this step between any active gripper's tool
    /// center and its assigned block center.
    pub min_assigned_distance: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terms: RewardTerms,
    pub done: bool,
    pub info: StepInfo,
}

/// Per-block slice of one observation frame: position (3) then rotation
/// matrix in row-major order (9).
pub const BLOCK_OBS: usize = 12;
/// Per-arm slice of one observation frame: joint positions (6), tool
/// position (3), previous target joints (6), previous width target (1).
pub const ARM_OBS: usize = DOF + 3 + DOF + 1;

pub struct Env {
    pub cfg: EnvConfig,
    pub act: ActuationConfig,
    chains: [KinematicChain; 2],
    bases: [RigidPose; 2],
    world: World,
    /// Actual joint positions tracked by the plant.
    q: [JointVector; 2],
    /// Actual gripper widths tracked by the plant.
    width: [f64; 2],
    /// Last commanded joint targets (the "previous target" in both the
    /// actuation plan and the observation).
    target_q: [JointVector; 2],
    target_width: [f64; 2],
    /// Last applied clipped velocity, for the acceleration limit.
    prev_v: [JointVector; 2],
    prev_frame: Vec<f64>,
    step_count: usize,
    done: bool,
    fault_streak: usize,
    flags: SubtaskFlags,
    rng: ChaCha8Rng,
    trace_enabled: bool,
    last_trace: Option<StepRecord>,
}

impl Env {
    pub fn new(
        cfg: EnvConfig,
        act: ActuationConfig,
        world_cfg: WorldConfig,
        chains: [KinematicChain; 2],
        blueprint: &Blueprint,
    ) -> Result<Env, SimError> {
        cfg.validate()?;
        act.validate()?;
        for c in &chains {
            c.validate()?;
        }
        if (act.control_dt() - cfg.control_dt).abs() > 1e-9 {
            return Err(SimError::config(format!(
                "actuation control period {} s does not match env control_dt {} s",
                act.control_dt(),
                cfg.control_dt
            )));
        }
        let world = World::new(blueprint, world_cfg)?;
        let base = |b: &[f64; 4]| {
            RigidPose::new(
                Vector3::new(b[0], b[1], b[2]),
                Rotation3::from_axis_angle(&Vector3::z_axis(), b[3]),
            )
        };
        let bases = [base(&cfg.left_base), base(&cfg.right_base)];
        let q0 = [cfg.q_init_left, cfg.q_init_right];
        let w0 = cfg.init_width;
        Ok(Env {
            cfg,
            act,
            chains,
            bases,
            world,
            q: q0,
            width: [w0; 2],
            target_q: q0,
            target_width: [w0; 2],
            prev_v: [[0.0; DOF]; 2],
            prev_frame: Vec::new(),
            step_count: 0,
            done: true,
            fault_streak: 0,
            flags: SubtaskFlags::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            trace_enabled: false,
            last_trace: None,
        })
    }

    /// Environment over the default arms, scene, and world constants.
    pub fn with_defaults(cfg: EnvConfig, act: ActuationConfig) -> Result<Env, SimError> {
        Env::new(
            cfg,
            act,
            WorldConfig::default(),
            [KinematicChain::default_arm(), KinematicChain::default_arm()],
            &Blueprint::default_u_shape(),
        )
    }

    pub fn active_arms(&self) -> &'static [usize] {
        match self.cfg.arm_mode {
            ArmMode::Both => &[0, 1],
            ArmMode::LeftOnly => &[0],
        }
    }

    /// Six velocity channels plus one width channel per active arm.
    pub fn action_dim(&self) -> usize {
        (DOF + 1) * self.active_arms().len()
    }

    pub fn frame_dim(&self) -> usize {
        self.world.blocks.len() * BLOCK_OBS + self.active_arms().len() * ARM_OBS
    }

    /// Two stacked frames: current first, previous second.
    pub fn obs_dim(&self) -> usize {
        2 * self.frame_dim()
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn flags(&self) -> SubtaskFlags {
        self.flags
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Enables per-step replay capture (off by default; costs time and
    /// memory during rollouts).
    pub fn set_trace(&mut self, enabled: bool) {
        self.trace_enabled = enabled;
        if !enabled {
            self.last_trace = None;
        }
    }

    pub fn last_trace(&self) -> Option<&StepRecord> {
        self.last_trace.as_ref()
    }

    /// Block pose decoded from the current frame of an observation.
    pub fn obs_block_pose(&self, obs: &[f64], block: usize) -> RigidPose {
        let o = block * BLOCK_OBS;
        let p = Vector3::new(obs[o], obs[o + 1], obs[o + 2]);
        let r = &obs[o + 3..o + 12];
        let m = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        RigidPose::new(p, Rotation3::from_matrix_unchecked(m))
    }

    /// Joint positions of the active arm in slot `slot`, from the
    /// current frame of an observation.
    pub fn obs_arm_q(&self, obs: &[f64], slot: usize) -> JointVector {
        let o = self.world.blocks.len() * BLOCK_OBS + slot * ARM_OBS;
        let mut q = [0.0; DOF];
        q.copy_from_slice(&obs[o..o + DOF]);
        q
    }

    /// Tool position of the active arm in slot `slot`, from the current
    /// frame of an observation.
    pub fn obs_arm_tool(&self, obs: &[f64], slot: usize) -> Vector3<f64> {
        let o = self.world.blocks.len() * BLOCK_OBS + slot * ARM_OBS + DOF;
        Vector3::new(obs[o], obs[o + 1], obs[o + 2])
    }

    /// World pose of an arm's tool center at joint position `q`.
    pub fn tool_pose(&self, arm: usize, q: &JointVector) -> RigidPose {
        self.bases[arm].compose(&forward_kinematics(&self.chains[arm], q).ee)
    }

    pub fn chain(&self, arm: usize) -> &KinematicChain {
        &self.chains[arm]
    }

    pub fn base(&self, arm: usize) -> &RigidPose {
        &self.bases[arm]
    }

    /// Starts a fresh episode: blocks at rejection-sampled floor poses,
    /// arms at the initial configuration, flags cleared.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>, SimError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = self.sample_block_poses()?;
        self.q = [self.cfg.q_init_left, self.cfg.q_init_right];
        self.target_q = self.q;
        self.width = [self.cfg.init_width; 2];
        self.target_width = self.width;
        self.prev_v = [[0.0; DOF]; 2];
        let grippers = [self.tool_pose(0, &self.q[0]), self.tool_pose(1, &self.q[1])];
        self.world.reset(poses, grippers, self.width)?;
        self.step_count = 0;
        self.done = false;
        self.fault_streak = 0;
        self.flags = SubtaskFlags::default();
        self.last_trace = None;
        let frame = self.observe_frame();
        self.prev_frame = frame.clone();
        let mut obs = frame;
        obs.extend_from_slice(&self.prev_frame);
        Ok(obs)
    }

    /// Rejection-samples non-overlapping resting poses for every block.
    /// Greedy per-block sampling can wedge (two central blocks may leave
    /// no room for a third), so a failed configuration is discarded and
    /// resampled from scratch.
    fn sample_block_poses(&mut self) -> Result<Vec<RigidPose>, SimError> {
        let n = self.world.blocks.len();
        const TRIES_PER_BLOCK: usize = 40;
        'attempt: for _ in 0..self.cfg.spawn_max_tries {
            let mut poses: Vec<RigidPose> = Vec::with_capacity(n);
            for b in 0..n {
                let rest_z = self.world.blocks[b].half_extents.y;
                let mut placed = false;
                for _ in 0..TRIES_PER_BLOCK {
                    let x = self.rng.gen_range(self.cfg.spawn_x[0]..self.cfg.spawn_x[1]);
                    let y = self.rng.gen_range(self.cfg.spawn_y[0]..self.cfg.spawn_y[1]);
                    let yaw =
                        self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let ok = poses.iter().all(|p| {
                        let dx = p.position.x - x;
                        let dy = p.position.y - y;
                        (dx * dx + dy * dy).sqrt() >= self.cfg.spawn_min_separation
                    });
                    if !ok {
                        continue;
                    }
                    let rot =
                        Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * rest_rotation();
                    poses.push(RigidPose::new(Vector3::new(x, y, rest_z), rot));
                    placed = true;
                    break;
                }
                if !placed {
                    continue 'attempt;
                }
            }
            return Ok(poses);
        }
        Err(SimError::reset(format!(
            "could not place {n} blocks after {} attempts; spawn region too small for \
             min separation {}",
            self.cfg.spawn_max_tries, self.cfg.spawn_min_separation
        )))
    }

    /// One observation frame from the current state. Layout: for each
    /// block, position then row-major rotation (noise-perturbed when
    /// enabled); then for each active arm, actual joint positions, tool
    /// position, previous joint targets, previous width target.
    /// Proprioception is never perturbed.
    fn observe_frame(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frame_dim());
        let pos_noise = Normal::new(0.0, self.cfg.noise_pos_sigma).expect("valid sigma");
        let rot_noise = Normal::new(0.0, self.cfg.noise_rot_sigma).expect("valid sigma");
        for b in 0..self.world.blocks.len() {
            let truth = self.world.states[b];
            let (p, r) = if self.cfg.noise_enabled {
                let p = Vector3::new(
                    truth.position.x + pos_noise.sample(&mut self.rng),
                    truth.position.y + pos_noise.sample(&mut self.rng),
                    truth.position.z + pos_noise.sample(&mut self.rng),
                );
                let axis: [f64; 3] = UnitSphere.sample(&mut self.rng);
                let angle = rot_noise.sample(&mut self.rng);
                let wobble = Rotation3::from_axis_angle(
                    &Unit::new_normalize(Vector3::new(axis[0], axis[1], axis[2])),
                    angle,
                );
                let r = RigidPose::new(p, wobble * truth.rotation).renormalized().rotation;
                (p, r)
            } else {
                (truth.position, truth.rotation)
            };
            out.extend_from_slice(&[p.x, p.y, p.z]);
            for i in 0..3 {
                for j in 0..3 {
                    out.push(r[(i, j)]);
                }
            }
        }
        for &arm in self.active_arms() {
            out.extend_from_slice(&self.q[arm]);
            let tool = self.tool_pose(arm, &self.q[arm]).position;
            out.extend_from_slice(&[tool.x, tool.y, tool.z]);
            out.extend_from_slice(&self.target_q[arm]);
            out.push(self.target_width[arm]);
        }
        out
    }

    /// Arm capsules for contact checks: the segments between successive
    /// link frames from the upper arm outward, plus the wrist-to-tool
    /// segment. The base column is omitted; it sits outside the
    /// workspace.
    fn arm_capsules(&self, arm: usize, q: &JointVector) -> Vec<Capsule> {
        let fk = forward_kinematics(&self.chains[arm], q);
        let base = &self.bases[arm];
        let mut pts: Vec<Vector3<f64>> = fk
            .links
            .iter()
            .skip(1)
            .map(|l| base.compose(l).position)
            .collect();
        pts.push(base.compose(&fk.ee).position);
        let radius = self.world.cfg.link_radius;
        pts.windows(2)
            .map(|w| Capsule {
                a: w[0],
                b: w[1],
                radius,
            })
            .collect()
    }

    /// Advances one control step. `action` has six joint-velocity
    /// channels in [-1, 1] (scaled by each joint's velocity limit) plus
    /// one width channel in [-1, 1] (mapped affinely to [0, max_width])
    /// per active arm, concatenated in arm order.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, SimError> {
        if self.done {
            return Err(SimError::contract("step called on a finished episode"));
        }
        if action.len() != self.action_dim() {
            return Err(SimError::contract(format!(
                "action dimension {} does not match expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        let dt_control = self.cfg.control_dt;
        let dt_cmd = self.act.command_dt();
        let n_sub = self.act.steps_per_control();
        let max_width = self.world.cfg.max_width;

        // Per-arm targets for this step. Inactive arms hold.
        let prev_target_q = self.target_q;
        let prev_target_width = self.target_width;
        for (slot, &arm) in self.active_arms().iter().enumerate() {
            let a = &action[slot * (DOF + 1)..(slot + 1) * (DOF + 1)];
            let mut v_raw = [0.0; DOF];
            for j in 0..DOF {
                let cmd = a[j].clamp(-1.0, 1.0);
                v_raw[j] = cmd * self.chains[arm].joints[j].velocity_limit;
            }
            let v = clip_velocity_action(&v_raw, &self.prev_v[arm], &self.chains[arm], dt_control);
            self.prev_v[arm] = v;
            self.target_q[arm] =
                integrate_target(&self.target_q[arm], &v, dt_control, &self.chains[arm]);
            let w = (a[DOF].clamp(-1.0, 1.0) + 1.0) / 2.0 * max_width;
            self.target_width[arm] = w;
        }

        let plans: [Vec<JointVector>; 2] = [
            plan_command_sequence(&prev_target_q[0], &self.target_q[0], &self.act),
            plan_command_sequence(&prev_target_q[1], &self.target_q[1], &self.act),
        ];
        let width_plans: [Vec<f64>; 2] = [
            plan_command_sequence_scalar(prev_target_width[0], self.target_width[0], &self.act),
            plan_command_sequence_scalar(prev_target_width[1], self.target_width[1], &self.act),
        ];

        let mut force_penalty_sum = 0.0;
        let mut executed = 0usize;
        let mut fault = false;
        let mut max_forces = MaxForces::default();
        let mut min_assigned = f64::INFINITY;
        let mut substep_records: Vec<SubstepRecord> = Vec::new();

        for k in 0..n_sub {
            let cmd_q = [plans[0][k], plans[1][k]];
            let cmd_w = [width_plans[0][k], width_plans[1][k]];
            for arm in 0..2 {
                self.q[arm] = step_plant(&self.q[arm], &cmd_q[arm], &self.act, dt_cmd);
                self.width[arm] =
                    step_plant_scalar(self.width[arm], cmd_w[arm], &self.act, dt_cmd);
            }
            let inputs = WorldInputs {
                grippers: [
                    GripperInput {
                        pose: self.tool_pose(0, &self.q[0]),
                        width: self.width[0],
                    },
                    GripperInput {
                        pose: self.tool_pose(1, &self.q[1]),
                        width: self.width[1],
                    },
                ],
                arm_links: [self.arm_capsules(0, &self.q[0]), self.arm_capsules(1, &self.q[1])],
            };
            let contacts = self.world.step(&inputs, dt_cmd);
            executed += 1;
            force_penalty_sum += reward::force_term(&self.cfg, &contacts);

            let mut over_limit = false;
            for c in &contacts {
                max_forces.record(c.kind, c.force);
                if c.force > self.cfg.fault_force_factor * reward::force_limit_for(&self.cfg, c.kind)
                {
                    over_limit = true;
                }
            }
            self.fault_streak = if over_limit { self.fault_streak + 1 } else { 0 };

            self.update_flags();
            let assignment = assign_targets(&self.world).1;
            for &arm in self.active_arms() {
                let d = (self.world.grippers[arm].pose.position
                    - self.world.states[assignment.gripper_block[arm]].position)
                    .norm();
                if d < min_assigned {
                    min_assigned = d;
                }
            }

            if self.trace_enabled {
                substep_records.push(SubstepRecord {
                    command_q: cmd_q,
                    actual_q: self.q,
                    command_width: cmd_w,
                    actual_width: self.width,
                    contacts: contacts.clone(),
                });
            }

            if self.fault_streak >= self.cfg.fault_substeps {
                fault = true;
                break;
            }
        }

        self.step_count += 1;
        let success = self.world.success() && !fault;
        let timeout = !success && !fault && self.step_count >= self.cfg.episode_steps;
        self.done = success || fault || timeout;

        let (_, assignment) = assign_targets(&self.world);
        let contacts_avg_force = force_penalty_sum / executed as f64;
        let terms = RewardTerms {
            grasp: reward::grasp_term(&self.cfg, &self.world, &assignment, self.active_arms()),
            match_pos: reward::match_pos_term(&self.cfg, &self.world),
            match_rot: reward::match_rot_term(&self.cfg, &self.world),
            force: contacts_avg_force,
        };
        let reward_total = terms.total();

        let frame = self.observe_frame();
        let mut observation = frame.clone();
        observation.extend_from_slice(&self.prev_frame);
        self.prev_frame = frame;

        let info = StepInfo {
            success,
            fault,
            timeout,
            flags: self.flags,
            connections: self.world.connections.len(),
            max_forces,
            min_assigned_distance: min_assigned,
        };

        if self.trace_enabled {
            self.last_trace = Some(StepRecord {
                step: self.step_count - 1,
                action: action.to_vec(),
                target_q: self.target_q,
                target_width: self.target_width,
                substeps: substep_records,
                block_poses: self.world.states.iter().map(PoseSpec::from_pose).collect(),
                gripper_poses: [
                    PoseSpec::from_pose(&self.world.grippers[0].pose),
                    PoseSpec::from_pose(&self.world.grippers[1].pose),
                ],
                observation: observation.clone(),
                reward: reward_total,
                terms,
                flags: self.flags,
                done: self.done,
                success,
                fault,
                timeout,
            });
        }

        Ok(StepResult {
            observation,
            reward: reward_total,
            terms,
            done: self.done,
            info,
        })
    }

    /// Latches sub-task flags from the current world state.
    fn update_flags(&mut self) {
        let g0 = self.world.grippers[0].grasp.as_ref().map(|g| g.block);
        let g1 = self.world.grippers[1].grasp.as_ref().map(|g| g.block);
        if let (Some(a), Some(b)) = (g0, g1) {
            if a != b {
                self.flags.two_block_pickup = true;
            }
        }
        let any_desired = (0..self.world.desired_pairs.len())
            .any(|i| self.world.desired_pair_connected(i));
        if any_desired {
            self.flags.two_block_connection = true;
        }
        if self.flags.two_block_connection {
            for held in [g0, g1].into_iter().flatten() {
                let in_connection = self
                    .world
                    .connections
                    .iter()
                    .any(|c| c.site_a.block == held || c.site_b.block == held);
                if !in_connection {
                    self.flags.third_block_pickup = true;
                }
            }
        }
        if self.world.success() {
            self.flags.three_block_connection = true;
        }
        self.flags.imply();
    }
}

/// Rest rotation for a spawned block: the long local z axis lies along
/// world x, local x along world y, local y up. Composed with a random
/// yaw this keeps every magnet normal horizontal at spawn.
pub fn rest_rotation() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0,
    ))
}
