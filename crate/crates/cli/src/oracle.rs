//! Scripted expert controller for the block-assembly task.
//!
//! The script reads only what a policy could read: the observation
//! vector (noisy block poses, exact proprioception) plus the per-step
//! info block (magnet-connection count and latched milestone flags).
//! Block poses go through exponential filters; grasp offsets are
//! estimated from observations at grasp time and refined while held.
//!
//! Choreography: the right hand picks up the hub block (the one shared
//! by both desired magnet pairs) and holds it in the air at a clear
//! spot; the left hand fetches each peripheral block in turn and pushes
//! its magnet face onto the matching hub face until the connection
//! count rises, then releases and retreats. If blocks spawn with an
//! unwanted magnet connection already formed, both hands grab the
//! welded pair and pull it apart first.

use nalgebra::{Rotation3, Unit, Vector3};

use ublocks_sim::env::{rest_rotation, ArmMode, Env, StepInfo, ARM_OBS, BLOCK_OBS};
use ublocks_sim::kinematics::{JointVector, DOF};
use ublocks_sim::pose::RigidPose;
use ublocks_sim::world::SiteId;

use crate::controller::Controller;
use crate::ik::{solve_ik_seeds, IkOptions, IkSolution};

/// Euclidean distance between two joint configurations.
fn q_dist(a: &JointVector, b: &JointVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Wraps an angle into [-pi, pi].
fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Exponential gain for block-pose filters.
    pub filter_gain: f64,
    /// Exponential gain for the held-block offset estimate.
    pub offset_gain: f64,
    /// Tool height for lateral transits, m.
    pub transit_z: f64,
    /// Tool height above a block center for grasping, m.
    pub grasp_above: f64,
    /// Lift distance after closing, m.
    pub lift: f64,
    /// Filtered height rise that confirms a grasp, m.
    pub verify_rise: f64,
    /// Hub block center height while held for assembly, m.
    pub hold_z: f64,
    /// Magnet-face gap at the staging waypoint, m.
    pub gap_far: f64,
    /// Extra height above the staging waypoint on the way in, m.
    pub high_rise: f64,
    /// Commanded face gap at the end of the push (slightly past flush), m.
    pub gap_push: f64,
    /// Pull distance when separating an unwanted connection, m.
    pub pull_travel: f64,
    /// Action magnitude caps per motion class.
    pub speed_transit: f64,
    pub speed_descend: f64,
    pub speed_push: f64,
    /// Joint-target arrival tolerance, rad.
    pub arrive_q: f64,
    /// Steps before a stuck phase re-plans.
    pub phase_timeout: usize,
    /// Prints a per-step phase trace (debugging aid).
    pub verbose: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            filter_gain: 0.2,
            offset_gain: 0.25,
            transit_z: 0.20,
            grasp_above: 0.018,
            lift: 0.10,
            verify_rise: 0.045,
            hold_z: 0.10,
            gap_far: 0.06,
            high_rise: 0.08,
            gap_push: -0.004,
            pull_travel: 0.08,
            speed_transit: 0.5,
            speed_descend: 0.25,
            speed_push: 0.09,
            arrive_q: 0.02,
            phase_timeout: 35,
            verbose: false,
        }
    }
}

/// One desired connection, split into the hub-side site and the
/// peripheral block that must be carried to it.
#[derive(Debug, Clone, Copy)]
struct Job {
    sat: usize,
    sat_site: SiteId,
    hub_site: SiteId,
}

#[derive(Debug, Clone)]
struct Meta {
    hub: usize,
    jobs: Vec<Job>,
    q_init: [JointVector; 2],
}

/// Exponential pose filter: linear in position, incremental
/// rotation-vector blending in orientation.
#[derive(Debug, Clone)]
struct PoseFilter {
    pose: RigidPose,
    ready: bool,
}

impl PoseFilter {
    fn new() -> PoseFilter {
        PoseFilter {
            pose: RigidPose::identity(),
            ready: false,
        }
    }

    fn push(&mut self, meas: &RigidPose, alpha: f64) {
        if !self.ready {
            self.pose = *meas;
            self.ready = true;
            return;
        }
        let pos = self.pose.position + alpha * (meas.position - self.pose.position);
        let delta = crate::ik::rot_vec(&(meas.rotation * self.pose.rotation.inverse()));
        let rot = Rotation3::from_scaled_axis(alpha * delta) * self.pose.rotation;
        self.pose = RigidPose::new(pos, rot).renormalized();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AfterPick {
    /// Carry the hub to its hold pose.
    Carry,
    /// Deliver the current job's peripheral block.
    Deliver,
    /// Separation: go grab the other welded block with the left hand.
    SepSecond,
    /// Separation: both hands on, start pulling.
    SepPull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Stow { arm: usize, pick_arm: usize, pick_block: usize },
    PickApproach { arm: usize, block: usize },
    PickDescend { arm: usize, block: usize },
    PickClose { arm: usize, block: usize },
    PickLift { arm: usize, block: usize },
    PickVerify { arm: usize, block: usize },
    CarryHub,
    DeliverHigh { job: usize },
    DeliverFar { job: usize },
    DeliverPush { job: usize },
    ReleaseSat { job: usize },
    RetreatSat { job: usize },
    SepPull,
    SepRelease,
    SepRetreat,
    Done,
}

/// Per-step proprioception decoded from the observation.
struct Ctx<'a> {
    env: &'a Env,
    target_q: [JointVector; 2],
    q: [JointVector; 2],
    tool: [RigidPose; 2],
    connections: usize,
}

pub struct OracleController {
    opts: OracleOptions,
    ik: IkOptions,
    meta: Option<Meta>,
    filters: Vec<PoseFilter>,
    /// Estimated tool-frame offset of the held block, per arm.
    offsets: [Option<RigidPose>; 2],
    held: [Option<usize>; 2],
    phase: Phase,
    after_pick: AfterPick,
    phase_age: usize,
    step_idx: usize,
    q_goal: [JointVector; 2],
    speed: [f64; 2],
    width_cmd: [f64; 2],
    tool_rot: [Rotation3<f64>; 2],
    job: usize,
    /// Arm that picks and holds the hub.
    carrier: usize,
    /// Arm that picks and mates the peripheral blocks.
    deliverer: usize,
    hold_pose: RigidPose,
    deliver_roll: f64,
    verify_z0: f64,
    baseline_connections: usize,
    sep_checked: bool,
    sep_pair: Option<(SiteId, SiteId)>,
    freeze: [RigidPose; 2],
}

impl OracleController {
    pub fn new(opts: OracleOptions) -> OracleController {
        OracleController {
            opts,
            ik: IkOptions::default(),
            meta: None,
            filters: Vec::new(),
            offsets: [None, None],
            held: [None, None],
            phase: Phase::Done,
            after_pick: AfterPick::Carry,
            phase_age: 0,
            step_idx: 0,
            q_goal: [[0.0; DOF]; 2],
            speed: [0.3, 0.3],
            width_cmd: [1.0, 1.0],
            tool_rot: [Rotation3::identity(); 2],
            job: 0,
            carrier: RIGHT,
            deliverer: LEFT,
            hold_pose: RigidPose::identity(),
            deliver_roll: 0.0,
            verify_z0: 0.0,
            baseline_connections: 0,
            sep_checked: false,
            sep_pair: None,
            freeze: [RigidPose::identity(); 2],
        }
    }

    // ----- observation decoding -------------------------------------

    fn obs_target_q(env: &Env, obs: &[f64], slot: usize) -> JointVector {
        let o = env.world().blocks.len() * BLOCK_OBS + slot * ARM_OBS + DOF + 3;
        let mut q = [0.0; DOF];
        q.copy_from_slice(&obs[o..o + DOF]);
        q
    }

    fn make_ctx<'a>(&self, env: &'a Env, obs: &[f64], info: Option<&StepInfo>) -> Ctx<'a> {
        let q = [env.obs_arm_q(obs, 0), env.obs_arm_q(obs, 1)];
        Ctx {
            env,
            target_q: [
                Self::obs_target_q(env, obs, 0),
                Self::obs_target_q(env, obs, 1),
            ],
            q,
            tool: [env.tool_pose(0, &q[0]), env.tool_pose(1, &q[1])],
            connections: info.map_or(0, |i| i.connections),
        }
    }

    /// Best current estimate of a block pose: proprioception through the
    /// grasp offset while held, the observation filter otherwise.
    fn block_est(&self, ctx: &Ctx, block: usize) -> RigidPose {
        for arm in 0..2 {
            if self.held[arm] == Some(block) {
                if let Some(off) = &self.offsets[arm] {
                    return ctx.tool[arm].compose(off);
                }
            }
        }
        self.filters[block].pose
    }

    fn site_local(&self, ctx: &Ctx, id: SiteId) -> (Vector3<f64>, Vector3<f64>) {
        let m = &ctx.env.world().blocks[id.block].magnets[id.site];
        (m.local.position, m.local.rotation * Vector3::z())
    }

    fn site_world(&self, ctx: &Ctx, id: SiteId) -> (Vector3<f64>, Vector3<f64>) {
        let est = self.block_est(ctx, id.block);
        let (p, n) = self.site_local(ctx, id);
        (est.transform_point(&p), est.transform_vector(&n))
    }

    // ----- geometry helpers ------------------------------------------

    fn rz(a: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), a)
    }

    /// Tool orientation pointing straight down, optionally yawed.
    fn down_rot(yaw: f64) -> Rotation3<f64> {
        Self::rz(yaw) * Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    }

    /// Block rotation placing the carried block's site normal exactly
    /// opposite the target normal, with a free roll about that normal.
    fn mate_rotation(site_normal_local: &Vector3<f64>, target_normal: &Vector3<f64>, roll: f64) -> Rotation3<f64> {
        let want = -target_normal;
        let base = Rotation3::rotation_between(site_normal_local, &want)
            .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI));
        Rotation3::from_axis_angle(&Unit::new_normalize(want), roll) * base
    }

    /// Target pose of the carried block for a given face gap.
    fn block_target(
        &self,
        ctx: &Ctx,
        job: &Job,
        gap: f64,
        roll: f64,
    ) -> RigidPose {
        let (p_s, n) = self.site_world(ctx, job.hub_site);
        let (sat_p, sat_n) = self.site_local(ctx, job.sat_site);
        let rot = Self::mate_rotation(&sat_n, &n, roll);
        let pos = p_s + gap * n - rot * sat_p;
        RigidPose::new(pos, rot)
    }

    fn angle_between(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
        crate::ik::rot_angle(&(a.inverse() * b))
    }

    // ----- motion primitives -----------------------------------------

    /// IK feasibility probe for a candidate tool pose. Does not move
    /// the arm.
    fn probe(&self, ctx: &Ctx, arm: usize, tool_target: &RigidPose) -> IkSolution {
        let meta = self.meta.as_ref().expect("episode begun");
        let seeds = [self.q_goal[arm], ctx.q[arm], meta.q_init[arm]];
        solve_ik_seeds(
            ctx.env.chain(arm),
            ctx.env.base(arm),
            tool_target,
            &seeds,
            &self.ik,
        )
    }

    /// Carrot tracking: aims the joint goal at a pose a short hop from
    /// the live tool pose along the straight line to `goal`, so the tool
    /// follows a predictable Cartesian path and IK stays on one branch.
    fn track(&mut self, ctx: &Ctx, arm: usize, goal: &RigidPose, hop_m: f64, hop_rad: f64) {
        let cur = ctx.tool[arm];
        let dp = goal.position - cur.position;
        let dist = dp.norm();
        let t = if dist > hop_m { hop_m / dist } else { 1.0 };
        let pos = cur.position + dp * t;
        let dr = crate::ik::rot_vec(&(goal.rotation * cur.rotation.inverse()));
        let ang = dr.norm();
        // Near a half-turn the relative axis is numerically ambiguous and
        // can flap sign between steps; hand IK the goal rotation directly
        // there instead of a jittering interpolant.
        let rot = if ang > hop_rad && ang < 3.0 {
            Rotation3::from_scaled_axis(dr * (hop_rad / ang)) * cur.rotation
        } else {
            goal.rotation
        };
        let carrot = RigidPose::new(pos, rot).renormalized();
        let meta = self.meta.as_ref().expect("episode begun");
        // Solve each seed separately and keep the converged branch nearest
        // the arm's present configuration: taking the first hit lets the
        // goal flip between wrist branches on alternate steps, which
        // deadlocks the arm mid-carry.
        let seeds = [self.q_goal[arm], ctx.q[arm], meta.q_init[arm]];
        // "Viable" admits small residuals beyond the strict IK tolerance:
        // a pose a couple of milliradians off is fine for tracking, and
        // insisting on exact convergence here made the selection jump to a
        // wrist branch a full turn away whenever the near branch fell a
        // hair short.
        let viable = |s: &IkSolution| {
            s.pos_err < 5.0 * self.ik.pos_tol && s.rot_err < 5.0 * self.ik.rot_tol
        };
        let mut best: Option<IkSolution> = None;
        for seed in seeds {
            let sol = solve_ik_seeds(
                ctx.env.chain(arm),
                ctx.env.base(arm),
                &carrot,
                &[seed],
                &self.ik,
            );
            let better = match &best {
                None => true,
                Some(b) => match (viable(&sol), viable(b)) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => q_dist(&sol.q, &ctx.q[arm]) < q_dist(&b.q, &ctx.q[arm]),
                    (false, false) => sol.pos_err + sol.rot_err < b.pos_err + b.rot_err,
                },
            };
            if better {
                best = Some(sol);
            }
        }
        let sol = best.expect("at least one seed");
        let sol_viable = viable(&sol);
        if self.opts.verbose && !sol_viable {
            eprintln!(
                "  ik arm {arm} carrot NOT viable: pos_err {:.4} rot_err {:.4} carrot ({:.3} {:.3} {:.3})",
                sol.pos_err, sol.rot_err, carrot.position.x, carrot.position.y, carrot.position.z
            );
        }
        self.q_goal[arm] = sol.q;
    }

    /// Picks the first orientation from `cands` (sorted by rotation
    /// distance from the current tool) whose full goal pose IK reaches,
    /// and stores it as the arm's working orientation.
    fn choose_rot(&mut self, ctx: &Ctx, arm: usize, pos: Vector3<f64>, cands: &[Rotation3<f64>]) {
        let mut best_ok: Option<(f64, Rotation3<f64>)> = None;
        let mut best_err: Option<(f64, Rotation3<f64>)> = None;
        for &cand in cands {
            let target = RigidPose::new(pos, cand);
            let sol = self.probe(ctx, arm, &target);
            if sol.converged {
                let d = q_dist(&sol.q, &ctx.q[arm]);
                if best_ok.as_ref().map_or(true, |(bd, _)| d < *bd) {
                    best_ok = Some((d, cand));
                }
            } else {
                let err = sol.pos_err + sol.rot_err;
                if best_err.as_ref().map_or(true, |(be, _)| err < *be) {
                    best_err = Some((err, cand));
                }
            }
        }
        if let Some((_, rot)) = best_ok.or(best_err) {
            self.tool_rot[arm] = rot;
        }
    }

    /// Tool-pose arrival test against the live (proprioceptive) pose.
    fn at(&self, ctx: &Ctx, arm: usize, goal: &RigidPose, tol_m: f64, tol_rad: f64) -> bool {
        (ctx.tool[arm].position - goal.position).norm() < tol_m
            && Self::angle_between(&ctx.tool[arm].rotation, &goal.rotation) < tol_rad
    }

    /// Velocity action driving one arm's integrated target toward its
    /// joint goal, capped at this arm's speed setting.
    fn drive(&self, ctx: &Ctx, arm: usize, out: &mut [f64]) {
        let dt = ctx.env.cfg.control_dt;
        let chain = ctx.env.chain(arm);
        for j in 0..DOF {
            let v = (self.q_goal[arm][j] - ctx.target_q[arm][j]) / dt;
            let a = v / chain.joints[j].velocity_limit;
            out[j] = a.clamp(-self.speed[arm], self.speed[arm]);
        }
        out[DOF] = self.width_cmd[arm];
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.phase_age = 0;
    }

    // ----- task logic -------------------------------------------------

    /// True when this desired pair already reads as connected: faces
    /// coincident and anti-parallel within loose thresholds.
    fn job_done_geometric(&self, ctx: &Ctx, job: &Job) -> bool {
        let (pa, na) = self.site_world(ctx, job.hub_site);
        let (pb, nb) = {
            let est = self.filters[job.sat].pose;
            let (p, n) = self.site_local(ctx, job.sat_site);
            (est.transform_point(&p), est.transform_vector(&n))
        };
        (pa - pb).norm() < 0.025 && na.dot(&nb) < -0.8
    }

    fn desired_connected_count(&self, ctx: &Ctx) -> usize {
        let meta = self.meta.as_ref().expect("episode begun");
        meta.jobs
            .iter()
            .filter(|j| self.job_done_geometric(ctx, j))
            .count()
    }

    /// Finds the closest opposite-polarity cross-block site pair that is
    /// not a desired pair: the best guess for an accidental weld.
    fn find_accidental_pair(&self, ctx: &Ctx) -> Option<(SiteId, SiteId)> {
        let world = ctx.env.world();
        let meta = self.meta.as_ref().expect("episode begun");
        let desired: Vec<(SiteId, SiteId)> = meta
            .jobs
            .iter()
            .map(|j| (j.hub_site, j.sat_site))
            .collect();
        let mut best: Option<(f64, SiteId, SiteId)> = None;
        for bi in 0..world.blocks.len() {
            for si in 0..world.blocks[bi].magnets.len() {
                for bj in (bi + 1)..world.blocks.len() {
                    for sj in 0..world.blocks[bj].magnets.len() {
                        let ia = SiteId { block: bi, site: si };
                        let ib = SiteId { block: bj, site: sj };
                        if world.blocks[bi].magnets[si].polarity
                            == world.blocks[bj].magnets[sj].polarity
                        {
                            continue;
                        }
                        if desired
                            .iter()
                            .any(|(a, b)| (*a == ia && *b == ib) || (*a == ib && *b == ia))
                        {
                            continue;
                        }
                        let (pa, _) = self.site_world(ctx, ia);
                        let (pb, _) = self.site_world(ctx, ib);
                        let d = (pa - pb).norm();
                        if best.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
                            best = Some((d, ia, ib));
                        }
                    }
                }
            }
        }
        best.map(|(_, a, b)| (a, b))
    }

    /// Hold spot for the hub: the grid candidate with the most clearance
    /// from the peripheral blocks' pickup corridors, including where the
    /// first delivered block will end up.
    fn choose_hold(&self) -> Vector3<f64> {
        let meta = self.meta.as_ref().expect("episode begun");
        let sats: Vec<Vector3<f64>> = meta
            .jobs
            .iter()
            .map(|j| self.filters[j.sat].pose.position)
            .collect();
        let mut best = (f64::NEG_INFINITY, Vector3::new(0.23, -0.06, self.opts.hold_z));
        for &x in &[0.17, 0.20, 0.23, 0.26, 0.29] {
            for &y in &[-0.03, -0.06, -0.09] {
                let h = Vector3::new(x, y, self.opts.hold_z);
                // Welded peripherals end up on the +y side of the hub,
                // near its two site offsets along world x.
                let w1 = h + Vector3::new(0.06, 0.09, 0.0);
                let w2 = h + Vector3::new(-0.06, 0.09, 0.0);
                let mut clearance = f64::INFINITY;
                for s in &sats {
                    for spot in [&h, &w1, &w2] {
                        let d = (Vector3::new(s.x, s.y, 0.0)
                            - Vector3::new(spot.x, spot.y, 0.0))
                        .norm();
                        clearance = clearance.min(d);
                    }
                }
                if clearance > best.0 {
                    best = (clearance, h);
                }
            }
        }
        best.1
    }

    fn start_pick(&mut self, ctx: &Ctx, arm: usize, block: usize, after: AfterPick) {
        self.after_pick = after;
        // An idle arm parked beside the pick target gets shoved by the
        // working arm (the link capsules collide); move it aside first.
        let other = 1 - arm;
        let est = self.block_est(ctx, block).position;
        let d = (ctx.tool[other].position.xy() - est.xy()).norm();
        if self.held[other].is_none() && d < 0.16 {
            if let Some(goal) = self.stow_goal(ctx, other, &est) {
                self.freeze[other] = goal;
                self.enter(Phase::Stow {
                    arm: other,
                    pick_arm: arm,
                    pick_block: block,
                });
                return;
            }
        }
        self.enter(Phase::PickApproach { arm, block });
    }

    /// A parking pose for `arm` on its own side of the table, away from
    /// `avoid`, that IK can reach without unwinding the wrist.
    fn stow_goal(&mut self, ctx: &Ctx, arm: usize, avoid: &Vector3<f64>) -> Option<RigidPose> {
        let sgn = if arm == LEFT { 1.0 } else { -1.0 };
        let rot = ctx.tool[arm].rotation;
        for &(x, y) in &[
            (0.26, 0.19),
            (0.33, 0.19),
            (0.20, 0.16),
            (0.36, 0.14),
            (0.22, 0.26),
            (0.33, 0.26),
            (0.15, 0.21),
            (0.42, 0.18),
            (0.14, 0.14),
        ] {
            let pos = Vector3::new(x, sgn * y, 0.22);
            if (pos.xy() - avoid.xy()).norm() < 0.12 {
                continue;
            }
            let goal = RigidPose::new(pos, rot);
            let sol = self.probe(ctx, arm, &goal);
            if sol.converged && q_dist(&sol.q, &ctx.q[arm]) < 2.5 {
                return Some(goal);
            }
        }
        None
    }

    /// Moves to the next job or finishes.
    fn next_job(&mut self, ctx: &Ctx) {
        let meta = self.meta.as_ref().expect("episode begun").clone();
        while self.job < meta.jobs.len() {
            if self.job_done_geometric(ctx, &meta.jobs[self.job]) {
                self.job += 1;
            } else {
                break;
            }
        }
        if self.job >= meta.jobs.len() {
            self.enter(Phase::Done);
        } else {
            self.start_pick(ctx, LEFT, meta.jobs[self.job].sat, AfterPick::Deliver);
        }
    }

    fn step_phase(&mut self, ctx: &Ctx) {
        let meta = self.meta.as_ref().expect("episode begun").clone();
        let opts = self.opts.clone();
        match self.phase {
            Phase::Stow {
                arm,
                pick_arm,
                pick_block,
            } => {
                self.speed[arm] = opts.speed_transit;
                let goal = self.freeze[arm];
                self.track(ctx, arm, &goal, 0.06, 0.3);
                if self.at(ctx, arm, &goal, 0.03, 0.3) || self.phase_age >= 10 {
                    self.enter(Phase::PickApproach {
                        arm: pick_arm,
                        block: pick_block,
                    });
                }
            }
            Phase::PickApproach { arm, block } => {
                self.speed[arm] = opts.speed_transit;
                self.width_cmd[arm] = 1.0;
                let est = self.block_est(ctx, block);
                let pos = Vector3::new(est.position.x, est.position.y, opts.transit_z);
                if self.phase_age == 0 {
                    let cands: Vec<Rotation3<f64>> = [0.0, 0.8, -0.8, 1.6, -1.6]
                        .iter()
                        .map(|&a| Self::down_rot(a))
                        .collect();
                    self.choose_rot(ctx, arm, pos, &cands);
                }
                let goal = RigidPose::new(pos, self.tool_rot[arm]);
                self.track(ctx, arm, &goal, 0.06, 0.35);
                if self.phase_age > 0 && self.at(ctx, arm, &goal, 0.02, 0.12) {
                    self.enter(Phase::PickDescend { arm, block });
                }
            }
            Phase::PickDescend { arm, block } => {
                self.speed[arm] = opts.speed_descend;
                let est = self.block_est(ctx, block);
                let pos = est.position + Vector3::new(0.0, 0.0, opts.grasp_above);
                let goal = RigidPose::new(pos, self.tool_rot[arm]);
                self.track(ctx, arm, &goal, 0.035, 0.2);
                if self.phase_age > 1 && self.at(ctx, arm, &goal, 0.008, 0.06) {
                    self.enter(Phase::PickClose { arm, block });
                }
            }
            Phase::PickClose { arm, block } => {
                self.width_cmd[arm] = -1.0;
                self.speed[arm] = opts.speed_descend;
                if self.phase_age >= 2 {
                    // Tentative grasp: seed the offset estimate from the
                    // latest raw measurement.
                    self.offsets[arm] =
                        Some(ctx.tool[arm].inverse().compose(&self.filters[block].pose));
                    self.held[arm] = Some(block);
                    self.verify_z0 = self.filters[block].pose.position.z;
                    match self.after_pick {
                        AfterPick::SepSecond => {
                            self.start_pick(
                                ctx,
                                LEFT,
                                self.sep_pair.expect("sep pair").1.block,
                                AfterPick::SepPull,
                            );
                        }
                        AfterPick::SepPull => self.enter(Phase::SepPull),
                        _ => self.enter(Phase::PickLift { arm, block }),
                    }
                }
            }
            Phase::PickLift { arm, block } => {
                self.speed[arm] = opts.speed_descend;
                if self.phase_age == 0 {
                    let pos = Vector3::new(
                        ctx.tool[arm].position.x,
                        ctx.tool[arm].position.y,
                        self.verify_z0 + opts.grasp_above + opts.lift,
                    );
                    self.freeze[arm] = RigidPose::new(pos, self.tool_rot[arm]);
                }
                let goal = self.freeze[arm];
                self.track(ctx, arm, &goal, 0.05, 0.2);
                if self.at(ctx, arm, &goal, 0.02, 0.12) || self.phase_age >= 10 {
                    self.enter(Phase::PickVerify { arm, block });
                }
            }
            Phase::PickVerify { arm, block } => {
                if self.phase_age >= 3 {
                    let risen =
                        self.filters[block].pose.position.z > self.verify_z0 + opts.verify_rise;
                    if risen {
                        match self.after_pick {
                            AfterPick::Carry => self.enter(Phase::CarryHub),
                            AfterPick::Deliver => self.enter(Phase::DeliverHigh { job: self.job }),
                            // Separation picks skip verification.
                            AfterPick::SepSecond | AfterPick::SepPull => {
                                unreachable!("separation skips verify")
                            }
                        }
                    } else {
                        self.held[arm] = None;
                        self.offsets[arm] = None;
                        self.width_cmd[arm] = 1.0;
                        self.enter(Phase::PickApproach { arm, block });
                    }
                }
            }
            Phase::CarryHub => {
                self.speed[RIGHT] = opts.speed_transit;
                if self.phase_age == 0 {
                    let hold = self.choose_hold();
                    let off = self.offsets[RIGHT].expect("holding hub");
                    // Yaw the held hub (never re-roll it: that can demand a
                    // wrist turn past a joint stop) so the next pending
                    // job's mating face points toward the delivering arm's
                    // side (+y), or as close to it as the wrist reaches.
                    let hub_rot = self.block_est(ctx, meta.hub).rotation;
                    let jidx = meta
                        .jobs
                        .iter()
                        .position(|j| !self.job_done_geometric(ctx, j))
                        .unwrap_or(0);
                    let (_, n_now) = self.site_world(ctx, meta.jobs[jidx].hub_site);
                    let to_left = wrap_pi(std::f64::consts::FRAC_PI_2 - n_now.y.atan2(n_now.x));
                    let mut chosen = false;
                    let mut fallback: Option<(f64, RigidPose, RigidPose)> = None;
                    for &dv in &[0.0, 0.35, -0.35, 0.7, -0.7, 1.05, -1.05, 1.4, -1.4] {
                        let dy = wrap_pi(to_left + dv);
                        let t_hold = RigidPose::new(hold, Self::rz(dy) * hub_rot).renormalized();
                        let tool = t_hold.compose(&off.inverse());
                        let sol = self.probe(ctx, RIGHT, &tool);
                        if sol.converged {
                            let d = q_dist(&sol.q, &ctx.q[RIGHT]);
                            if d < 2.5 {
                                self.hold_pose = t_hold;
                                self.freeze[RIGHT] = tool;
                                chosen = true;
                                break;
                            }
                            if fallback.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
                                fallback = Some((d, t_hold, tool));
                            }
                        }
                    }
                    if !chosen {
                        if let Some((_, t_hold, tool)) = fallback {
                            self.hold_pose = t_hold;
                            self.freeze[RIGHT] = tool;
                        } else {
                            let t_hold = RigidPose::new(hold, hub_rot);
                            self.hold_pose = t_hold;
                            self.freeze[RIGHT] = t_hold.compose(&off.inverse());
                        }
                    }
                }
                let goal = self.freeze[RIGHT];
                self.track(ctx, RIGHT, &goal, 0.05, 0.25);
                if self.phase_age > 2 && self.at(ctx, RIGHT, &goal, 0.015, 0.1) {
                    self.job = 0;
                    self.next_job(ctx);
                }
            }
            Phase::DeliverHigh { job } => {
                let j = meta.jobs[job];
                self.speed[LEFT] = opts.speed_transit;
                let off = self.offsets[LEFT].expect("holding peripheral");
                let lift = Vector3::new(0.0, 0.0, opts.high_rise);
                if self.phase_age == 0 {
                    self.baseline_connections = ctx.connections;
                    // Pick the mating roll whose tool pose the arm can
                    // actually reach, preferring the one nearest the
                    // wrist's present configuration.
                    let mut best_ok: Option<(f64, f64)> = None;
                    let mut best_err: Option<(f64, f64)> = None;
                    for &r in &[0.0, 1.5707963, 3.1415927, -1.5707963] {
                        let t_blk = self.block_target(ctx, &j, opts.gap_far, r);
                        let tool = t_blk.compose(&off.inverse());
                        let sol = self.probe(ctx, LEFT, &tool);
                        if sol.converged {
                            let d = q_dist(&sol.q, &ctx.q[LEFT]);
                            if best_ok.as_ref().map_or(true, |(bd, _)| d < *bd) {
                                best_ok = Some((d, r));
                            }
                        } else {
                            let err = sol.pos_err + sol.rot_err;
                            if best_err.as_ref().map_or(true, |(be, _)| err < *be) {
                                best_err = Some((err, r));
                            }
                        }
                    }
                    self.deliver_roll = best_ok
                        .or(best_err)
                        .expect("roll candidates")
                        .1;
                }
                let t_blk = self.block_target(ctx, &j, opts.gap_far, self.deliver_roll);
                let goal =
                    RigidPose::new(t_blk.position + lift, t_blk.rotation).compose(&off.inverse());
                // Climb before translating so the held block clears the
                // hub instead of grazing it on a diagonal path.
                let cur = ctx.tool[LEFT].position;
                if cur.z < goal.position.z - 0.02 {
                    let up = RigidPose::new(
                        Vector3::new(cur.x, cur.y, goal.position.z),
                        goal.rotation,
                    );
                    self.track(ctx, LEFT, &up, 0.06, 0.3);
                } else {
                    self.track(ctx, LEFT, &goal, 0.06, 0.3);
                }
                if self.phase_age > 0 && self.at(ctx, LEFT, &goal, 0.025, 0.1) {
                    self.enter(Phase::DeliverFar { job });
                }
            }
            Phase::DeliverFar { job } => {
                let j = meta.jobs[job];
                self.speed[LEFT] = opts.speed_descend;
                let off = self.offsets[LEFT].expect("holding peripheral");
                let t_blk = self.block_target(ctx, &j, opts.gap_far, self.deliver_roll);
                let goal = t_blk.compose(&off.inverse());
                self.track(ctx, LEFT, &goal, 0.035, 0.15);
                if self.phase_age > 0 && self.at(ctx, LEFT, &goal, 0.01, 0.06) {
                    self.enter(Phase::DeliverPush { job });
                }
            }
            Phase::DeliverPush { job } => {
                let j = meta.jobs[job];
                self.speed[LEFT] = opts.speed_push;
                if ctx.connections > self.baseline_connections {
                    self.freeze[LEFT] = ctx.tool[LEFT];
                    self.enter(Phase::ReleaseSat { job });
                    return;
                }
                let off = self.offsets[LEFT].expect("holding peripheral");
                let t_blk = self.block_target(ctx, &j, opts.gap_push, self.deliver_roll);
                let goal = t_blk.compose(&off.inverse());
                self.track(ctx, LEFT, &goal, 0.012, 0.08);
                if self.phase_age > 8 && self.at(ctx, LEFT, &goal, 0.005, 0.05) {
                    // Pushed past flush with no snap: back off and re-aim
                    // with the improved filters.
                    self.enter(Phase::DeliverFar { job });
                }
            }
            Phase::ReleaseSat { job } => {
                // Stop the arm and open.
                self.q_goal[LEFT] = ctx.target_q[LEFT];
                self.width_cmd[LEFT] = 1.0;
                if self.phase_age >= 2 {
                    self.held[LEFT] = None;
                    self.offsets[LEFT] = None;
                    self.enter(Phase::RetreatSat { job });
                }
            }
            Phase::RetreatSat { job } => {
                let j = meta.jobs[job];
                self.speed[LEFT] = opts.speed_descend;
                self.width_cmd[LEFT] = 1.0;
                if self.phase_age == 0 {
                    let (_, n) = self.site_world(ctx, j.hub_site);
                    let pos = ctx.tool[LEFT].position + 0.10 * n + Vector3::new(0.0, 0.0, 0.06);
                    self.freeze[LEFT] = RigidPose::new(pos, self.tool_rot[LEFT]);
                }
                let goal = self.freeze[LEFT];
                self.track(ctx, LEFT, &goal, 0.05, 0.25);
                if self.at(ctx, LEFT, &goal, 0.03, 0.3) || self.phase_age >= 8 {
                    self.job = job + 1;
                    self.next_job(ctx);
                }
            }
            Phase::SepPull => {
                self.speed[LEFT] = 0.2;
                if self.phase_age == 0 {
                    self.baseline_connections = ctx.connections;
                    let (sa, _) = self.sep_pair.expect("sep pair");
                    // Outward normal of the right-held block's welded
                    // face: pulling the left block along it separates.
                    let (_, n) = self.site_world(ctx, sa);
                    let pos = ctx.tool[LEFT].position + opts.pull_travel * n;
                    self.freeze[LEFT] = RigidPose::new(pos, ctx.tool[LEFT].rotation);
                } else if ctx.connections < self.baseline_connections {
                    self.enter(Phase::SepRelease);
                    return;
                }
                let goal = self.freeze[LEFT];
                self.track(ctx, LEFT, &goal, 0.02, 0.1);
                if self.phase_age > 4 && self.at(ctx, LEFT, &goal, 0.01, 0.1) {
                    // Pull finished without breaking the weld (a grasp
                    // probably failed): release and retry from scratch.
                    self.enter(Phase::SepRelease);
                }
            }
            Phase::SepRelease => {
                self.q_goal[LEFT] = ctx.target_q[LEFT];
                self.q_goal[RIGHT] = ctx.target_q[RIGHT];
                self.width_cmd = [1.0, 1.0];
                if self.phase_age >= 2 {
                    self.held = [None, None];
                    self.offsets = [None, None];
                    self.enter(Phase::SepRetreat);
                }
            }
            Phase::SepRetreat => {
                if self.phase_age == 0 {
                    for arm in 0..2 {
                        let pos = Vector3::new(
                            ctx.tool[arm].position.x,
                            ctx.tool[arm].position.y,
                            opts.transit_z,
                        );
                        self.freeze[arm] = RigidPose::new(pos, ctx.tool[arm].rotation);
                    }
                }
                let goals = self.freeze;
                for arm in 0..2 {
                    self.speed[arm] = opts.speed_descend;
                    self.track(ctx, arm, &goals[arm], 0.05, 0.2);
                }
                if (self.at(ctx, LEFT, &goals[LEFT], 0.03, 0.3)
                    && self.at(ctx, RIGHT, &goals[RIGHT], 0.03, 0.3))
                    || self.phase_age >= 10
                {
                    // Re-run the weld check next step; if clear, restart
                    // the main script.
                    self.sep_checked = false;
                    self.sep_pair = None;
                    self.start_pick(ctx, RIGHT, meta.hub, AfterPick::Carry);
                }
            }
            Phase::Done => {
                self.q_goal[LEFT] = ctx.target_q[LEFT];
                self.q_goal[RIGHT] = ctx.target_q[RIGHT];
            }
        }
    }
}

impl Controller for OracleController {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn begin_episode(&mut self, env: &Env, obs: &[f64], _seed: u64) {
        assert_eq!(
            env.cfg.arm_mode,
            ArmMode::Both,
            "the scripted controller needs both arms"
        );
        let world = env.world();
        let pairs = &world.desired_pairs;
        assert!(
            !pairs.is_empty(),
            "the scripted controller needs at least one desired connection"
        );
        // Hub: the block appearing in the most desired pairs.
        let degree = |b: usize| {
            pairs
                .iter()
                .filter(|(x, y)| x.block == b || y.block == b)
                .count()
        };
        let hub = (0..world.blocks.len())
            .max_by_key(|&b| degree(b))
            .expect("blocks exist");
        let jobs: Vec<Job> = pairs
            .iter()
            .map(|&(a, b)| {
                let (hub_site, sat_site) = if a.block == hub { (a, b) } else { (b, a) };
                assert_eq!(hub_site.block, hub, "every desired pair must touch the hub");
                Job {
                    sat: sat_site.block,
                    sat_site,
                    hub_site,
                }
            })
            .collect();
        self.meta = Some(Meta {
            hub,
            jobs,
            q_init: [env.cfg.q_init_left, env.cfg.q_init_right],
        });
        self.filters = vec![PoseFilter::new(); world.blocks.len()];
        for b in 0..world.blocks.len() {
            let meas = env.obs_block_pose(obs, b);
            self.filters[b].push(&meas, 1.0);
        }
        self.offsets = [None, None];
        self.held = [None, None];
        self.phase_age = 0;
        self.step_idx = 0;
        self.q_goal = [
            Self::obs_target_q(env, obs, 0),
            Self::obs_target_q(env, obs, 1),
        ];
        self.speed = [0.3, 0.3];
        self.width_cmd = [1.0, 1.0];
        self.tool_rot = [Self::down_rot(0.0); 2];
        self.job = 0;
        self.deliver_roll = 0.0;
        self.verify_z0 = 0.0;
        self.baseline_connections = 0;
        self.sep_checked = false;
        self.sep_pair = None;
        let ctx = self.make_ctx(env, obs, None);
        self.start_pick(&ctx, RIGHT, hub, AfterPick::Carry);
    }

    fn act(&mut self, env: &Env, obs: &[f64], info: Option<&StepInfo>) -> Vec<f64> {
        assert!(self.meta.is_some(), "begin_episode must run first");
        self.step_idx += 1;
        let n_blocks = env.world().blocks.len();
        for b in 0..n_blocks {
            let meas = env.obs_block_pose(obs, b);
            let alpha = self.opts.filter_gain;
            self.filters[b].push(&meas, alpha);
        }
        let ctx = self.make_ctx(env, obs, info);

        // Refine grasp offsets from raw measurements while holding: the
        // offset is constant, so this converges even while moving.
        for arm in 0..2 {
            if let (Some(block), Some(off)) = (self.held[arm], self.offsets[arm].as_ref()) {
                let meas = env.obs_block_pose(obs, block);
                let meas_off = ctx.tool[arm].inverse().compose(&meas);
                let mut f = PoseFilter {
                    pose: *off,
                    ready: true,
                };
                f.push(&meas_off, self.opts.offset_gain);
                self.offsets[arm] = Some(f.pose);
            }
        }

        // One-time spawn-weld check once the filters have warmed up.
        if !self.sep_checked && self.step_idx >= 3 {
            if let Some(i) = info {
                self.sep_checked = true;
                if i.connections > self.desired_connected_count(&ctx) {
                    if let Some(pair) = self.find_accidental_pair(&ctx) {
                        self.held = [None, None];
                        self.offsets = [None, None];
                        self.width_cmd = [1.0, 1.0];
                        self.sep_pair = Some(pair);
                        self.start_pick(&ctx, RIGHT, pair.0.block, AfterPick::SepSecond);
                    }
                }
            }
        }

        if self.phase_age > self.opts.phase_timeout {
            // Re-plan the current phase from scratch.
            self.phase_age = 0;
            let phase = self.phase;
            self.enter(phase);
        }

        let phase_before = self.phase;
        self.step_phase(&ctx);
        let transitioned = self.phase != phase_before;
        if self.opts.verbose {
            let qerr = |arm: usize| {
                (0..DOF)
                    .map(|j| (self.q_goal[arm][j] - ctx.target_q[arm][j]).abs())
                    .fold(0.0f64, f64::max)
            };
            eprintln!(
                "step {:3} {:?} age {:2} conn {} qerrL {:.3} qerrR {:.3} toolL ({:.3} {:.3} {:.3}) toolR ({:.3} {:.3} {:.3}) wid {:?} held {:?}",
                self.step_idx,
                self.phase,
                self.phase_age,
                ctx.connections,
                qerr(LEFT),
                qerr(RIGHT),
                ctx.tool[LEFT].position.x,
                ctx.tool[LEFT].position.y,
                ctx.tool[LEFT].position.z,
                ctx.tool[RIGHT].position.x,
                ctx.tool[RIGHT].position.y,
                ctx.tool[RIGHT].position.z,
                self.width_cmd,
                self.held,
            );
            if std::env::var("TRACE_JOINTS").is_ok() {
                let rel = self.freeze[RIGHT].rotation * ctx.tool[RIGHT].rotation.inverse();
                let v = crate::ik::rot_vec(&rel);
                let cur_v = crate::ik::rot_vec(&ctx.tool[RIGHT].rotation);
                let goal_v = crate::ik::rot_vec(&self.freeze[RIGHT].rotation);
                eprintln!(
                    "    R q_goal {:?}\n    R target {:?}\n    R q      {:?}\n    rel ang {:.3} axis ({:.2} {:.2} {:.2}) cur ({:.2} {:.2} {:.2}) goal ({:.2} {:.2} {:.2})",
                    self.q_goal[RIGHT].map(|x| (x * 1000.0).round() / 1000.0),
                    ctx.target_q[RIGHT].map(|x| (x * 1000.0).round() / 1000.0),
                    ctx.q[RIGHT].map(|x| (x * 1000.0).round() / 1000.0),
                    v.norm(),
                    v.x / v.norm().max(1e-12), v.y / v.norm().max(1e-12), v.z / v.norm().max(1e-12),
                    cur_v.x, cur_v.y, cur_v.z,
                    goal_v.x, goal_v.y, goal_v.z,
                );
            }
        }
        // A phase entered this step has not acted yet: let it see age 0
        // on its first execution next step.
        if !transitioned {
            self.phase_age += 1;
        }

        let mut action = vec![0.0; env.action_dim()];
        self.drive(&ctx, LEFT, &mut action[0..DOF + 1]);
        self.drive(&ctx, RIGHT, &mut action[DOF + 1..2 * (DOF + 1)]);
        action
    }
}
