//! Quasi-static scene model: blocks on a floor, two grippers, magnetic
//! snap/break events, and penalty contact forces. There is no inertia;
//! grasped groups follow their gripper rigidly, free groups relax onto
//! the floor, and magnet connections weld groups together until pulled
//! apart.

pub mod blocks;
pub mod contact;

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub use blocks::{
    Attachment, Block, BlockSpec, BlockType, Blueprint, Connection, MagnetSite, MagnetSpec,
    Polarity, SiteId,
};
pub use contact::{
    Capsule, ContactBody, ContactKey, ContactKind, ContactRecord, Obb,
};

use crate::error::SimError;
use crate::pose::RigidPose;
use contact::{obb_penetration, point_obb_signed_distance, segment_segment_distance};

/// Scene constants. Forces are in abstract force units calibrated so a
/// resting block reads below the tightest penalty limit of interest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Max site separation for a magnetic snap, m.
    pub snap_distance: f64,
    /// Max deviation from anti-parallel face normals for a snap, deg.
    pub snap_angle_deg: f64,
    /// Magnet holding strength: a connection breaks when the separating
    /// pull proxy exceeds this, force units.
    pub break_force: f64,
    /// Width below which a closing gripper grasps a reachable block, m.
    pub grasp_width: f64,
    /// Width above which a holding gripper releases, m.
    pub release_width: f64,
    /// Max distance from tool center to a block's long axis for a
    /// grasp, m.
    pub grasp_radius: f64,
    /// Fraction of the half length within which the grasp band lies.
    pub grasp_band: f64,
    /// Fully open gripper width, m.
    pub max_width: f64,
    /// Contact stiffness, force units per m of penetration.
    pub k_contact: f64,
    /// Contact damping, force units per m/s of approach speed.
    pub c_contact: f64,
    /// Static floor support force for a resting block, force units.
    pub support_force: f64,
    /// Critically damped settle rate for free groups, 1/s.
    pub settle_rate: f64,
    /// Free blocks never sit below the floor by more than this, m.
    pub floor_tolerance: f64,
    /// A block within this height of the floor counts as supported, m.
    pub touch_threshold: f64,
    /// Pull proxy stiffness: force units per m of mismatch between a
    /// secondary gripper's target and its block.
    pub pull_stiffness: f64,
    /// A secondary grasp slips off when its target mismatch exceeds
    /// this, m.
    pub grip_slip: f64,
    /// Arm link capsule radius, m.
    pub link_radius: f64,
    /// Tool-center sphere radius for gripper-block contact, m.
    pub tool_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            snap_distance: 0.01,
            snap_angle_deg: 30.0,
            break_force: 3.0,
            grasp_width: 0.030,
            release_width: 0.035,
            grasp_radius: 0.02,
            grasp_band: 0.9,
            max_width: 0.08,
            k_contact: 400.0,
            c_contact: 10.0,
            support_force: 0.8,
            settle_rate: 60.0,
            floor_tolerance: 1e-4,
            touch_threshold: 1e-3,
            pull_stiffness: 100.0,
            grip_slip: 0.05,
            link_radius: 0.02,
            tool_radius: 0.015,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("snap_distance", self.snap_distance),
            ("snap_angle_deg", self.snap_angle_deg),
            ("break_force", self.break_force),
            ("grasp_width", self.grasp_width),
            ("release_width", self.release_width),
            ("grasp_radius", self.grasp_radius),
            ("grasp_band", self.grasp_band),
            ("max_width", self.max_width),
            ("k_contact", self.k_contact),
            ("support_force", self.support_force),
            ("settle_rate", self.settle_rate),
            ("floor_tolerance", self.floor_tolerance),
            ("touch_threshold", self.touch_threshold),
            ("pull_stiffness", self.pull_stiffness),
            ("grip_slip", self.grip_slip),
            ("link_radius", self.link_radius),
            ("tool_radius", self.tool_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SimError::config(format!("{name} must be > 0")));
            }
        }
        if self.c_contact < 0.0 {
            return Err(SimError::config("c_contact must be >= 0"));
        }
        if self.release_width <= self.grasp_width {
            return Err(SimError::config(
                "release_width must exceed grasp_width (hysteresis)",
            ));
        }
        if self.grasp_band > 1.0 {
            return Err(SimError::config("grasp_band must be <= 1"));
        }
        Ok(())
    }

    fn settle_alpha(&self, dt: f64) -> f64 {
        let x = self.settle_rate * dt;
        1.0 - (1.0 + x) * (-x).exp()
    }
}

/// A grasp: the held block and the gripper-frame offset captured at
/// grasp time, so block pose = gripper pose composed with offset.
#[derive(Debug, Clone)]
pub struct Grasp {
    pub block: usize,
    pub offset: RigidPose,
}

#[derive(Debug, Clone)]
pub struct Gripper {
    pub pose: RigidPose,
    pub width: f64,
    pub grasp: Option<Grasp>,
}

/// Commanded gripper state for one physics tick.
#[derive(Debug, Clone, Copy)]
pub struct GripperInput {
    pub pose: RigidPose,
    pub width: f64,
}

/// Everything the world needs from the arms for one tick.
#[derive(Debug, Clone)]
pub struct WorldInputs {
    pub grippers: [GripperInput; 2],
    /// Collision capsules for each arm's moving links.
    pub arm_links: [Vec<Capsule>; 2],
}

pub struct World {
    pub cfg: WorldConfig,
    pub blocks: Vec<Block>,
    pub states: Vec<RigidPose>,
    pub connections: Vec<Connection>,
    pub grippers: [Gripper; 2],
    pub desired_pairs: Vec<(SiteId, SiteId)>,
    prev_depths: BTreeMap<ContactKey, f64>,
}

impl World {
    pub fn new(blueprint: &Blueprint, cfg: WorldConfig) -> Result<World, SimError> {
        cfg.validate()?;
        blueprint.validate()?;
        let blocks = blueprint.build_blocks()?;
        let desired_pairs = blueprint.desired_pairs()?;
        let n = blocks.len();
        let open = cfg.max_width;
        Ok(World {
            cfg,
            blocks,
            states: vec![RigidPose::identity(); n],
            connections: Vec::new(),
            grippers: [
                Gripper {
                    pose: RigidPose::identity(),
                    width: open,
                    grasp: None,
                },
                Gripper {
                    pose: RigidPose::identity(),
                    width: open,
                    grasp: None,
                },
            ],
            desired_pairs,
            prev_depths: BTreeMap::new(),
        })
    }

    /// Puts the scene into a fresh episode state.
    pub fn reset(
        &mut self,
        block_poses: Vec<RigidPose>,
        gripper_poses: [RigidPose; 2],
        widths: [f64; 2],
    ) -> Result<(), SimError> {
        if block_poses.len() != self.blocks.len() {
            return Err(SimError::contract(format!(
                "reset expects {} block poses, got {}",
                self.blocks.len(),
                block_poses.len()
            )));
        }
        self.states = block_poses;
        self.connections.clear();
        self.prev_depths.clear();
        for (g, pose) in self.grippers.iter_mut().zip(gripper_poses) {
            g.pose = pose;
            g.grasp = None;
        }
        self.grippers[0].width = widths[0];
        self.grippers[1].width = widths[1];
        Ok(())
    }

    /// Advances the scene one physics tick. Order: grasp transitions,
    /// rigid motion and settling, magnetic snaps, contact forces, then
    /// magnetic breaks.
    pub fn step(&mut self, inputs: &WorldInputs, dt: f64) -> Vec<ContactRecord> {
        self.grasp_check(inputs);
        self.apply_motion(dt);
        self.check_snap();
        let records = self.compute_contact_forces(inputs, dt);
        self.check_break();
        records
    }

    /// All desired blueprint connections currently exist.
    pub fn success(&self) -> bool {
        self.desired_pairs
            .iter()
            .all(|(a, b)| self.connections.iter().any(|c| c.joins(*a, *b)))
    }

    pub fn desired_pair_connected(&self, idx: usize) -> bool {
        let (a, b) = self.desired_pairs[idx];
        self.connections.iter().any(|c| c.joins(a, b))
    }

    pub fn attachment(&self, block: usize) -> Attachment {
        for (g, grip) in self.grippers.iter().enumerate() {
            if let Some(grasp) = &grip.grasp {
                if grasp.block == block {
                    return Attachment::Grasped { gripper: g };
                }
            }
        }
        let conns: Vec<usize> = self
            .connections
            .iter()
            .enumerate()
            .filter(|(_, c)| c.site_a.block == block || c.site_b.block == block)
            .map(|(i, _)| i)
            .collect();
        if conns.is_empty() {
            Attachment::Free
        } else {
            Attachment::Assembly { connections: conns }
        }
    }

    pub fn site(&self, id: SiteId) -> &MagnetSite {
        &self.blocks[id.block].magnets[id.site]
    }

    pub fn site_world_position(&self, id: SiteId) -> Vector3<f64> {
        self.site(id).world_position(&self.states[id.block])
    }

    pub fn site_world_normal(&self, id: SiteId) -> Vector3<f64> {
        self.site(id).world_normal(&self.states[id.block])
    }

    pub fn obb(&self, block: usize) -> Obb {
        Obb {
            pose: self.states[block],
            half: self.blocks[block].half_extents,
        }
    }

    /// Union-find roots over the weld graph: blocks sharing a root move
    /// as one rigid group. The root is the lowest block index.
    pub fn group_roots(&self) -> Vec<usize> {
        let n = self.blocks.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        for conn in &self.connections {
            let (a, b) = conn.blocks();
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi] = lo;
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    /// The anchor gripper of each group root: the lowest gripper index
    /// holding any block of the group, if any.
    fn group_anchor(&self, roots: &[usize], root: usize) -> Option<usize> {
        for (g, grip) in self.grippers.iter().enumerate() {
            if let Some(grasp) = &grip.grasp {
                if roots[grasp.block] == root {
                    return Some(g);
                }
            }
        }
        None
    }

    /// Processes width-driven release and grasp transitions, then stores
    /// the commanded gripper state.
    pub fn grasp_check(&mut self, inputs: &WorldInputs) {
        for g in 0..2 {
            let new_width = inputs.grippers[g].width;
            let prev_width = self.grippers[g].width;
            let pose = inputs.grippers[g].pose;
            let holding = self.grippers[g].grasp.is_some();
            if holding {
                if new_width > self.cfg.release_width {
                    self.grippers[g].grasp = None;
                }
            } else if prev_width >= self.cfg.grasp_width && new_width < self.cfg.grasp_width {
                let other = self.grippers[1 - g].grasp.as_ref().map(|gr| gr.block);
                let tool = pose.position;
                let mut best: Option<(f64, usize)> = None;
                for (b, block) in self.blocks.iter().enumerate() {
                    if Some(b) == other {
                        continue;
                    }
                    let dist = self.axis_distance(block, &self.states[b], &tool);
                    if dist <= self.cfg.grasp_radius {
                        let better = match best {
                            None => true,
                            Some((d, _)) => dist < d,
                        };
                        if better {
                            best = Some((dist, b));
                        }
                    }
                }
                if let Some((_, b)) = best {
                    self.grippers[g].grasp = Some(Grasp {
                        block: b,
                        offset: pose.inverse().compose(&self.states[b]),
                    });
                }
            }
            self.grippers[g].pose = pose;
            self.grippers[g].width = new_width;
        }
    }

    /// Distance from the tool point to the central band of the block's
    /// long axis.
    fn axis_distance(&self, block: &Block, pose: &RigidPose, tool: &Vector3<f64>) -> f64 {
        let local = pose.inverse().transform_point(tool);
        let band = self.cfg.grasp_band * block.half_extents.z;
        let z = local.z.clamp(-band, band);
        let on_axis = pose.transform_point(&Vector3::new(0.0, 0.0, z));
        (tool - on_axis).norm()
    }

    /// Moves anchored groups rigidly with their anchor gripper, slips
    /// overstretched secondary grasps, and settles free groups onto the
    /// floor.
    fn apply_motion(&mut self, dt: f64) {
        let roots = self.group_roots();
        // Anchored groups follow the anchor; iterate grippers in index
        // order so the anchor (lowest index in the group) moves first.
        for g in 0..2 {
            let Some(grasp) = self.grippers[g].grasp.clone() else {
                continue;
            };
            let root = roots[grasp.block];
            let anchor = self.group_anchor(&roots, root).expect("grasped group has an anchor");
            let target = self.grippers[g].pose.compose(&grasp.offset);
            if anchor == g {
                let old = self.states[grasp.block];
                let delta = target.compose(&old.inverse());
                for b in 0..self.blocks.len() {
                    if roots[b] == root {
                        self.states[b] = delta.compose(&self.states[b]).renormalized();
                    }
                }
            } else {
                // Secondary grasp: the group follows the anchor; if this
                // hand has diverged too far from where it holds the
                // block, the grip slips off.
                let mismatch = (target.position - self.states[grasp.block].position).norm();
                if mismatch > self.cfg.grip_slip {
                    self.grippers[g].grasp = None;
                }
            }
        }
        // Free groups settle vertically onto the floor.
        let alpha = self.cfg.settle_alpha(dt);
        let n = self.blocks.len();
        let mut handled = vec![false; n];
        for b in 0..n {
            let root = roots[b];
            if handled[root] {
                continue;
            }
            handled[root] = true;
            if self.group_anchor(&roots, root).is_some() {
                continue;
            }
            let mut min_z = f64::INFINITY;
            for i in 0..n {
                if roots[i] == root {
                    min_z = min_z.min(self.blocks[i].min_corner_z(&self.states[i]));
                }
            }
            // Deadband within the floor tolerance keeps resting groups
            // bitwise stable.
            let dz = if min_z < -self.cfg.floor_tolerance {
                // Rigid floor: released penetration resolves immediately.
                -min_z
            } else if min_z > self.cfg.floor_tolerance {
                -alpha * min_z
            } else {
                0.0
            };
            if dz != 0.0 {
                let delta = Vector3::new(0.0, 0.0, dz);
                for i in 0..n {
                    if roots[i] == root {
                        self.states[i] = self.states[i].translated(&delta);
                    }
                }
            }
        }
    }

    /// Creates connections for every eligible opposite-polarity site
    /// pair within snap range, adjusting the incoming group to an
    /// idealized flush weld. Returns the number of new connections.
    pub fn check_snap(&mut self) -> usize {
        let cos_limit = -(self.cfg.snap_angle_deg.to_radians().cos());
        let mut created = 0;
        // A snap can bring further pairs into range; iterate to a fixed
        // point (bounded by the total number of sites).
        let max_rounds = self.blocks.iter().map(|b| b.magnets.len()).sum::<usize>();
        for _ in 0..max_rounds.max(1) {
            let Some((site_a, site_b)) = self.find_snap_candidate(cos_limit) else {
                break;
            };
            self.weld(site_a, site_b);
            created += 1;
        }
        created
    }

    fn site_connected(&self, id: SiteId) -> bool {
        self.connections
            .iter()
            .any(|c| c.site_a == id || c.site_b == id)
    }

    fn find_snap_candidate(&self, cos_limit: f64) -> Option<(SiteId, SiteId)> {
        let roots = self.group_roots();
        let n = self.blocks.len();
        for bi in 0..n {
            for si in 0..self.blocks[bi].magnets.len() {
                let ia = SiteId { block: bi, site: si };
                if self.site_connected(ia) {
                    continue;
                }
                for bj in (bi + 1)..n {
                    if roots[bi] == roots[bj] {
                        continue;
                    }
                    for sj in 0..self.blocks[bj].magnets.len() {
                        let ib = SiteId { block: bj, site: sj };
                        if self.site_connected(ib) {
                            continue;
                        }
                        if self.site(ia).polarity == self.site(ib).polarity {
                            continue;
                        }
                        let pa = self.site_world_position(ia);
                        let pb = self.site_world_position(ib);
                        if (pa - pb).norm() > self.cfg.snap_distance {
                            continue;
                        }
                        let na = self.site_world_normal(ia);
                        let nb = self.site_world_normal(ib);
                        if na.dot(&nb) > cos_limit {
                            continue;
                        }
                        return Some((ia, ib));
                    }
                }
            }
        }
        None
    }

    /// Welds two sites: one group is moved so the faces sit flush
    /// (coincident sites, exactly anti-parallel normals), then the
    /// relative pose is recorded. A free group yields to an anchored
    /// one; between two anchored groups the higher-index anchor yields.
    fn weld(&mut self, site_a: SiteId, site_b: SiteId) {
        let roots = self.group_roots();
        let root_a = roots[site_a.block];
        let root_b = roots[site_b.block];
        let anchor_a = self.group_anchor(&roots, root_a);
        let anchor_b = self.group_anchor(&roots, root_b);
        let mover_is_b = match (anchor_a, anchor_b) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => b >= a,
        };
        let (target, mover) = if mover_is_b {
            (site_a, site_b)
        } else {
            (site_b, site_a)
        };
        let mover_root = roots[mover.block];

        let n_target = self.site_world_normal(target);
        let n_mover = self.site_world_normal(mover);
        let p_mover = self.site_world_position(mover);
        // Never anti-parallel here: the snap test already guarantees the
        // normals are within the snap cone of anti-parallel.
        let fix = Rotation3::rotation_between(&n_mover, &(-n_target))
            .unwrap_or_else(Rotation3::identity);
        for b in 0..self.blocks.len() {
            if roots[b] == mover_root {
                self.states[b] = self.states[b].rotated_about(&fix, &p_mover).renormalized();
            }
        }
        let shift = self.site_world_position(target) - self.site_world_position(mover);
        for b in 0..self.blocks.len() {
            if roots[b] == mover_root {
                self.states[b] = self.states[b].translated(&shift);
            }
        }

        let (lo, hi) = if site_a < site_b {
            (site_a, site_b)
        } else {
            (site_b, site_a)
        };
        let weld = self.states[lo.block]
            .inverse()
            .compose(&self.states[hi.block]);
        self.connections.push(Connection {
            site_a: lo,
            site_b: hi,
            weld,
        });
    }

    /// Penalty contact model. Every pair in contact produces one record
    /// with force k * depth + c * approach speed (clamped at zero), plus
    /// the static support term for floor-supported blocks.
    pub fn compute_contact_forces(&mut self, inputs: &WorldInputs, dt: f64) -> Vec<ContactRecord> {
        let roots = self.group_roots();
        let mut records = Vec::new();
        let mut depths: BTreeMap<ContactKey, f64> = BTreeMap::new();
        let cfg = &self.cfg;

        let push = |records: &mut Vec<ContactRecord>,
                        depths: &mut BTreeMap<ContactKey, f64>,
                        prev: &BTreeMap<ContactKey, f64>,
                        key: ContactKey,
                        kind: ContactKind,
                        body_a: ContactBody,
                        body_b: ContactBody,
                        depth: f64,
                        base: f64| {
            let prev_depth = prev.get(&key).copied().unwrap_or(0.0);
            let approach = (depth - prev_depth) / dt;
            let force = base + (cfg.k_contact * depth + cfg.c_contact * approach).max(0.0);
            depths.insert(key, depth);
            records.push(ContactRecord {
                kind,
                body_a,
                body_b,
                depth,
                force,
            });
        };

        // Block-floor. Depth inside the floor tolerance reads as zero so
        // resting support forces are exact.
        for b in 0..self.blocks.len() {
            let min_z = self.blocks[b].min_corner_z(&self.states[b]);
            if min_z <= cfg.touch_threshold {
                let mut depth = (-min_z).max(0.0);
                if depth <= cfg.floor_tolerance {
                    depth = 0.0;
                }
                push(
                    &mut records,
                    &mut depths,
                    &self.prev_depths,
                    ContactKey::BlockFloor(b),
                    ContactKind::BlockFloor,
                    ContactBody::Block(b),
                    ContactBody::Floor,
                    depth,
                    cfg.support_force,
                );
            }
        }

        // Block-block (skip welded pairs: they are one rigid body).
        for i in 0..self.blocks.len() {
            for j in (i + 1)..self.blocks.len() {
                if roots[i] == roots[j] {
                    continue;
                }
                if let Some(depth) = obb_penetration(&self.obb(i), &self.obb(j)) {
                    push(
                        &mut records,
                        &mut depths,
                        &self.prev_depths,
                        ContactKey::BlockBlock(i, j),
                        ContactKind::BlockBlock,
                        ContactBody::Block(i),
                        ContactBody::Block(j),
                        depth,
                        0.0,
                    );
                }
            }
        }

        // Gripper tool sphere against blocks it is not holding.
        for g in 0..2 {
            let held = self.grippers[g].grasp.as_ref().map(|gr| gr.block);
            let tool = inputs.grippers[g].pose.position;
            for b in 0..self.blocks.len() {
                if Some(b) == held {
                    continue;
                }
                let sd = point_obb_signed_distance(&tool, &self.obb(b));
                let depth = cfg.tool_radius - sd;
                if depth > 0.0 {
                    push(
                        &mut records,
                        &mut depths,
                        &self.prev_depths,
                        ContactKey::GripperBlock(g, b),
                        ContactKind::GripperBlock,
                        ContactBody::Gripper(g),
                        ContactBody::Block(b),
                        depth,
                        0.0,
                    );
                }
            }
        }

        // Arm-arm capsule pairs.
        for (i, ca) in inputs.arm_links[0].iter().enumerate() {
            for (j, cb) in inputs.arm_links[1].iter().enumerate() {
                let dist = segment_segment_distance(&ca.a, &ca.b, &cb.a, &cb.b);
                let depth = ca.radius + cb.radius - dist;
                if depth > 0.0 {
                    push(
                        &mut records,
                        &mut depths,
                        &self.prev_depths,
                        ContactKey::ArmArm(i, j),
                        ContactKind::ArmArm,
                        ContactBody::ArmLink { arm: 0, link: i },
                        ContactBody::ArmLink { arm: 1, link: j },
                        depth,
                        0.0,
                    );
                }
            }
        }

        // Arm-floor.
        for arm in 0..2 {
            for (i, c) in inputs.arm_links[arm].iter().enumerate() {
                let depth = c.radius - c.a.z.min(c.b.z);
                if depth > 0.0 {
                    push(
                        &mut records,
                        &mut depths,
                        &self.prev_depths,
                        ContactKey::ArmFloor(arm, i),
                        ContactKind::ArmFloor,
                        ContactBody::ArmLink { arm, link: i },
                        ContactBody::Floor,
                        depth,
                        0.0,
                    );
                }
            }
        }

        self.prev_depths = depths;
        records
    }

    /// Breaks connections whose separating pull proxy exceeds the break
    /// force. The pull on a connection is the summed stretch of grasps
    /// whose hand has diverged from its block along the separation
    /// direction of that connection. Returns the removed connections.
    pub fn check_break(&mut self) -> Vec<Connection> {
        if self.connections.is_empty() {
            return Vec::new();
        }
        let mut to_remove = Vec::new();
        for (ci, conn) in self.connections.iter().enumerate() {
            let pull = self.connection_pull(ci, conn);
            if pull > self.cfg.break_force {
                to_remove.push(ci);
            }
        }
        let mut removed = Vec::new();
        for ci in to_remove.into_iter().rev() {
            removed.push(self.connections.remove(ci));
        }
        removed.reverse();
        removed
    }

    /// Separating pull proxy on one connection: for each grasping hand,
    /// the mismatch between where the hand wants its block and where the
    /// block is, projected on the direction that would separate this
    /// connection, scaled by the pull stiffness. Only hands on the far
    /// side of the connection (the side that would come off) contribute.
    fn connection_pull(&self, ci: usize, conn: &Connection) -> f64 {
        let side_of = |block: usize| -> Option<bool> {
            // true: reachable from conn.site_b.block without crossing
            // this connection; false: reachable from site_a's side.
            let n = self.blocks.len();
            let mut adj = vec![Vec::new(); n];
            for (i, c) in self.connections.iter().enumerate() {
                if i == ci {
                    continue;
                }
                let (a, b) = c.blocks();
                adj[a].push(b);
                adj[b].push(a);
            }
            let reach = |start: usize| -> Vec<bool> {
                let mut seen = vec![false; n];
                let mut stack = vec![start];
                seen[start] = true;
                while let Some(x) = stack.pop() {
                    for &y in &adj[x] {
                        if !seen[y] {
                            seen[y] = true;
                            stack.push(y);
                        }
                    }
                }
                seen
            };
            let from_a = reach(conn.site_a.block);
            let from_b = reach(conn.site_b.block);
            if from_a[block] && !from_b[block] {
                Some(false)
            } else if from_b[block] && !from_a[block] {
                Some(true)
            } else {
                // On both sides (a cycle) or on neither: no clean
                // separation direction.
                None
            }
        };

        let n_a = self.site_world_normal(conn.site_a);
        let n_b = self.site_world_normal(conn.site_b);
        let mut pull = 0.0;
        for grip in &self.grippers {
            let Some(grasp) = &grip.grasp else { continue };
            let Some(on_b_side) = side_of(grasp.block) else {
                continue;
            };
            let target = grip.pose.compose(&grasp.offset);
            let delta = target.position - self.states[grasp.block].position;
            // Moving the b-side component away from a happens along a's
            // outward normal, and vice versa.
            let dir = if on_b_side { n_a } else { n_b };
            pull += self.cfg.pull_stiffness * delta.dot(&dir).max(0.0);
        }
        pull
    }
}

#[cfg(test)]
mod tests;
