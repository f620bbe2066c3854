use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::pose::RigidPose;

/// Joint count of one arm. Joint vectors are fixed-size arrays so the
/// compiler checks dimension agreement at the call sites that matter.
pub const DOF: usize = 6;

/// Joint positions (radians) or joint velocities (rad/s), one per joint.
pub type JointVector = [f64; DOF];

/// One revolute joint: a fixed transform from the parent link frame to
/// the joint frame, a rotation axis in that frame, and per-joint limits.
#[derive(Debug, Clone)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub origin: RigidPose,
    /// [lower, upper] position limits, radians.
    pub position_limits: [f64; 2],
    /// Symmetric velocity limit, rad/s.
    pub velocity_limit: f64,
    /// Symmetric acceleration limit, rad/s^2.
    pub acceleration_limit: f64,
}

/// A serial chain of `DOF` revolute joints plus a fixed tool transform.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    pub joints: Vec<Joint>,
    /// Fixed transform from the last joint frame to the tool center.
    pub ee_offset: RigidPose,
}

/// Forward-kinematics output: the pose of every joint frame (after its
/// own rotation) and the tool-center pose, all in the chain base frame.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub links: Vec<RigidPose>,
    pub ee: RigidPose,
}

impl KinematicChain {
    /// Generic 6-DOF arm used by default: yaw base, two pitch links,
    /// roll, pitch wrist, roll flange, about 0.75 m of reach past the
    /// shoulder. Velocity limit 3.14 rad/s and acceleration limit
    /// 20 rad/s^2 on every joint.
    pub fn default_arm() -> Self {
        let z = Vector3::z_axis();
        let y = Vector3::y_axis();
        let joint = |axis: Unit<Vector3<f64>>, dz: f64, lim: f64| Joint {
            axis,
            origin: RigidPose::from_translation(0.0, 0.0, dz),
            position_limits: [-lim, lim],
            velocity_limit: 3.14,
            acceleration_limit: 20.0,
        };
        KinematicChain {
            joints: vec![
                joint(z, 0.12, 3.1),
                joint(y, 0.08, 2.4),
                joint(y, 0.28, 2.4),
                joint(z, 0.06, 3.1),
                joint(y, 0.24, 2.4),
                joint(z, 0.05, 3.1),
            ],
            ee_offset: RigidPose::from_translation(0.0, 0.0, 0.12),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.joints.len() != DOF {
            return Err(SimError::config(format!(
                "chain must have exactly {DOF} joints, got {}",
                self.joints.len()
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::config(format!("joint {i}: axis is not unit length")));
            }
            if !(j.position_limits[0] < j.position_limits[1]) {
                return Err(SimError::config(format!(
                    "joint {i}: position limits must satisfy lower < upper"
                )));
            }
            if !(j.velocity_limit > 0.0) {
                return Err(SimError::config(format!("joint {i}: velocity limit must be > 0")));
            }
            if !(j.acceleration_limit > 0.0) {
                return Err(SimError::config(format!(
                    "joint {i}: acceleration limit must be > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn velocity_limits(&self) -> JointVector {
        let mut v = [0.0; DOF];
        for (i, j) in self.joints.iter().enumerate() {
            v[i] = j.velocity_limit;
        }
        v
    }

    /// Joint positions clamped into the chain's position limits.
    pub fn clamp_positions(&self, q: &JointVector) -> JointVector {
        let mut out = *q;
        for (i, j) in self.joints.iter().enumerate() {
            out[i] = out[i].clamp(j.position_limits[0], j.position_limits[1]);
        }
        out
    }

    pub fn to_spec(&self) -> ChainSpec {
        ChainSpec {
            joints: self.joints.iter().map(JointSpec::from_joint).collect(),
            ee_offset: PoseSpec::from_pose(&self.ee_offset),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.to_spec()).expect("chain spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: ChainSpec = toml::from_str(text)
            .map_err(|e| SimError::description(format!("chain file: {e}")))?;
        let chain = spec.into_chain()?;
        chain.validate()?;
        Ok(chain)
    }
}

/// Forward kinematics: composes each joint's fixed origin transform with
/// its rotation about the joint axis, in order, then the tool offset.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> FkResult {
    debug_assert_eq!(chain.joints.len(), DOF);
    let mut t = RigidPose::identity();
    let mut links = Vec::with_capacity(DOF);
    for (i, joint) in chain.joints.iter().enumerate() {
        t = t
            .compose(&joint.origin)
            .compose(&RigidPose::from_axis_angle(&joint.axis, q[i]));
        links.push(t);
    }
    let ee = t.compose(&chain.ee_offset);
    FkResult { links, ee }
}

/// Clamps a raw joint-velocity request to the per-joint velocity limit,
/// then to the acceleration limit relative to the previous commanded
/// velocity: |v| <= vel and |v - v_prev| <= acc * dt, in that order.
pub fn clip_velocity_action(
    v_raw: &JointVector,
    v_prev: &JointVector,
    chain: &KinematicChain,
    dt: f64,
) -> JointVector {
    let mut out = [0.0; DOF];
    for (i, j) in chain.joints.iter().enumerate() {
        let v = v_raw[i].clamp(-j.velocity_limit, j.velocity_limit);
        let swing = j.acceleration_limit * dt;
        out[i] = v.clamp(v_prev[i] - swing, v_prev[i] + swing);
    }
    out
}

/// Advances the position target by one control period and clamps it into
/// the chain's position limits.
pub fn integrate_target(
    q_prev: &JointVector,
    v: &JointVector,
    dt: f64,
    chain: &KinematicChain,
) -> JointVector {
    let mut out = [0.0; DOF];
    for (i, j) in chain.joints.iter().enumerate() {
        out[i] = (q_prev[i] + v[i] * dt).clamp(j.position_limits[0], j.position_limits[1]);
    }
    out
}

/// Pose as stored in description files: position plus a unit quaternion
/// in [w, x, y, z] order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSpec {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
}

impl PoseSpec {
    pub fn from_pose(p: &RigidPose) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&p.rotation);
        PoseSpec {
            position: [p.position.x, p.position.y, p.position.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn into_pose(&self) -> Result<RigidPose, SimError> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SimError::description(format!(
                "rotation quaternion must be unit length, got norm {norm}"
            )));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(RigidPose::new(
            Vector3::new(self.position[0], self.position[1], self.position[2]),
            uq.to_rotation_matrix(),
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSpec {
    pub axis: [f64; 3],
    pub origin: PoseSpec,
    pub position_limits: [f64; 2],
    pub velocity_limit: f64,
    pub acceleration_limit: f64,
}

impl JointSpec {
    fn from_joint(j: &Joint) -> Self {
        JointSpec {
            axis: [j.axis.x, j.axis.y, j.axis.z],
            origin: PoseSpec::from_pose(&j.origin),
            position_limits: j.position_limits,
            velocity_limit: j.velocity_limit,
            acceleration_limit: j.acceleration_limit,
        }
    }

    fn into_joint(&self) -> Result<Joint, SimError> {
        let axis = Vector3::new(self.axis[0], self.axis[1], self.axis[2]);
        if (axis.norm() - 1.0).abs() > 1e-6 {
            return Err(SimError::description(
                "joint axis must be unit length".to_string(),
            ));
        }
        Ok(Joint {
            axis: Unit::new_normalize(axis),
            origin: self.origin.into_pose()?,
            position_limits: self.position_limits,
            velocity_limit: self.velocity_limit,
            acceleration_limit: self.acceleration_limit,
        })
    }
}

/// Chain description file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSpec {
    pub joints: Vec<JointSpec>,
    pub ee_offset: PoseSpec,
}

impl ChainSpec {
    pub fn into_chain(&self) -> Result<KinematicChain, SimError> {
        let joints = self
            .joints
            .iter()
            .map(JointSpec::into_joint)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(KinematicChain {
            joints,
            ee_offset: self.ee_offset.into_pose()?,
        })
    }
}
