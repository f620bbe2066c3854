//! Damped least-squares inverse kinematics over the numeric Jacobian of
//! a 6-DOF chain, used by the scripted controller to turn tool-pose
//! goals into joint-position goals.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use ublocks_sim::kinematics::{forward_kinematics, JointVector, KinematicChain, DOF};
use ublocks_sim::pose::RigidPose;

/// Rotation angle in [0, pi], safe against the floating-point trace
/// drift that makes a plain `acos` return NaN for near-identity inputs.
pub fn rot_angle(r: &Rotation3<f64>) -> f64 {
    let c = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Rotation vector (axis times angle) of `r`, defined for the whole
/// group including near-identity and near-half-turn inputs.
pub fn rot_vec(r: &Rotation3<f64>) -> Vector3<f64> {
    let angle = rot_angle(r);
    if angle < 1e-12 {
        return Vector3::zeros();
    }
    let m = r.matrix();
    let skew = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let s = skew.norm(); // 2 sin(angle)
    if s > 1e-9 {
        skew * (angle / s)
    } else {
        // Half turn: the axis survives in the symmetric part,
        // (R + I)/2 = axis * axis^T.
        let b = (m + Matrix3::identity()) * 0.5;
        let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
        let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
            0
        } else if diag[1] >= diag[2] {
            1
        } else {
            2
        };
        let col = Vector3::new(b[(0, k)], b[(1, k)], b[(2, k)]);
        let n = col.norm();
        if n < 1e-12 {
            Vector3::zeros()
        } else {
            col * (angle / n)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    pub max_iters: usize,
    /// Position convergence tolerance, m.
    pub pos_tol: f64,
    /// Rotation convergence tolerance, rad.
    pub rot_tol: f64,
    /// Damping of the least-squares step; larger is more robust near
    /// singularities but converges slower.
    pub damping: f64,
    /// Per-joint step clamp per iteration, rad.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            max_iters: 150,
            pos_tol: 1e-4,
            rot_tol: 1e-3,
            damping: 0.05,
            max_step: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IkSolution {
    pub q: JointVector,
    /// Remaining tool position error, m.
    pub pos_err: f64,
    /// Remaining tool rotation error, rad.
    pub rot_err: f64,
    pub converged: bool,
}

/// Twist taking `current` to `target`: translation difference stacked
/// over the rotation-vector of the relative rotation.
pub fn pose_error(current: &RigidPose, target: &RigidPose) -> Vector6<f64> {
    let dp = target.position - current.position;
    let dr = rot_vec(&(target.rotation * current.rotation.inverse()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// World-frame tool pose of a chain mounted at `base`.
pub fn world_tool(chain: &KinematicChain, base: &RigidPose, q: &JointVector) -> RigidPose {
    base.compose(&forward_kinematics(chain, q).ee)
}

/// Iterates damped least-squares steps from `q_init` toward the target
/// tool pose, clamping into joint limits every iteration. Always returns
/// the best iterate seen, converged or not.
pub fn solve_ik(
    chain: &KinematicChain,
    base: &RigidPose,
    target: &RigidPose,
    q_init: &JointVector,
    opts: &IkOptions,
) -> IkSolution {
    let mut q = chain.clamp_positions(q_init);
    let mut best = evaluate(chain, base, target, &q);
    let h = 1e-6;
    for _ in 0..opts.max_iters {
        let cur = world_tool(chain, base, &q);
        let e = pose_error(&cur, target);
        let pos_err = e.fixed_rows::<3>(0).norm();
        let rot_err = e.fixed_rows::<3>(3).norm();
        if pos_err <= opts.pos_tol && rot_err <= opts.rot_tol {
            return IkSolution {
                q,
                pos_err,
                rot_err,
                converged: true,
            };
        }
        let mut j = Matrix6::<f64>::zeros();
        for i in 0..DOF {
            let mut qp = q;
            qp[i] += h;
            let p = world_tool(chain, base, &qp);
            let dp = (p.position - cur.position) / h;
            let dr = rot_vec(&(p.rotation * cur.rotation.inverse())) / h;
            for r in 0..3 {
                j[(r, i)] = dp[r];
                j[(r + 3, i)] = dr[r];
            }
        }
        let jjt = j * j.transpose() + Matrix6::identity() * (opts.damping * opts.damping);
        let Some(inv) = jjt.try_inverse() else { break };
        let dq = j.transpose() * (inv * e);
        for i in 0..DOF {
            q[i] += dq[i].clamp(-opts.max_step, opts.max_step);
        }
        q = chain.clamp_positions(&q);
        let cand = evaluate(chain, base, target, &q);
        if cand.pos_err + cand.rot_err < best.pos_err + best.rot_err {
            best = cand;
        }
    }
    best
}

/// Runs `solve_ik` from each seed in turn and returns the first
/// converged solution, or the best non-converged one.
pub fn solve_ik_seeds(
    chain: &KinematicChain,
    base: &RigidPose,
    target: &RigidPose,
    seeds: &[JointVector],
    opts: &IkOptions,
) -> IkSolution {
    let mut best: Option<IkSolution> = None;
    for seed in seeds {
        let sol = solve_ik(chain, base, target, seed, opts);
        if sol.converged {
            return sol;
        }
        let better = match &best {
            None => true,
            Some(b) => sol.pos_err + sol.rot_err < b.pos_err + b.rot_err,
        };
        if better {
            best = Some(sol);
        }
    }
    best.expect("at least one ik seed")
}

fn evaluate(
    chain: &KinematicChain,
    base: &RigidPose,
    target: &RigidPose,
    q: &JointVector,
) -> IkSolution {
    let cur = world_tool(chain, base, q);
    let e = pose_error(&cur, target);
    IkSolution {
        q: *q,
        pos_err: e.fixed_rows::<3>(0).norm(),
        rot_err: e.fixed_rows::<3>(3).norm(),
        converged: false,
    }
}
