use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::pose::RigidPose;

/// A body participating in a contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactBody {
    Block(usize),
    Gripper(usize),
    ArmLink { arm: usize, link: usize },
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContactKind {
    BlockFloor,
    BlockBlock,
    GripperBlock,
    ArmArm,
    ArmFloor,
}

/// One contact: the body pair, the penetration depth (m), and the
/// scalar force magnitude of the penalty model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContactRecord {
    pub kind: ContactKind,
    pub body_a: ContactBody,
    pub body_b: ContactBody,
    pub depth: f64,
    pub force: f64,
}

/// Key identifying a persistent contact pair across substeps, used to
/// estimate approach speed from depth differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContactKey {
    BlockFloor(usize),
    BlockBlock(usize, usize),
    GripperBlock(usize, usize),
    ArmArm(usize, usize),
    ArmFloor(usize, usize),
}

/// Capsule volume for arm links: the segment from `a` to `b` inflated by
/// `radius`.
#[derive(Debug, Clone, Copy)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

/// Oriented box described by its center pose and half extents.
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub pose: RigidPose,
    pub half: Vector3<f64>,
}

/// Separating-axis penetration test for two oriented boxes. Returns the
/// minimal overlap depth when they intersect, `None` when separated.
/// The 15 candidate axes are the 6 face normals and 9 edge cross
/// products.
pub fn obb_penetration(a: &Obb, b: &Obb) -> Option<f64> {
    let ra = a.pose.rotation;
    let rb = b.pose.rotation;
    let d = b.pose.position - a.pose.position;

    let axes_a: [Vector3<f64>; 3] = [
        ra * Vector3::x(),
        ra * Vector3::y(),
        ra * Vector3::z(),
    ];
    let axes_b: [Vector3<f64>; 3] = [
        rb * Vector3::x(),
        rb * Vector3::y(),
        rb * Vector3::z(),
    ];

    let mut min_overlap = f64::INFINITY;
    let mut check = |axis: Vector3<f64>| -> bool {
        let len = axis.norm();
        if len < 1e-9 {
            // Degenerate cross product (parallel edges); skip.
            return true;
        }
        let axis = axis / len;
        let proj_a = a.half.x * axes_a[0].dot(&axis).abs()
            + a.half.y * axes_a[1].dot(&axis).abs()
            + a.half.z * axes_a[2].dot(&axis).abs();
        let proj_b = b.half.x * axes_b[0].dot(&axis).abs()
            + b.half.y * axes_b[1].dot(&axis).abs()
            + b.half.z * axes_b[2].dot(&axis).abs();
        let overlap = proj_a + proj_b - d.dot(&axis).abs();
        if overlap <= 0.0 {
            return false;
        }
        min_overlap = min_overlap.min(overlap);
        true
    };

    for ax in axes_a {
        if !check(ax) {
            return None;
        }
    }
    for ax in axes_b {
        if !check(ax) {
            return None;
        }
    }
    for ax_a in axes_a {
        for ax_b in axes_b {
            if !check(ax_a.cross(&ax_b)) {
                return None;
            }
        }
    }
    Some(min_overlap)
}

/// Signed distance from a point to an oriented box: positive outside,
/// negative inside (distance to the nearest face).
pub fn point_obb_signed_distance(p: &Vector3<f64>, obb: &Obb) -> f64 {
    let local = obb.pose.inverse().transform_point(p);
    let h = obb.half;
    let excess = Vector3::new(
        local.x.abs() - h.x,
        local.y.abs() - h.y,
        local.z.abs() - h.z,
    );
    let outside = Vector3::new(excess.x.max(0.0), excess.y.max(0.0), excess.z.max(0.0));
    let outside_dist = outside.norm();
    if outside_dist > 0.0 {
        outside_dist
    } else {
        // Inside: negative distance to the closest face.
        excess.x.max(excess.y).max(excess.z)
    }
}

/// Minimum distance between two segments.
pub fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-12;

    let (s, t);
    if a <= eps && e <= eps {
        return (p1 - p2).norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let s_unclamped = if denom > eps { (b * f - c * e) / denom } else { 0.0 };
            let s_c = s_unclamped.clamp(0.0, 1.0);
            let t_unclamped = (b * s_c + f) / e;
            if t_unclamped < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t_unclamped > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            } else {
                t = t_unclamped;
                s = s_c;
            }
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

/// Distance from a point to a segment.
pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(&ab);
    if len2 < 1e-12 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
