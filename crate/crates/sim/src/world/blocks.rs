use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::PoseSpec;
use crate::pose::RigidPose;

/// Block geometry family. TypeA blocks carry a magnet on each square
/// end; TypeB blocks carry two magnets on one long side face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockType {
    TypeA,
    TypeB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn opposite(&self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// Identifies one magnet site: block index in the blueprint order plus
/// the site index on that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId {
    pub block: usize,
    pub site: usize,
}

/// A magnet site fixed to its parent block. The site frame's +z axis is
/// the outward face normal.
#[derive(Debug, Clone)]
pub struct MagnetSite {
    pub name: String,
    pub local: RigidPose,
    pub polarity: Polarity,
}

impl MagnetSite {
    pub fn world_position(&self, block_pose: &RigidPose) -> Vector3<f64> {
        block_pose.transform_point(&self.local.position)
    }

    pub fn world_normal(&self, block_pose: &RigidPose) -> Vector3<f64> {
        block_pose.rotation * (self.local.rotation * Vector3::z())
    }
}

/// Static description of one block: box half-extents plus magnet sites.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub block_type: BlockType,
    pub half_extents: Vector3<f64>,
    pub magnets: Vec<MagnetSite>,
}

impl Block {
    /// The eight box corners in world coordinates.
    pub fn corners(&self, pose: &RigidPose) -> [Vector3<f64>; 8] {
        let h = self.half_extents;
        let mut out = [Vector3::zeros(); 8];
        let mut idx = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[idx] =
                        pose.transform_point(&Vector3::new(sx * h.x, sy * h.y, sz * h.z));
                    idx += 1;
                }
            }
        }
        out
    }

    pub fn min_corner_z(&self, pose: &RigidPose) -> f64 {
        self.corners(pose)
            .iter()
            .map(|c| c.z)
            .fold(f64::INFINITY, f64::min)
    }
}

/// An idealized rigid weld between two snapped magnet sites. The stored
/// transform maps block `a`'s frame to block `b`'s frame as captured at
/// snap time.
#[derive(Debug, Clone)]
pub struct Connection {
    pub site_a: SiteId,
    pub site_b: SiteId,
    pub weld: RigidPose,
}

impl Connection {
    pub fn joins(&self, a: SiteId, b: SiteId) -> bool {
        (self.site_a == a && self.site_b == b) || (self.site_a == b && self.site_b == a)
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.site_a.block, self.site_b.block)
    }
}

/// Where a block currently lives in the scene graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attachment {
    Free,
    Grasped { gripper: usize },
    Assembly { connections: Vec<usize> },
}

// ---------------------------------------------------------------------
// Blueprint description files
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagnetSpec {
    pub name: String,
    pub pose: PoseSpec,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub block_type: BlockType,
    pub half_extents: [f64; 3],
    pub magnets: Vec<MagnetSpec>,
}

/// Scene description: the block list plus the connection pairs that
/// define assembly success.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Blueprint {
    pub blocks: Vec<BlockSpec>,
    /// Pairs of magnet site names that must be connected for success.
    pub desired_connections: Vec<[String; 2]>,
}

impl Blueprint {
    /// Default scene: two TypeA bars that attach to the side magnets of
    /// one TypeB bar, forming a U lying flat on the floor.
    pub fn default_u_shape() -> Blueprint {
        let h = [0.015, 0.015, 0.075];
        let quat_pos_z = [1.0, 0.0, 0.0, 0.0];
        // 180 deg about x: site +z axis points along block -z.
        let quat_neg_z = [0.0, 1.0, 0.0, 0.0];
        // +90 deg about y: site +z axis points along block +x.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let quat_pos_x = [s, 0.0, s, 0.0];
        let type_a = |name: &str| BlockSpec {
            name: name.to_string(),
            block_type: BlockType::TypeA,
            half_extents: h,
            magnets: vec![
                MagnetSpec {
                    name: format!("{name}_end_pos"),
                    pose: PoseSpec {
                        position: [0.0, 0.0, 0.075],
                        rotation: quat_pos_z,
                    },
                    polarity: Polarity::Positive,
                },
                MagnetSpec {
                    name: format!("{name}_end_neg"),
                    pose: PoseSpec {
                        position: [0.0, 0.0, -0.075],
                        rotation: quat_neg_z,
                    },
                    polarity: Polarity::Negative,
                },
            ],
        };
        Blueprint {
            blocks: vec![
                type_a("a1"),
                type_a("a2"),
                BlockSpec {
                    name: "b".to_string(),
                    block_type: BlockType::TypeB,
                    half_extents: h,
                    magnets: vec![
                        MagnetSpec {
                            name: "b_side_1".to_string(),
                            pose: PoseSpec {
                                position: [0.015, 0.0, 0.060],
                                rotation: quat_pos_x,
                            },
                            polarity: Polarity::Negative,
                        },
                        MagnetSpec {
                            name: "b_side_2".to_string(),
                            pose: PoseSpec {
                                position: [0.015, 0.0, -0.060],
                                rotation: quat_pos_x,
                            },
                            polarity: Polarity::Positive,
                        },
                    ],
                },
            ],
            desired_connections: vec![
                ["a1_end_pos".to_string(), "b_side_1".to_string()],
                ["a2_end_neg".to_string(), "b_side_2".to_string()],
            ],
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("blueprint serializes")
    }

    pub fn from_toml(text: &str) -> Result<Blueprint, SimError> {
        let bp: Blueprint = toml::from_str(text)
            .map_err(|e| SimError::description(format!("blueprint file: {e}")))?;
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.blocks.is_empty() {
            return Err(SimError::description("blueprint has no blocks"));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.blocks {
            for (i, h) in b.half_extents.iter().enumerate() {
                if !(*h > 0.0) {
                    return Err(SimError::description(format!(
                        "block {}: half extent {i} must be > 0",
                        b.name
                    )));
                }
            }
            for m in &b.magnets {
                if !names.insert(m.name.clone()) {
                    return Err(SimError::description(format!(
                        "duplicate magnet name {}",
                        m.name
                    )));
                }
            }
            validate_block_magnets(b)?;
        }
        for pair in &self.desired_connections {
            for name in pair {
                if !names.contains(name) {
                    return Err(SimError::description(format!(
                        "desired connection references unknown magnet {name}"
                    )));
                }
            }
            let pa = self.polarity_of(&pair[0]).unwrap();
            let pb = self.polarity_of(&pair[1]).unwrap();
            if pa == pb {
                return Err(SimError::description(format!(
                    "desired connection {} - {} joins equal polarities",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    fn polarity_of(&self, name: &str) -> Option<Polarity> {
        for b in &self.blocks {
            for m in &b.magnets {
                if m.name == name {
                    return Some(m.polarity);
                }
            }
        }
        None
    }

    /// Resolves a magnet name to its site id.
    pub fn site_id(&self, name: &str) -> Option<SiteId> {
        for (bi, b) in self.blocks.iter().enumerate() {
            for (si, m) in b.magnets.iter().enumerate() {
                if m.name == name {
                    return Some(SiteId { block: bi, site: si });
                }
            }
        }
        None
    }

    pub fn build_blocks(&self) -> Result<Vec<Block>, SimError> {
        self.blocks
            .iter()
            .map(|spec| {
                let magnets = spec
                    .magnets
                    .iter()
                    .map(|m| {
                        Ok(MagnetSite {
                            name: m.name.clone(),
                            local: m.pose.into_pose()?,
                            polarity: m.polarity,
                        })
                    })
                    .collect::<Result<Vec<_>, SimError>>()?;
                Ok(Block {
                    name: spec.name.clone(),
                    block_type: spec.block_type,
                    half_extents: Vector3::new(
                        spec.half_extents[0],
                        spec.half_extents[1],
                        spec.half_extents[2],
                    ),
                    magnets,
                })
            })
            .collect()
    }

    pub fn desired_pairs(&self) -> Result<Vec<(SiteId, SiteId)>, SimError> {
        self.desired_connections
            .iter()
            .map(|[a, b]| {
                let sa = self
                    .site_id(a)
                    .ok_or_else(|| SimError::description(format!("unknown magnet {a}")))?;
                let sb = self
                    .site_id(b)
                    .ok_or_else(|| SimError::description(format!("unknown magnet {b}")))?;
                Ok((sa, sb))
            })
            .collect()
    }
}

/// Checks the magnet layout that each block family promises: TypeA has
/// exactly two end magnets of opposite polarity, TypeB exactly two
/// magnets of opposite polarity on one long side face.
fn validate_block_magnets(b: &BlockSpec) -> Result<(), SimError> {
    let h = b.half_extents;
    if b.magnets.len() != 2 {
        return Err(SimError::description(format!(
            "block {}: expected exactly 2 magnets, got {}",
            b.name,
            b.magnets.len()
        )));
    }
    if b.magnets[0].polarity == b.magnets[1].polarity {
        return Err(SimError::description(format!(
            "block {}: magnets must have opposite polarity",
            b.name
        )));
    }
    let poses: Vec<(Vector3<f64>, Vector3<f64>)> = b
        .magnets
        .iter()
        .map(|m| {
            let p = m.pose.into_pose()?;
            Ok((p.position, p.rotation * Vector3::z()))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let tol = 1e-6;
    match b.block_type {
        BlockType::TypeA => {
            // One magnet per square end, normals pointing outward along
            // the long axis.
            let mut signs = Vec::new();
            for (p, n) in &poses {
                if p.x.abs() > tol || p.y.abs() > tol || (p.z.abs() - h[2]).abs() > tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeA magnets must sit at the square ends",
                        b.name
                    )));
                }
                let sign = p.z.signum();
                if (n - Vector3::new(0.0, 0.0, sign)).norm() > tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeA magnet normal must point out of its end",
                        b.name
                    )));
                }
                signs.push(sign);
            }
            if signs[0] * signs[1] > 0.0 {
                return Err(SimError::description(format!(
                    "block {}: TypeA magnets must sit on opposite ends",
                    b.name
                )));
            }
        }
        BlockType::TypeB => {
            // Both magnets on the same long side face, normals outward.
            let n0 = poses[0].1;
            for (p, n) in &poses {
                if (n - n0).norm() > tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeB magnets must share one face normal",
                        b.name
                    )));
                }
                if n.z.abs() > tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeB magnets must sit on a long side, not an end",
                        b.name
                    )));
                }
                let along = p.dot(n);
                let face = (n.x.abs() * h[0] + n.y.abs() * h[1]).max(tol);
                if (along - face).abs() > tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeB magnet must sit on the face surface",
                        b.name
                    )));
                }
                if p.z.abs() > h[2] - tol {
                    return Err(SimError::description(format!(
                        "block {}: TypeB magnet z must lie within the long side",
                        b.name
                    )));
                }
            }
        }
    }
    Ok(())
}
