use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid transform: rotation followed by translation.
///
/// `compose` follows the usual convention: `a.compose(&b)` maps a point
/// from b's local frame through b, then through a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            position: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        RigidPose { position, rotation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        RigidPose {
            position: Vector3::new(x, y, z),
            rotation: Rotation3::identity(),
        }
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        RigidPose {
            position: Vector3::zeros(),
            rotation: Rotation3::from_axis_angle(axis, angle),
        }
    }

    /// self ∘ other (apply `other` first in its local frame, then `self`).
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            position: self.position + self.rotation * other.position,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rot_inv = self.rotation.inverse();
        RigidPose {
            position: -(rot_inv * self.position),
            rotation: rot_inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation applied around a fixed world-frame point: the result
    /// leaves `pivot` where it is and rotates the pose around it.
    pub fn rotated_about(&self, rot: &Rotation3<f64>, pivot: &Vector3<f64>) -> RigidPose {
        RigidPose {
            position: pivot + rot * (self.position - pivot),
            rotation: rot * self.rotation,
        }
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> RigidPose {
        RigidPose {
            position: self.position + delta,
            rotation: self.rotation,
        }
    }

    /// Projects the rotation back onto the orthonormal group. Repeated
    /// composition drifts at float precision; bodies that accumulate
    /// incremental motion re-project every step.
    pub fn renormalized(&self) -> RigidPose {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&self.rotation);
        // from_rotation_matrix trusts its input; renormalize the
        // quaternion so scale drift is actually removed.
        let q = nalgebra::UnitQuaternion::new_normalize(q.into_inner());
        RigidPose {
            position: self.position,
            rotation: q.to_rotation_matrix(),
        }
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        RigidPose::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compose_with_identity_is_noop() {
        let p = RigidPose::new(
            Vector3::new(0.1, -0.2, 0.3),
            Rotation3::from_euler_angles(0.2, -0.4, 1.1),
        );
        let id = RigidPose::identity();
        let a = p.compose(&id);
        let b = id.compose(&p);
        assert_relative_eq!(a.position, p.position, epsilon = 1e-15);
        assert_relative_eq!(b.position, p.position, epsilon = 1e-15);
        assert_relative_eq!(a.rotation.matrix(), p.rotation.matrix(), epsilon = 1e-15);
    }

    #[test]
    fn inverse_cancels() {
        let p = RigidPose::new(
            Vector3::new(0.5, 0.1, -0.7),
            Rotation3::from_euler_angles(0.9, 0.3, -0.5),
        );
        let round = p.compose(&p.inverse());
        assert_relative_eq!(round.position, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(
            round.rotation.matrix(),
            Rotation3::identity().matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn transform_point_matches_compose() {
        let a = RigidPose::new(
            Vector3::new(0.2, 0.0, 0.1),
            Rotation3::from_euler_angles(0.0, 0.7, 0.0),
        );
        let p = Vector3::new(0.05, -0.02, 0.3);
        let via_compose = a
            .compose(&RigidPose::new(p, Rotation3::identity()))
            .position;
        assert_relative_eq!(a.transform_point(&p), via_compose, epsilon = 1e-15);
    }

    #[test]
    fn rotated_about_keeps_pivot_fixed() {
        let p = RigidPose::new(
            Vector3::new(0.3, 0.2, 0.1),
            Rotation3::from_euler_angles(0.1, 0.2, 0.3),
        );
        let pivot = Vector3::new(0.3, 0.2, 0.1);
        let rot = Rotation3::from_euler_angles(0.0, 0.0, 1.2);
        let q = p.rotated_about(&rot, &pivot);
        assert_relative_eq!(q.position, pivot, epsilon = 1e-15);
    }
}
