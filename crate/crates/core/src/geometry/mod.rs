//! Vectors, rotations, rigid transforms and triangle meshes.
//!
//! Positions and vectors are `nalgebra::Vector3<f64>`; orientations are unit
//! quaternions and poses are isometries. Matrices are only materialised where
//! a formula indexes matrix entries (DH chains, relative pose error).

mod bvh;
pub mod io;
mod mesh;
mod organ;
pub mod shapes;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub use bvh::{Aabb, Bvh};
pub use mesh::{ClosestPoint, MeshError, RayHit, TriMesh};
pub use organ::{CenterlineSegment, OrganError, OrganMesh};

pub type Vec3 = Vector3<f64>;
pub type UnitQuat = UnitQuaternion<f64>;
pub type RigidTransform = Isometry3<f64>;

/// `a ∘ b`: applies `b` first, then `a`. The rotation is re-normalised so
/// long composition chains do not drift off the unit sphere.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let mut out = a * b;
    out.rotation = UnitQuaternion::new_normalize(out.rotation.into_inner());
    out
}

pub fn translation(x: f64, y: f64, z: f64) -> RigidTransform {
    Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::identity())
}

pub fn pose(position: Vec3, rotation: UnitQuat) -> RigidTransform {
    Isometry3::from_parts(Translation3::from(position), rotation)
}

/// Human-editable pose: position plus an `[x, y, z, w]` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub position: Vec3,
    #[serde(default = "identity_xyzw")]
    pub orientation: [f64; 4],
}

fn identity_xyzw() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: identity_xyzw(),
        }
    }
}

impl From<PoseSpec> for RigidTransform {
    fn from(p: PoseSpec) -> Self {
        let [x, y, z, w] = p.orientation;
        pose(
            p.position,
            UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)),
        )
    }
}

impl From<RigidTransform> for PoseSpec {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation;
        Self {
            position: t.translation.vector,
            orientation: [q.i, q.j, q.k, q.w],
        }
    }
}

/// `#[serde(with = "pose_serde")]` for [`RigidTransform`] fields stored as
/// [`PoseSpec`].
pub mod pose_serde {
    use super::{PoseSpec, RigidTransform};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(t: &RigidTransform, s: S) -> Result<S::Ok, S::Error> {
        PoseSpec::from(*t).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RigidTransform, D::Error> {
        PoseSpec::deserialize(d).map(Into::into)
    }
}

/// Largest absolute entry of the difference of two homogeneous matrices.
pub fn transform_distance(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).amax()
}
