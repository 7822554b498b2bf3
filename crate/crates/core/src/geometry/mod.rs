//! Mesh and point-cloud kernel: signed distances, surface sampling,
//! voxelization, chamfer distance and bounding geometry.

mod bvh;
pub mod kdtree;
pub mod mesh;
pub mod meshio;
pub mod primitive;
pub mod sampling;
pub mod sdf;
pub mod shapes;
pub mod voxel;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub use kdtree::KdTree;
pub use mesh::{bbox_diagonal, Aabb, TriMesh};
pub use primitive::{Primitive, Shape};
pub use sampling::{sample_surface, SurfaceSamples};
pub use sdf::{mesh_sdf, MeshSdf, SdfGrid, SdfResult, SignedDistance, UnionSdf};
pub use voxel::{voxelize, OccupancyGrid};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Serializable rigid pose. Rotation is a unit quaternion stored `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    #[serde(default)]
    pub translation: [f64; 3],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseRecord {
    fn default() -> Self {
        PoseRecord {
            rotation: identity_quat(),
            translation: [0.0; 3],
        }
    }
}

impl PoseRecord {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        PoseRecord {
            rotation: [q.w, q.i, q.j, q.k],
            translation: iso.translation.vector.into(),
        }
    }

    /// Converts to an isometry, rejecting quaternions that are far from unit norm.
    pub fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let rot = quat_from_wxyz(self.rotation)?;
        let t = Vec3::from(self.translation);
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Isometry3::from_parts(Translation3::from(t), rot))
    }
}

/// Builds a unit quaternion from `[w, x, y, z]`; inputs must be within 1e-6 of unit norm.
pub fn quat_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>> {
    let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = raw.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("rotation quaternion norm {n} is not 1")));
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Symmetric chamfer distance (cm²): mean squared nearest-neighbor distance
/// from `p` to `q` plus the same from `q` to `p`.
pub fn chamfer(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("chamfer distance needs two non-empty point sets"));
    }
    let tp = KdTree::new(p);
    let tq = KdTree::new(q);
    Ok(one_sided_chamfer(p, &tq) + one_sided_chamfer(q, &tp))
}

/// Mean squared distance from every point of `from` to its nearest point in `to`.
pub fn one_sided_chamfer(from: &[Vec3], to: &KdTree) -> f64 {
    let sum: f64 = from.iter().map(|x| to.nearest(x).1).sum();
    sum / from.len() as f64
}

/// Applies a rigid transform to a point (translation included).
#[inline]
pub fn xform(iso: &Isometry3<f64>, p: &Vec3) -> Vec3 {
    iso.rotation * p + iso.translation.vector
}
