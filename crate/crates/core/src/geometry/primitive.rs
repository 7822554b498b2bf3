//! Analytic link geometry: spheres, capsules and boxes with closed-form
//! signed distances and gradients.

use std::f64::consts::PI;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use super::{shapes, PoseRecord, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Segment along local z from `-half_length` to `half_length`, swept by `radius`.
    Capsule { radius: f64, half_length: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrimitiveRecord {
    #[serde(flatten)]
    shape: Shape,
    #[serde(default)]
    pose: PoseRecord,
}

/// A shape placed in its owning link's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrimitiveRecord", into = "PrimitiveRecord")]
pub struct Primitive {
    shape: Shape,
    pose: Isometry3<f64>,
}

impl TryFrom<PrimitiveRecord> for Primitive {
    type Error = Error;

    fn try_from(r: PrimitiveRecord) -> Result<Self> {
        Primitive::new(r.shape, r.pose.to_isometry()?)
    }
}

impl From<Primitive> for PrimitiveRecord {
    fn from(p: Primitive) -> Self {
        PrimitiveRecord {
            shape: p.shape,
            pose: PoseRecord::from_isometry(&p.pose),
        }
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

impl Primitive {
    pub fn new(shape: Shape, pose: Isometry3<f64>) -> Result<Self> {
        let ok = match shape {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Capsule { radius, half_length } => radius > 0.0 && half_length > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
        };
        if !ok {
            return Err(Error::invalid(format!("primitive sizes must be positive: {shape:?}")));
        }
        let r = pose.rotation.to_rotation_matrix();
        let err = (r.matrix().transpose() * r.matrix() - nalgebra::Matrix3::identity()).norm();
        if err > 1e-8 {
            return Err(Error::invalid("primitive rotation is not orthonormal"));
        }
        Ok(Primitive { shape, pose })
    }

    pub fn sphere(radius: f64, center: Vec3) -> Result<Self> {
        Primitive::new(Shape::Sphere { radius }, Isometry3::translation(center.x, center.y, center.z))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn pose(&self) -> &Isometry3<f64> {
        &self.pose
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation.vector
    }

    /// Radius of a ball about [`Primitive::center`] enclosing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Capsule { radius, half_length } => radius + half_length,
            Shape::Box { half_extents } => Vec3::from(half_extents).norm(),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Capsule { radius, half_length } => {
                4.0 * PI * radius * radius + 4.0 * PI * radius * half_length
            }
            Shape::Box { half_extents: h } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
        }
    }

    /// Signed distance and gradient for a point given in the primitive's own frame.
    pub fn local_sdf(&self, x: &Vec3) -> (f64, Vec3) {
        match self.shape {
            Shape::Sphere { radius } => {
                let n = x.norm();
                let g = if n > 0.0 { x / n } else { Vec3::x() };
                (n - radius, g)
            }
            Shape::Capsule { radius, half_length } => {
                let axis_pt = Vec3::new(0.0, 0.0, x.z.clamp(-half_length, half_length));
                let off = x - axis_pt;
                let n = off.norm();
                let g = if n > 0.0 {
                    off / n
                } else if x.z > half_length {
                    Vec3::z()
                } else if x.z < -half_length {
                    -Vec3::z()
                } else {
                    Vec3::x()
                };
                (n - radius, g)
            }
            Shape::Box { half_extents } => {
                let b = Vec3::from(half_extents);
                let q = x.abs() - b;
                let outside = q.sup(&Vec3::zeros());
                let on = outside.norm();
                if on > 0.0 {
                    let g = Vec3::new(
                        outside.x * x.x.signum(),
                        outside.y * x.y.signum(),
                        outside.z * x.z.signum(),
                    ) / on;
                    (on, g)
                } else {
                    let a = if q.x >= q.y && q.x >= q.z {
                        0
                    } else if q.y >= q.z {
                        1
                    } else {
                        2
                    };
                    let mut g = Vec3::zeros();
                    g[a] = if x[a] >= 0.0 { 1.0 } else { -1.0 };
                    (q[a], g)
                }
            }
        }
    }

    /// Signed distance and gradient for a point in the owning link frame.
    pub fn sdf(&self, p: &Vec3) -> (f64, Vec3) {
        let x = self.pose.inverse_transform_vector(&(p - self.pose.translation.vector));
        let (d, g) = self.local_sdf(&x);
        (d, self.pose.rotation * g)
    }

    /// Deterministic, roughly uniform surface points with outward normals,
    /// in the owning link frame.
    pub fn surface_points(&self, n: usize) -> Vec<(Vec3, Vec3)> {
        let local: Vec<(Vec3, Vec3)> = match self.shape {
            Shape::Sphere { radius } => fibonacci_sphere(n)
                .into_iter()
                .map(|u| (u * radius, u))
                .collect(),
            Shape::Capsule { radius, half_length } => {
                let a_cyl = 4.0 * PI * radius * half_length;
                let a_cap = 4.0 * PI * radius * radius;
                let n_cyl = ((n as f64) * a_cyl / (a_cyl + a_cap)).round() as usize;
                let n_cap = n.saturating_sub(n_cyl);
                let mut out: Vec<(Vec3, Vec3)> = fibonacci_sphere(n_cap)
                    .into_iter()
                    .map(|u| {
                        let shift = if u.z >= 0.0 { half_length } else { -half_length };
                        (u * radius + Vec3::new(0.0, 0.0, shift), u)
                    })
                    .collect();
                for i in 0..n_cyl {
                    let z = -half_length + 2.0 * half_length * (i as f64 + 0.5) / n_cyl as f64;
                    let phi = i as f64 * GOLDEN_ANGLE;
                    let u = Vec3::new(phi.cos(), phi.sin(), 0.0);
                    out.push((u * radius + Vec3::new(0.0, 0.0, z), u));
                }
                out
            }
            Shape::Box { half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = 2.0 * areas.iter().sum::<f64>();
                let mut out = Vec::with_capacity(n);
                let mut assigned = 0;
                for face in 0..6 {
                    let axis = face / 2;
                    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                    let cnt = if face == 5 {
                        n - assigned
                    } else {
                        ((n as f64) * areas[axis] / total).round() as usize
                    };
                    let cnt = cnt.min(n - assigned);
                    assigned += cnt;
                    let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
                    for i in 0..cnt {
                        // R2 low-discrepancy sequence on the face
                        let u = (0.5 + i as f64 * 0.754_877_666_246_692_7).fract();
                        let v = (0.5 + i as f64 * 0.569_840_290_998_053_3).fract();
                        let mut p = Vec3::zeros();
                        p[axis] = sign * h[axis];
                        p[u_ax] = (2.0 * u - 1.0) * h[u_ax];
                        p[v_ax] = (2.0 * v - 1.0) * h[v_ax];
                        let mut nrm = Vec3::zeros();
                        nrm[axis] = sign;
                        out.push((p, nrm));
                    }
                }
                out
            }
        };
        local
            .into_iter()
            .map(|(p, nrm)| (self.pose * nalgebra::Point3::from(p), self.pose.rotation * nrm))
            .map(|(p, nrm)| (p.coords, nrm))
            .collect()
    }

    /// Closed triangle mesh of the shape in the owning link frame.
    pub fn tessellate(&self) -> TriMesh {
        let local = match self.shape {
            Shape::Sphere { radius } => shapes::capsule(radius, 0.0, 24, 12),
            Shape::Capsule { radius, half_length } => shapes::capsule(radius, half_length, 24, 12),
            Shape::Box { half_extents } => shapes::cuboid(Vec3::from(half_extents)),
        };
        local.transformed(&self.pose, 1.0)
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}
