use nalgebra::{DMatrix, Isometry3, Translation3, UnitQuaternion};

use super::spec::HandSpec;
use crate::geometry::{xform, TriMesh, Vec3};
use crate::{Error, Result};

/// Joint vector plus wrist pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Grasp {
    pub q: Vec<f64>,
    pub wrist: Isometry3<f64>,
}

impl Grasp {
    pub fn new(q: Vec<f64>, wrist: Isometry3<f64>) -> Self {
        Grasp { q, wrist }
    }

    pub fn zero(spec: &HandSpec) -> Self {
        Grasp {
            q: vec![0.0; spec.dof()],
            wrist: Isometry3::identity(),
        }
    }

    /// Applies a wrist increment: translation `dt`, rotation `exp(dw)` on the left.
    pub fn moved(&self, dt: &Vec3, dw: &Vec3) -> Isometry3<f64> {
        let r = UnitQuaternion::from_scaled_axis(*dw) * self.wrist.rotation;
        Isometry3::from_parts(
            Translation3::from(self.wrist.translation.vector + dt),
            r,
        )
    }
}

/// World-space state of a hand at one grasp.
#[derive(Debug, Clone)]
pub struct PosedHand<'a> {
    pub spec: &'a HandSpec,
    pub wrist: Isometry3<f64>,
    pub link_poses: Vec<Isometry3<f64>>,
    /// World position of each joint's rotation center.
    pub joint_origins: Vec<Vec3>,
    /// World direction of each joint's axis.
    pub joint_axes: Vec<Vec3>,
    /// Concatenated per-link surface samples, link order.
    pub samples: Vec<Vec3>,
    pub sample_normals: Vec<Vec3>,
    pub sample_link: Vec<usize>,
    /// Half-open sample index range per link.
    pub link_ranges: Vec<(usize, usize)>,
    pub anchors: Vec<Vec3>,
    pub fingertips: Vec<Vec3>,
    bounds: Vec<(Vec3, f64)>,
}

pub fn forward_kinematics<'a>(spec: &'a HandSpec, g: &Grasp) -> Result<PosedHand<'a>> {
    if g.q.len() != spec.dof() {
        return Err(Error::invalid(format!(
            "joint vector has length {}, hand `{}` has {} joints",
            g.q.len(),
            spec.name,
            spec.dof()
        )));
    }
    if !g.q.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("joint vector is not finite"));
    }
    let n = spec.links.len();
    let mut link_poses: Vec<Isometry3<f64>> = Vec::with_capacity(n);
    let mut joint_origins = vec![Vec3::zeros(); spec.dof()];
    let mut joint_axes = vec![Vec3::zeros(); spec.dof()];
    for link in &spec.links {
        let base = match link.parent {
            None => g.wrist * link.origin,
            Some(p) => link_poses[p] * link.origin,
        };
        let pose = match link.joint {
            None => base,
            Some(j) => {
                let joint = &spec.joints[j];
                joint_origins[j] = base.translation.vector;
                joint_axes[j] = base.rotation * joint.axis.into_inner();
                base * UnitQuaternion::from_axis_angle(&joint.axis, g.q[j])
            }
        };
        link_poses.push(pose);
    }

    let total: usize = spec.links.iter().map(|l| l.samples.len()).sum();
    let mut samples = Vec::with_capacity(total);
    let mut sample_normals = Vec::with_capacity(total);
    let mut sample_link = Vec::with_capacity(total);
    let mut link_ranges = Vec::with_capacity(n);
    let mut bounds = Vec::with_capacity(n);
    for (i, link) in spec.links.iter().enumerate() {
        let t = &link_poses[i];
        let start = samples.len();
        for (p, nrm) in &link.samples {
            samples.push(xform(t, p));
            sample_normals.push(t.rotation * nrm);
            sample_link.push(i);
        }
        link_ranges.push((start, samples.len()));
        let (c, r) = link.bounding_sphere();
        bounds.push((xform(t, &c), r));
    }
    let anchors = spec
        .anchors
        .iter()
        .map(|a| xform(&link_poses[a.link], &a.position))
        .collect();
    let fingertips = spec
        .fingertips
        .iter()
        .map(|f| xform(&link_poses[f.link], &f.point))
        .collect();
    Ok(PosedHand {
        spec,
        wrist: g.wrist,
        link_poses,
        joint_origins,
        joint_axes,
        samples,
        sample_normals,
        sample_link,
        link_ranges,
        anchors,
        fingertips,
        bounds,
    })
}

impl PosedHand<'_> {
    pub fn link_samples(&self, link: usize) -> &[Vec3] {
        let (a, b) = self.link_ranges[link];
        &self.samples[a..b]
    }

    /// Signed distance to one link's geometry and its world gradient.
    pub fn link_sdf(&self, link: usize, p: &Vec3) -> (f64, Vec3) {
        let t = &self.link_poses[link];
        let (d, g) = self.spec.links[link].local_sdf(&t.inverse_transform_point(&(*p).into()).coords);
        (d, t.rotation * g)
    }

    /// Lower bound on the distance from `p` to a link's geometry.
    pub fn link_lower_bound(&self, link: usize, p: &Vec3) -> f64 {
        let (c, r) = &self.bounds[link];
        (p - c).norm() - r
    }

    /// Signed distance to the whole hand: value, world gradient, nearest link.
    /// `None` when the hand has no geometry.
    pub fn sdf(&self, p: &Vec3) -> Option<(f64, Vec3, usize)> {
        let mut best: Option<(f64, Vec3, usize)> = None;
        for (i, link) in self.spec.links.iter().enumerate() {
            if !link.has_geometry() {
                continue;
            }
            if let Some((d, _, _)) = best {
                if self.link_lower_bound(i, p) >= d {
                    continue;
                }
            }
            let (d, g) = self.link_sdf(i, p);
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, g, i));
            }
        }
        best
    }

    /// Tessellated primitives, one mesh per geometric link.
    pub fn link_meshes(&self) -> Vec<(usize, TriMesh)> {
        self.spec
            .geometric_links()
            .into_iter()
            .map(|i| {
                let meshes: Vec<TriMesh> = self.spec.links[i]
                    .primitives
                    .iter()
                    .map(|p| p.tessellate().transformed(&self.link_poses[i], 1.0))
                    .collect();
                (i, TriMesh::merge(&meshes))
            })
            .collect()
    }

    /// 3 x (DoF + 6) Jacobian of a world point rigidly attached to `link`.
    /// Columns: joints, wrist translation, wrist rotation (left increment).
    pub fn point_jacobian(&self, link: usize, world_point: &Vec3) -> DMatrix<f64> {
        let dof = self.spec.dof();
        let mut jac = DMatrix::zeros(3, dof + 6);
        for &j in &self.spec.joint_chain[link] {
            let col = self.joint_axes[j].cross(&(world_point - self.joint_origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
        }
        for k in 0..3 {
            jac[(k, dof + k)] = 1.0;
            let col = Vec3::ith(k, 1.0).cross(&(world_point - self.wrist.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, dof + 3 + k).copy_from(&col);
        }
        jac
    }

    /// Jacobian of a point given in the link frame.
    pub fn local_point_jacobian(&self, link: usize, local: &Vec3) -> DMatrix<f64> {
        self.point_jacobian(link, &xform(&self.link_poses[link], local))
    }
}

/// Forces accumulated on hand links; turns point gradients into gradients
/// with respect to joints and wrist.
#[derive(Debug, Clone)]
pub struct LinkForces {
    force: Vec<Vec3>,
    torque: Vec<Vec3>,
}

/// Gradient of a scalar with respect to joints and wrist increment.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspGradient {
    pub q: Vec<f64>,
    pub translation: Vec3,
    pub rotation: Vec3,
}

impl GraspGradient {
    pub fn zeros(dof: usize) -> Self {
        GraspGradient {
            q: vec![0.0; dof],
            translation: Vec3::zeros(),
            rotation: Vec3::zeros(),
        }
    }

    pub fn add_scaled(&mut self, other: &GraspGradient, s: f64) {
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            *a += s * b;
        }
        self.translation += s * other.translation;
        self.rotation += s * other.rotation;
    }
}

impl LinkForces {
    pub fn new(n_links: usize) -> Self {
        LinkForces {
            force: vec![Vec3::zeros(); n_links],
            torque: vec![Vec3::zeros(); n_links],
        }
    }

    /// Adds `dL/dp = grad` for a world point `p` moving with `link`.
    pub fn add(&mut self, link: usize, p: &Vec3, grad: &Vec3) {
        self.force[link] += grad;
        self.torque[link] += p.cross(grad);
    }

    pub fn merge(&mut self, other: &LinkForces) {
        for i in 0..self.force.len() {
            self.force[i] += other.force[i];
            self.torque[i] += other.torque[i];
        }
    }

    pub fn gradient(&self, posed: &PosedHand) -> GraspGradient {
        let spec = posed.spec;
        let mut g = GraspGradient::zeros(spec.dof());
        let mut f_tot = Vec3::zeros();
        let mut t_tot = Vec3::zeros();
        for (l, chain) in spec.joint_chain.iter().enumerate() {
            let (f, t) = (&self.force[l], &self.torque[l]);
            if *f == Vec3::zeros() && *t == Vec3::zeros() {
                continue;
            }
            for &j in chain {
                let o = posed.joint_origins[j];
                g.q[j] += posed.joint_axes[j].dot(&(t - o.cross(f)));
            }
            f_tot += f;
            t_tot += t;
        }
        let w = posed.wrist.translation.vector;
        g.translation = f_tot;
        g.rotation = t_tot - w.cross(&f_tot);
        g
    }
}
