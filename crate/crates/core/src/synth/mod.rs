//! Synthetic fixtures with known ground truth: lathe object categories whose
//! instances are smooth warps of a template, barycentric sample transport,
//! annotated keypoints, partial views and closing-hand demonstrations.

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::contact::Demonstration;
use crate::correspondence::KeypointSet;
use crate::geometry::{shapes, MeshSdf, SurfaceSamples, TriMesh, Vec3};
use crate::hand::{close_hand, ClosingOptions, Grasp, HandSpec};
use crate::{Error, Result};

/// Angular resolution of the lathe templates (a multiple of 4 so the
/// quarter-turn keypoints fall on vertices).
pub const LATHE_SEGMENTS: usize = 48;
/// Longest profile edge after refinement (cm).
const PROFILE_EDGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryKind {
    Bottle,
    Mug,
    Bar,
}

impl CategoryKind {
    pub const ALL: [CategoryKind; 3] = [CategoryKind::Bottle, CategoryKind::Mug, CategoryKind::Bar];

    pub fn name(self) -> &'static str {
        match self {
            CategoryKind::Bottle => "bottle",
            CategoryKind::Mug => "mug",
            CategoryKind::Bar => "bar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// `(radius, z)` profile, axis to axis.
    fn profile(self) -> Vec<(f64, f64)> {
        match self {
            CategoryKind::Bottle => vec![
                (0.0, -8.0),
                (2.7, -8.0),
                (3.0, -7.7),
                (3.0, 2.0),
                (2.6, 3.6),
                (1.5, 5.0),
                (1.2, 6.0),
                (1.2, 7.7),
                (1.0, 8.0),
                (0.0, 8.0),
            ],
            // open cup: up the outside, over the rim, down the inside
            CategoryKind::Mug => vec![
                (0.0, -5.0),
                (3.1, -5.0),
                (3.4, -4.7),
                (3.6, 4.8),
                (3.4, 5.0),
                (3.2, 4.8),
                (3.0, -4.2),
                (0.0, -4.2),
            ],
            CategoryKind::Bar => vec![
                (0.0, -8.0),
                (1.2, -8.0),
                (1.6, -7.6),
                (1.7, -6.5),
                (1.7, 6.5),
                (1.6, 7.6),
                (1.2, 8.0),
                (0.0, 8.0),
            ],
        }
    }

    /// Height along the axis where the demonstration grasps the object.
    pub fn grasp_height(self) -> f64 {
        match self {
            CategoryKind::Bottle => -2.0,
            CategoryKind::Mug => 0.0,
            CategoryKind::Bar => 0.0,
        }
    }

    pub fn template(self) -> TriMesh {
        shapes::lathe(&refine_profile(&self.profile(), PROFILE_EDGE), LATHE_SEGMENTS)
    }

    /// Five annotated surface points; every one is a template vertex.
    pub fn keypoints(self) -> KeypointSet {
        let template = self.template();
        let p = self.profile();
        let ring = |r: f64, z: f64, quarter: usize| {
            let phi = std::f64::consts::FRAC_PI_2 * quarter as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        };
        let (names, points): (Vec<&str>, Vec<Vec3>) = match self {
            CategoryKind::Bottle => (
                vec!["base", "cap", "shoulder", "body_side", "neck"],
                vec![
                    Vec3::new(0.0, 0.0, -8.0),
                    Vec3::new(0.0, 0.0, 8.0),
                    ring(p[4].0, p[4].1, 0),
                    ring(p[3].0, p[3].1, 1),
                    ring(p[6].0, p[6].1, 2),
                ],
            ),
            CategoryKind::Mug => (
                vec!["base", "inner_base", "rim_front", "rim_side", "foot"],
                vec![
                    Vec3::new(0.0, 0.0, -5.0),
                    Vec3::new(0.0, 0.0, -4.2),
                    ring(p[4].0, p[4].1, 0),
                    ring(p[4].0, p[4].1, 1),
                    ring(p[2].0, p[2].1, 2),
                ],
            ),
            CategoryKind::Bar => (
                vec!["end_a", "end_b", "waist_front", "waist_side", "shoulder"],
                vec![
                    Vec3::new(0.0, 0.0, -8.0),
                    Vec3::new(0.0, 0.0, 8.0),
                    ring(p[3].0, p[3].1, 0),
                    ring(p[4].0, p[4].1, 1),
                    ring(p[5].0, p[5].1, 3),
                ],
            ),
        };
        debug_assert!(points
            .iter()
            .all(|k| template.vertices().iter().any(|v| (v - k).norm() < 1e-9)));
        KeypointSet {
            names: names.into_iter().map(String::from).collect(),
            points,
        }
    }
}

/// Splits profile edges longer than `max_len` so warps bend the surface
/// smoothly.
pub fn refine_profile(profile: &[(f64, f64)], max_len: f64) -> Vec<(f64, f64)> {
    let mut out = vec![profile[0]];
    for w in profile.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / max_len).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

/// Smooth, invertible shape change about the z axis: anisotropic scale,
/// linear taper, mid-height bulge and a quadratic bend along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothWarp {
    pub scale: Vec3,
    pub taper: f64,
    pub bulge: f64,
    pub bend: f64,
    /// Height that maps to the unit interval in the taper/bulge/bend terms.
    pub half_height: f64,
}

impl SmoothWarp {
    pub fn identity(half_height: f64) -> Self {
        SmoothWarp {
            scale: Vec3::repeat(1.0),
            taper: 0.0,
            bulge: 0.0,
            bend: 0.0,
            half_height,
        }
    }

    /// Random warp whose terms are bounded by `amplitude` (relative).
    pub fn random(rng: &mut impl Rng, half_height: f64, amplitude: f64) -> Self {
        let mut u = || rng.random_range(-amplitude..amplitude);
        SmoothWarp {
            scale: Vec3::new(1.0 + u(), 1.0 + u(), 1.0 + u()),
            taper: u(),
            bulge: u(),
            bend: 0.5 * u(),
            half_height,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let t = p.z / self.half_height;
        let radial = 1.0 + self.taper * t + self.bulge * (1.0 - t * t).max(0.0);
        Vec3::new(
            self.scale.x * p.x * radial + self.bend * self.half_height * t * t,
            self.scale.y * p.y * radial,
            self.scale.z * p.z,
        )
    }

    pub fn mesh(&self, mesh: &TriMesh) -> Result<TriMesh> {
        let out = mesh.map_vertices(|p| self.apply(p))?;
        if out.faces().len() != mesh.faces().len() {
            return Err(Error::invalid("warp collapsed faces"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub id: String,
    pub warp: SmoothWarp,
    pub mesh: TriMesh,
}

#[derive(Debug, Clone)]
pub struct SyntheticCategory {
    pub kind: CategoryKind,
    pub template: TriMesh,
    pub keypoints: KeypointSet,
    pub instances: Vec<SyntheticInstance>,
}

impl SyntheticCategory {
    /// Ground-truth keypoints of one instance.
    pub fn instance_keypoints(&self, i: usize) -> KeypointSet {
        let w = &self.instances[i].warp;
        KeypointSet {
            names: self.keypoints.names.clone(),
            points: self.keypoints.points.iter().map(|p| w.apply(p)).collect(),
        }
    }
}

/// Warp amplitude used for generated categories.
pub const DEFAULT_WARP_AMPLITUDE: f64 = 0.12;

/// Template plus `n` smoothly warped instances, deterministic in `seed`.
pub fn make_category(kind: CategoryKind, n: usize, seed: u64) -> Result<SyntheticCategory> {
    let template = kind.template();
    let half = 0.5 * template.bbox().extent().z;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..n)
        .map(|i| {
            let warp = SmoothWarp::random(&mut rng, half, DEFAULT_WARP_AMPLITUDE);
            Ok(SyntheticInstance {
                id: format!("{}_{:02}", kind.name(), i),
                mesh: warp.mesh(&template)?,
                warp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCategory {
        kind,
        keypoints: kind.keypoints(),
        template,
        instances,
    })
}

/// Surface samples stored as (face, barycentric) pairs so the same samples
/// can be realized on any mesh sharing the connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct BarySamples {
    pub faces: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
}

impl BarySamples {
    /// Area-weighted samples on `mesh`.
    pub fn sample(mesh: &TriMesh, n: usize, seed: u64) -> Result<Self> {
        if mesh.is_empty() || n == 0 {
            return Err(Error::invalid("need a nonempty mesh and at least one sample"));
        }
        let areas: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
        let dist = WeightedIndex::new(&areas).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = BarySamples {
            faces: Vec::with_capacity(n),
            bary: Vec::with_capacity(n),
        };
        for _ in 0..n {
            out.faces.push(dist.sample(&mut rng));
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            out.bary.push([1.0 - r1, r1 * (1.0 - r2), r1 * r2]);
        }
        Ok(out)
    }

    pub fn realize(&self, mesh: &TriMesh) -> Result<SurfaceSamples> {
        if let Some(&f) = self.faces.iter().find(|&&f| f >= mesh.faces().len()) {
            return Err(Error::invalid(format!("face {f} missing from mesh")));
        }
        let mut points = Vec::with_capacity(self.faces.len());
        let mut normals = Vec::with_capacity(self.faces.len());
        for (&f, b) in self.faces.iter().zip(&self.bary) {
            let [a, c, d] = mesh.triangle(f);
            points.push(a * b[0] + c * b[1] + d * b[2]);
            normals.push(mesh.face_normal(f));
        }
        let mut s = SurfaceSamples::from_points(points, normals);
        s.face_ids = self.faces.clone();
        Ok(s)
    }
}

/// Points of `mesh` seen from far away along `view` (pointing from the
/// object toward the camera): front-facing and unoccluded.
pub fn partial_view(mesh: &TriMesh, n: usize, view: &Vec3, seed: u64) -> Result<SurfaceSamples> {
    let view = view
        .try_normalize(1e-12)
        .ok_or_else(|| Error::invalid("view direction must be nonzero"))?;
    let sdf = MeshSdf::new(mesh.clone());
    let lift = 1e-6 * mesh.bbox().diagonal();
    let mut kept = SurfaceSamples::from_points(vec![], vec![]);
    let mut round = 0;
    while kept.len() < n {
        // front faces are roughly half the surface
        let batch = crate::geometry::sample_surface(mesh, 4 * n, seed.wrapping_add(round))?;
        for i in 0..batch.len() {
            if kept.len() == n {
                break;
            }
            let (p, nrm) = (batch.points[i], batch.normals[i]);
            if nrm.dot(&view) <= 0.0 || !sdf.ray_crossings(&(p + view * lift), &view).is_empty() {
                continue;
            }
            kept.points.push(p);
            kept.normals.push(nrm);
            kept.face_ids.push(batch.face_ids[i]);
        }
        round += 1;
        if round > 16 {
            return Err(Error::invalid("view sees too little of the surface"));
        }
    }
    Ok(kept)
}

/// Palm standoff between the palm's front face and the object (cm).
const PALM_GAP: f64 = 0.2;
/// Half thickness of the reference palm (front face at +z).
const PALM_FRONT: f64 = 1.1;
/// Where the object's axis crosses the palm, in the hand frame.
const GRASP_POINT: [f64; 2] = [0.3, 6.5];

/// Wrist pose that holds a z-axis object with its axis along the hand's x
/// axis, in front of the palm at the given height.
pub fn grasp_wrist(object: &TriMesh, height: f64) -> Result<Isometry3<f64>> {
    let band: Vec<&Vec3> = object.vertices().iter().filter(|v| (v.z - height).abs() < 1.0).collect();
    if band.is_empty() {
        return Err(Error::invalid(format!("object has no surface near height {height}")));
    }
    let radius = band.iter().map(|v| v.xy().norm()).fold(0.0, f64::max);
    let hand_point = Vec3::new(GRASP_POINT[0], GRASP_POINT[1], PALM_FRONT + PALM_GAP + radius);
    let object_point = Vec3::new(0.0, 0.0, height);
    // object z -> hand x
    let to_hand = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_2);
    let rot = to_hand.inverse();
    Ok(Isometry3::from_parts(Translation3::from(object_point - rot * hand_point), rot))
}

/// Options for [`closing_demonstration`]: large budget, fine steps.
pub fn demonstration_closing() -> ClosingOptions {
    ClosingOptions {
        max_delta: 3.0,
        step: 0.02,
        contact_gap: 0.05,
    }
}

/// Self-consistent demonstration: the skeleton is placed around the object
/// by [`grasp_wrist`] and every flexing joint closes until it touches.
pub fn closing_demonstration(skeleton: &HandSpec, object: &TriMesh, height: f64) -> Result<Demonstration> {
    let wrist = grasp_wrist(object, height)?;
    let sdf = MeshSdf::new(object.clone());
    let start = Grasp::new(vec![0.0; skeleton.dof()], wrist);
    let closed = close_hand(skeleton, &start, &sdf, &demonstration_closing())?;
    Demonstration::from_skeleton(skeleton, &closed.grasp, object.clone())
}
