//! Grasp and reconstruction metrics: epsilon quality, penetration and
//! self-penetration, functionality precision/recall, hand rotation distance,
//! IoU, normalized chamfer distance and the quasi-static closure check.

pub mod hull;

use log::warn;
use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::contact::CONTACT_THRESHOLD;
use crate::geometry::{Aabb, KdTree, MeshSdf, OccupancyGrid, SignedDistance, TriMesh, Vec3};
use crate::hand::{close_hand, ClosingOptions, Grasp, HandSpec, PosedHand};
use crate::{Error, Result};

pub const METRICS_SCHEMA: &str = "metrics/1";
pub const DEFAULT_FRICTION: f64 = 0.5;
pub const DEFAULT_CONE_EDGES: usize = 8;
/// Cell size of the penetration volume grids (cm).
pub const PENETRATION_SPACING: f64 = 0.25;
/// Binarization level for functionality precision/recall.
pub const FUNCTIONALITY_LEVEL: f64 = 0.5;

/// Point contacts with Coulomb friction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub points: Vec<Vec3>,
    /// Unit normals pointing into the object.
    pub normals: Vec<Vec3>,
    pub friction: f64,
    pub edges: usize,
    /// Torque reference point.
    pub center: Vec3,
}

impl ContactSet {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>, friction: f64, edges: usize, center: Vec3) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::invalid("contact points and normals differ in length"));
        }
        if !(friction >= 0.0) || edges < 3 {
            return Err(Error::invalid("friction must be >= 0 and the cone needs at least 3 edges"));
        }
        let normals = normals
            .into_iter()
            .map(|n| n.try_normalize(1e-12).ok_or_else(|| Error::invalid("zero contact normal")))
            .collect::<Result<Vec<_>>>()?;
        Ok(ContactSet {
            points,
            normals,
            friction,
            edges,
            center,
        })
    }

    /// First tangent direction at contact `i`: toward the next contact that
    /// is off the normal line, so the cone edges move with the contact set.
    fn tangent(&self, i: usize) -> Vec3 {
        let (p, n) = (self.points[i], self.normals[i]);
        let scale = self.points.iter().map(|q| (q - p).norm()).fold(0.0, f64::max).max(1e-12);
        for k in 1..self.points.len() {
            let q = self.points[(i + k) % self.points.len()];
            let d = q - p;
            let t = d - n * n.dot(&d);
            if t.norm() > 1e-6 * scale {
                return t.normalize();
            }
        }
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        n.cross(&helper).normalize()
    }

    /// Cone-edge wrenches `[f, (r x f) / torque_scale]`; every edge has unit
    /// normal component.
    pub fn wrenches(&self, torque_scale: f64) -> Vec<hull::Point> {
        let mut out = Vec::with_capacity(self.points.len() * self.edges);
        for i in 0..self.points.len() {
            let n = self.normals[i];
            let t1 = self.tangent(i);
            let t2 = n.cross(&t1);
            let r = self.points[i] - self.center;
            for k in 0..self.edges {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / self.edges as f64;
                let f = n + self.friction * (phi.cos() * t1 + phi.sin() * t2);
                let tau = r.cross(&f) / torque_scale;
                out.push(hull::Point::from_column_slice(&[f.x, f.y, f.z, tau.x, tau.y, tau.z]));
            }
        }
        out
    }
}

/// Radius of the largest origin-centered ball inside the convex hull of the
/// contact wrenches; 0 without force closure or for a flat wrench set.
pub fn epsilon_quality(contacts: &ContactSet, torque_scale: f64) -> Result<f64> {
    if contacts.points.is_empty() {
        return Err(Error::invalid("epsilon quality needs at least one contact"));
    }
    if !(torque_scale > 0.0) {
        return Err(Error::invalid("torque scale must be positive"));
    }
    Ok(hull::inscribed_radius(&contacts.wrenches(torque_scale)))
}

/// Torque normalization for an object: half its bounding-box diagonal.
pub fn torque_scale(object: &TriMesh) -> f64 {
    0.5 * object.bbox().diagonal()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    pub depth: f64,
    pub volume: f64,
}

fn intersect(a: &Aabb, b: &Aabb) -> Option<Aabb> {
    let min = a.min.sup(&b.min);
    let max = a.max.inf(&b.max);
    (min.x < max.x && min.y < max.y && min.z < max.z).then_some(Aabb { min, max })
}

fn hand_bounds(posed: &PosedHand) -> Aabb {
    let b = Aabb::from_points(&posed.samples);
    // samples lie on the surface; a little margin keeps round links whole
    b.padded(PENETRATION_SPACING)
}

/// Hand-object penetration: deepest hand surface sample inside the object,
/// and the volume of cells inside both at [`PENETRATION_SPACING`].
pub fn penetration(posed: &PosedHand, object: &MeshSdf) -> Result<Penetration> {
    if !object.is_signed() {
        return Err(Error::NotWatertight(object.mesh().open_edge_count()));
    }
    let depth = posed
        .samples
        .iter()
        .map(|p| (-object.distance(p)).max(0.0))
        .fold(0.0, f64::max);
    let volume = match intersect(&hand_bounds(posed), &object.mesh().bbox()) {
        None => 0.0,
        Some(b) => {
            let grid = OccupancyGrid::covering(&b, PENETRATION_SPACING)?;
            let obj = grid.fill_mesh(object.mesh())?;
            let both = obj.filled_with(|c| posed.sdf(c).is_some_and(|(d, _, _)| d <= 0.0));
            let n = obj.occupancy.iter().zip(&both.occupancy).filter(|(a, b)| **a && **b).count();
            n as f64 * grid.cell_volume()
        }
    };
    Ok(Penetration { depth, volume })
}

/// Penetration between link pairs that are checked for collisions.
pub fn self_penetration(posed: &PosedHand) -> Result<Penetration> {
    let spec = posed.spec;
    let mut depth: f64 = 0.0;
    for &(i, j) in &spec.collision_pairs {
        for (a, b) in [(i, j), (j, i)] {
            for p in posed.link_samples(a) {
                if posed.link_lower_bound(b, p) < 0.0 {
                    depth = depth.max(-posed.link_sdf(b, p).0);
                }
            }
        }
    }
    if spec.collision_pairs.is_empty() || posed.samples.is_empty() {
        return Ok(Penetration { depth, volume: 0.0 });
    }
    let links = spec.geometric_links();
    let grid = OccupancyGrid::covering(&hand_bounds(posed), PENETRATION_SPACING)?;
    let shared = grid.filled_with(|c| {
        let inside: Vec<usize> = links
            .iter()
            .copied()
            .filter(|&l| posed.link_lower_bound(l, c) <= 0.0 && posed.link_sdf(l, c).0 <= 0.0)
            .collect();
        spec.collision_pairs
            .iter()
            .any(|(a, b)| inside.contains(a) && inside.contains(b))
    });
    Ok(Penetration {
        depth,
        volume: shared.occupied_volume(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionality {
    pub precision: f64,
    pub recall: f64,
    /// The truth map has no contact, so recall is 1 by convention.
    pub truth_empty: bool,
}

/// Agreement of two object contact maps binarized at [`FUNCTIONALITY_LEVEL`].
pub fn functionality_pr(generated: &[f64], truth: &[f64]) -> Result<Functionality> {
    if generated.len() != truth.len() {
        return Err(Error::invalid(format!(
            "contact maps cover different sample sets ({} vs {} samples)",
            generated.len(),
            truth.len()
        )));
    }
    let on = |v: f64| v >= FUNCTIONALITY_LEVEL;
    let pred = generated.iter().filter(|&&v| on(v)).count();
    let real = truth.iter().filter(|&&v| on(v)).count();
    let both = generated.iter().zip(truth).filter(|(g, t)| on(**g) && on(**t)).count();
    let truth_empty = real == 0;
    if truth_empty {
        warn!("truth contact map is empty; recall set to 1");
    }
    Ok(Functionality {
        precision: if pred == 0 { 0.0 } else { both as f64 / pred as f64 },
        recall: if truth_empty { 1.0 } else { both as f64 / real as f64 },
        truth_empty,
    })
}

fn unit4(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("rotation 4-vector has zero or non-finite norm"));
    }
    if (n - 1.0).abs() > 1e-6 {
        warn!("rotation 4-vector has norm {n}; normalizing");
    }
    Ok(q.map(|v| v / n))
}

/// Hand rotation distance `2 acos |<p, q>|` between `[w, x, y, z]` quaternions.
pub fn hrd(p: [f64; 4], q: [f64; 4]) -> Result<f64> {
    let (p, q) = (unit4(p)?, unit4(q)?);
    let dot: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    // 2 acos|<p, q>| written with atan2, which stays exact near 0
    let diff = (0..4).map(|i| (p[i] - s * q[i]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|i| (p[i] + s * q[i]).powi(2)).sum::<f64>().sqrt();
    Ok(4.0 * diff.atan2(sum))
}

pub fn hrd_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let w = |q: &UnitQuaternion<f64>| [q.w, q.i, q.j, q.k];
    hrd(w(a), w(b)).expect("unit quaternions")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iou {
    pub value: f64,
    /// Both grids were empty; the value is 1 by convention.
    pub both_empty: bool,
}

/// Intersection over union; `b` is resampled onto `a`'s lattice if needed.
pub fn iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Iou {
    let resampled;
    let b = if a.same_lattice(b) {
        b
    } else {
        resampled = b.resample_to(a);
        &resampled
    };
    let inter = a.occupancy.iter().zip(&b.occupancy).filter(|(x, y)| **x && **y).count();
    let union = a.occupancy.iter().zip(&b.occupancy).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        warn!("IoU of two empty grids set to 1");
        return Iou {
            value: 1.0,
            both_empty: true,
        };
    }
    Iou {
        value: inter as f64 / union as f64,
        both_empty: false,
    }
}

/// Symmetric mean nearest-neighbor distance between reconstruction and
/// truth samples, divided by the truth bounding-box diagonal.
pub fn ncd(reconstructed: &[Vec3], truth_samples: &[Vec3], truth_mesh: &TriMesh) -> Result<f64> {
    if reconstructed.is_empty() || truth_samples.is_empty() {
        return Err(Error::invalid("normalized chamfer distance needs two non-empty point sets"));
    }
    let diag = truth_mesh.bbox().diagonal();
    if !(diag > 0.0) {
        return Err(Error::invalid("truth mesh has no extent"));
    }
    let mean = |from: &[Vec3], to: &[Vec3]| {
        let t = KdTree::new(to);
        from.iter().map(|p| t.nearest(p).1.sqrt()).sum::<f64>() / from.len() as f64
    };
    Ok((mean(reconstructed, truth_samples) + mean(truth_samples, reconstructed)) / diag)
}

/// Samples within this distance of a link's closest sample form its contact patch (cm).
pub const PATCH_DEPTH: f64 = 0.25;
/// Most contact points taken from one link.
pub const PATCH_POINTS: usize = 4;

/// A link's contact patch: its samples within [`PATCH_DEPTH`] of the closest
/// one, thinned to [`PATCH_POINTS`] by farthest-point selection. Two point
/// contacts cannot resist torque about the line through them, so a patch is
/// what lets a flat pad hold on its own.
pub fn contact_patch(samples: &[Vec3], object: &dyn SignedDistance) -> Vec<Vec3> {
    let d: Vec<f64> = samples.iter().map(|p| object.distance(p)).collect();
    let Some(first) = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])) else {
        return vec![];
    };
    let near: Vec<Vec3> = (0..d.len()).filter(|&i| d[i] <= d[first] + PATCH_DEPTH).map(|i| samples[i]).collect();
    let mut chosen = vec![samples[first]];
    while chosen.len() < PATCH_POINTS {
        let far = near
            .iter()
            .map(|p| (p, chosen.iter().map(|c| (p - c).norm()).fold(f64::INFINITY, f64::min)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match far {
            Some((p, gap)) if gap > 1e-9 => chosen.push(*p),
            _ => break,
        }
    }
    chosen
}

#[derive(Debug, Clone)]
pub struct ClosureOutcome {
    pub success: bool,
    pub epsilon: f64,
    pub contact_links: Vec<usize>,
    pub closed: Grasp,
}

/// Quasi-static stand-in for a shake test: flex every joint a further 10
/// degrees toward the palm, stopping each at first contact, then require
/// force closure (epsilon > 0) from contacts on at least two links.
pub fn closure_success(spec: &HandSpec, g: &Grasp, object: &MeshSdf) -> Result<ClosureOutcome> {
    let opts = ClosingOptions::default();
    let closed = close_hand(spec, g, object, &opts)?;
    let posed = crate::hand::forward_kinematics(spec, &closed.grasp)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for &l in &closed.touching_links {
        for p in contact_patch(posed.link_samples(l), object) {
            points.push(p);
            normals.push(-object.distance_and_gradient(&p).1);
        }
    }
    let mesh = object.mesh();
    let epsilon = if points.is_empty() {
        0.0
    } else {
        let set = ContactSet::new(points, normals, DEFAULT_FRICTION, DEFAULT_CONE_EDGES, mesh.bbox().center())?;
        epsilon_quality(&set, torque_scale(mesh))?
    };
    Ok(ClosureOutcome {
        success: closed.touching_links.len() >= 2 && epsilon > 0.0,
        epsilon,
        contact_links: closed.touching_links,
        closed: closed.grasp,
    })
}

/// Contact set of a posed hand: the contact patch of every link that comes
/// within the contact threshold.
pub fn grasp_contacts(posed: &PosedHand, object: &MeshSdf) -> Result<ContactSet> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for l in posed.spec.geometric_links() {
        let samples = posed.link_samples(l);
        if samples.iter().any(|p| object.distance(p) <= CONTACT_THRESHOLD) {
            for p in contact_patch(samples, object) {
                points.push(p);
                normals.push(-object.distance_and_gradient(&p).1);
            }
        }
    }
    ContactSet::new(points, normals, DEFAULT_FRICTION, DEFAULT_CONE_EDGES, object.mesh().bbox().center())
}

/// One row of an evaluation: a grasp on an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub object: String,
    pub grasp: String,
    pub epsilon: f64,
    pub penetration_depth: f64,
    pub penetration_volume: f64,
    pub self_penetration_depth: f64,
    pub self_penetration_volume: f64,
    pub functionality_precision: Option<f64>,
    pub functionality_recall: Option<f64>,
    pub hrd: Option<f64>,
    pub iou: Option<f64>,
    pub ncd: Option<f64>,
    /// Quasi-static closure check, not a dynamic shake test.
    pub closure_success: bool,
}

const CSV_COLUMNS: [&str; 13] = [
    "object",
    "grasp",
    "epsilon",
    "penetration_depth_cm",
    "penetration_volume_cm3",
    "self_penetration_depth_cm",
    "self_penetration_volume_cm3",
    "functionality_precision",
    "functionality_recall",
    "hrd_rad",
    "iou",
    "ncd",
    "closure_success_quasistatic",
];

impl MetricsReport {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        [
            quote(&self.object),
            quote(&self.grasp),
            format!("{:.6}", self.epsilon),
            format!("{:.6}", self.penetration_depth),
            format!("{:.6}", self.penetration_volume),
            format!("{:.6}", self.self_penetration_depth),
            format!("{:.6}", self.self_penetration_volume),
            opt(self.functionality_precision),
            opt(self.functionality_recall),
            opt(self.hrd),
            opt(self.iou),
            opt(self.ncd),
            self.closure_success.to_string(),
        ]
        .join(",")
    }
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = MetricsReport::csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
