//! Functional grasp optimization: contact, anchor, gesture and penetration
//! losses over a posed robot hand, minimized by projected gradient descent in
//! actuator space with random restarts, followed by a penetration-focused
//! refinement pass.

use std::time::Instant;

use nalgebra::{Isometry3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{digitize, digitize_derivative, ContactBundle};
use crate::geometry::{xform, Aabb, KdTree, MeshSdf, SdfGrid, SignedDistance, SurfaceSamples, TriMesh, Vec3};
use crate::hand::{forward_kinematics, Grasp, GraspGradient, HandSpec, LinkForces, PosedHand};
use crate::{Error, Result};

/// Grid spacing used for the object distance field (cm).
pub const DEFAULT_SDF_SPACING: f64 = 0.25;
/// Margin around the object covered by the distance grid (cm).
const SDF_MARGIN: f64 = 4.0;
/// Length that converts angle steps into comparable point motion (cm).
const ANGLE_SCALE: f64 = 5.0;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Attraction of each segment to its own contact region.
    pub attract: f64,
    /// Repulsion of each segment from other segments' regions.
    pub repel: f64,
    pub joint: f64,
    pub translation: f64,
    pub rotation: f64,
    pub interpenetration: f64,
    pub self_penetration: f64,
    /// Scale on the anchor term; 0 disables it.
    pub anchor: f64,
    /// Repulsion saturates at this distance (cm).
    pub repel_cutoff: f64,
    /// Anchors closer than this to their region contribute nothing (cm).
    pub anchor_slack: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            attract: 5.0,
            repel: 2.0,
            joint: 5.0,
            translation: 5.0,
            rotation: 2.0,
            interpenetration: 1.0,
            self_penetration: 1.0,
            anchor: 1.0,
            repel_cutoff: 2.5,
            anchor_slack: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.attract,
            self.repel,
            self.joint,
            self.translation,
            self.rotation,
            self.interpenetration,
            self.self_penetration,
            self.anchor,
            self.repel_cutoff,
            self.anchor_slack,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Object surface samples in the world frame plus a distance field held in
/// the object's own frame.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub samples: SurfaceSamples,
    pub pose: Isometry3<f64>,
    grid: std::sync::Arc<SdfGrid>,
    diagonal: f64,
}

impl ObjectModel {
    /// Builds the distance grid for a watertight mesh given in its own frame.
    /// `samples` must be in the same frame.
    pub fn new(mesh: &TriMesh, samples: SurfaceSamples, spacing: f64) -> Result<Self> {
        if !mesh.is_watertight() {
            return Err(Error::NotWatertight(mesh.open_edge_count()));
        }
        if samples.is_empty() {
            return Err(Error::invalid("object has no surface samples"));
        }
        let bbox = mesh.bbox();
        let sdf = MeshSdf::new(mesh.clone());
        let grid = SdfGrid::from_mesh(&sdf, &bbox.padded(SDF_MARGIN), spacing);
        Ok(ObjectModel {
            samples,
            pose: Isometry3::identity(),
            grid: std::sync::Arc::new(grid),
            diagonal: bbox.diagonal(),
        })
    }

    /// The same object moved rigidly by `iso`.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let samples = SurfaceSamples {
            points: self.samples.points.iter().map(|p| xform(iso, p)).collect(),
            normals: self.samples.normals.iter().map(|n| iso.rotation * n).collect(),
            face_ids: self.samples.face_ids.clone(),
        };
        ObjectModel {
            samples,
            pose: iso * self.pose,
            grid: self.grid.clone(),
            diagonal: self.diagonal,
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }

    /// Signed distance and world gradient at a world point.
    pub fn sdf(&self, p: &Vec3) -> (f64, Vec3) {
        let local = self.pose.inverse_transform_point(&(*p).into()).coords;
        let (d, g) = self.grid.distance_and_gradient(&local);
        (d, self.pose.rotation * g)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.samples.points)
    }
}

impl SignedDistance for ObjectModel {
    fn distance(&self, p: &Vec3) -> f64 {
        self.sdf(p).0
    }

    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        self.sdf(p)
    }
}

/// Value of every loss term at one grasp.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub contact: f64,
    pub anchor: f64,
    pub gesture: f64,
    pub interpenetration: f64,
    pub self_penetration: f64,
    pub total: f64,
}

impl LossTerms {
    fn finish(mut self) -> Self {
        self.total = self.contact + self.anchor + self.gesture + self.interpenetration + self.self_penetration;
        self
    }

    fn is_finite(&self) -> bool {
        [self.contact, self.anchor, self.gesture, self.interpenetration, self.self_penetration]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Closest pair between a point set and a k-d tree: (distance, point index, tree point).
fn closest_pair(points: &[Vec3], tree: &KdTree) -> Option<(f64, usize, Vec3)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let (j, d2) = tree.nearest(p);
        if best.is_none_or(|b| d2 < b.0) {
            best = Some((d2, i, j));
        }
    }
    best.map(|(d2, i, j)| (d2.sqrt(), i, tree.points()[j]))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Contact targets of one bundle resolved against a robot hand.
pub struct Objective<'a> {
    pub spec: &'a HandSpec,
    pub bundle: &'a ContactBundle,
    pub object: &'a ObjectModel,
    pub weights: LossWeights,
    /// Grasp the gesture term pulls toward.
    pub reference: Grasp,
    /// (robot link, bundle segment)
    link_segments: Vec<(usize, usize)>,
    segment_trees: Vec<Option<KdTree>>,
    segment_omega: Vec<Option<f64>>,
    /// Segments with regions that some robot link targets.
    repel_segments: Vec<usize>,
    /// (robot anchor, region tree)
    anchor_targets: Vec<(usize, KdTree)>,
}

impl<'a> Objective<'a> {
    /// Robot links find their segment through `human_segment` or their own
    /// name; anchors through `human_anchor` or their own name.
    pub fn new(
        spec: &'a HandSpec,
        bundle: &'a ContactBundle,
        object: &'a ObjectModel,
        weights: LossWeights,
        reference: Grasp,
    ) -> Result<Self> {
        weights.validate()?;
        bundle.validate(object.samples.len())?;
        if reference.q.len() != spec.dof() {
            return Err(Error::invalid("reference grasp does not match the hand"));
        }
        let pts = &object.samples.points;
        let segment_trees: Vec<Option<KdTree>> = bundle
            .segments
            .iter()
            .map(|s| {
                (!s.region.is_empty())
                    .then(|| KdTree::new(&s.region.iter().map(|&i| pts[i]).collect::<Vec<_>>()))
            })
            .collect();
        let segment_omega = bundle
            .segments
            .iter()
            .map(|s| (!s.omega.is_empty()).then(|| s.omega.iter().sum::<f64>() / s.omega.len() as f64))
            .collect();
        let mut link_segments = Vec::new();
        for (l, link) in spec.links.iter().enumerate() {
            if !link.has_geometry() {
                continue;
            }
            let key = link.human_segment.as_deref().unwrap_or(&link.name);
            if let Some(s) = bundle.segments.iter().position(|s| s.name == key) {
                link_segments.push((l, s));
            }
        }
        let mut repel_segments: Vec<usize> = link_segments
            .iter()
            .map(|&(_, s)| s)
            .filter(|&s| segment_trees[s].is_some())
            .collect();
        repel_segments.sort_unstable();
        repel_segments.dedup();
        let anchor_targets = spec
            .anchors
            .iter()
            .enumerate()
            .filter_map(|(k, a)| {
                let key = a.human_anchor.as_deref().unwrap_or(&a.name);
                let target = bundle.anchor(key)?;
                (!target.region.points.is_empty()).then(|| {
                    (k, KdTree::new(&target.region.points.iter().map(|&i| pts[i]).collect::<Vec<_>>()))
                })
            })
            .collect();
        Ok(Objective {
            spec,
            bundle,
            object,
            weights,
            reference,
            link_segments,
            segment_trees,
            segment_omega,
            repel_segments,
            anchor_targets,
        })
    }

    /// Map differences, attraction and repulsion.
    fn contact_term(&self, posed: &PosedHand, mut forces: Option<&mut LinkForces>) -> f64 {
        let w = &self.weights;
        let pts = &self.object.samples.points;
        // object map against the live hand
        let n = pts.len() as f64;
        let mut map_o = 0.0;
        for (p, target) in pts.iter().zip(&self.bundle.object_omega) {
            let Some((d, g, link)) = posed.sdf(p) else {
                map_o += (digitize(f64::INFINITY) - target).abs();
                continue;
            };
            let diff = digitize(d) - target;
            map_o += diff.abs();
            if let Some(f) = forces.as_deref_mut() {
                let c = sign(diff) * digitize_derivative(d) / n;
                if c != 0.0 {
                    f.add(link, p, &(-c * g));
                }
            }
        }
        map_o /= n;

        // per-segment mean hand map, weighted by sample count
        let counted: Vec<(usize, f64)> = self
            .link_segments
            .iter()
            .filter_map(|&(l, s)| self.segment_omega[s].map(|m| (l, m)))
            .collect();
        let total_samples: usize = counted.iter().map(|(l, _)| posed.link_samples(*l).len()).sum();
        let mut map_m = 0.0;
        if total_samples > 0 {
            for &(l, target) in &counted {
                let xs = posed.link_samples(l);
                if xs.is_empty() {
                    continue;
                }
                let ds: Vec<(f64, Vec3)> = xs.iter().map(|x| self.object.sdf(x)).collect();
                let mean = ds.iter().map(|(d, _)| digitize(*d)).sum::<f64>() / xs.len() as f64;
                let wl = xs.len() as f64 / total_samples as f64;
                let diff = mean - target;
                map_m += wl * diff.abs();
                if let Some(f) = forces.as_deref_mut() {
                    let c = sign(diff) * wl / xs.len() as f64;
                    if c != 0.0 {
                        for (x, (d, g)) in xs.iter().zip(&ds) {
                            let k = c * digitize_derivative(*d);
                            if k != 0.0 {
                                f.add(l, x, &(k * g));
                            }
                        }
                    }
                }
            }
        }

        let mut attract = 0.0;
        let mut repel = 0.0;
        for &(l, s) in &self.link_segments {
            let xs = posed.link_samples(l);
            if xs.is_empty() {
                continue;
            }
            if let Some(tree) = &self.segment_trees[s] {
                if let Some((d, i, o)) = closest_pair(xs, tree) {
                    attract += d;
                    if let Some(f) = forces.as_deref_mut() {
                        if d > 0.0 {
                            f.add(l, &xs[i], &(w.attract * (xs[i] - o) / d));
                        }
                    }
                }
            }
            for &other in &self.repel_segments {
                if other == s {
                    continue;
                }
                let tree = self.segment_trees[other].as_ref().expect("repel segments have regions");
                let Some((d, i, o)) = closest_pair(xs, tree) else { continue };
                if d < w.repel_cutoff {
                    repel += d;
                    if let Some(f) = forces.as_deref_mut() {
                        if d > 0.0 {
                            f.add(l, &xs[i], &(-w.repel * (xs[i] - o) / d));
                        }
                    }
                } else {
                    repel += w.repel_cutoff;
                }
            }
        }
        map_o + map_m + w.attract * attract - w.repel * repel
    }

    /// Distance from each targeted robot anchor to its region, in anchor order.
    pub fn anchor_distances(&self, posed: &PosedHand) -> Vec<f64> {
        self.anchor_targets
            .iter()
            .map(|(k, tree)| tree.nearest(&posed.anchors[*k]).1.sqrt())
            .collect()
    }

    fn anchor_term(&self, posed: &PosedHand, mut forces: Option<&mut LinkForces>) -> f64 {
        let w = &self.weights;
        if w.anchor == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (k, tree) in &self.anchor_targets {
            let a = posed.anchors[*k];
            let (j, d2) = tree.nearest(&a);
            let d = d2.sqrt();
            if d > w.anchor_slack {
                total += d;
                if let Some(f) = forces.as_deref_mut() {
                    let link = self.spec.anchors[*k].link;
                    f.add(link, &a, &(w.anchor * (a - tree.points()[j]) / d));
                }
            }
        }
        w.anchor * total
    }

    fn interpenetration_term(&self, posed: &PosedHand, mut forces: Option<&mut LinkForces>) -> f64 {
        let lam = self.weights.interpenetration;
        let mut total = 0.0;
        for p in &self.object.samples.points {
            if let Some((d, g, link)) = posed.sdf(p) {
                if d < 0.0 {
                    total -= d;
                    if let Some(f) = forces.as_deref_mut() {
                        f.add(link, p, &(lam * g));
                    }
                }
            }
        }
        lam * total
    }

    /// Every term, plus the gradient with respect to joints and wrist when asked.
    pub fn evaluate(&self, g: &Grasp, with_gradient: bool) -> Result<(LossTerms, Option<GraspGradient>)> {
        let posed = forward_kinematics(self.spec, g)?;
        let mut forces = with_gradient.then(|| LinkForces::new(self.spec.links.len()));
        let terms = LossTerms {
            contact: self.contact_term(&posed, forces.as_mut()),
            anchor: self.anchor_term(&posed, forces.as_mut()),
            gesture: loss_gesture(g, &self.reference, &self.weights),
            interpenetration: self.interpenetration_term(&posed, forces.as_mut()),
            self_penetration: self_penetration(&posed, self.weights.self_penetration, forces.as_mut()),
            total: 0.0,
        }
        .finish();
        let grad = forces.map(|f| {
            let mut gr = f.gradient(&posed);
            add_gesture_gradient(&mut gr, g, &self.reference, &self.weights);
            gr
        });
        Ok((terms, grad))
    }
}

/// Contact term of a posed hand against a bundle on `object`.
pub fn loss_contact(posed: &PosedHand, bundle: &ContactBundle, object: &ObjectModel, weights: &LossWeights) -> Result<f64> {
    let obj = Objective::new(posed.spec, bundle, object, *weights, Grasp::zero(posed.spec))?;
    Ok(obj.contact_term(posed, None))
}

pub fn loss_anchor(posed: &PosedHand, bundle: &ContactBundle, object: &ObjectModel, weights: &LossWeights) -> Result<f64> {
    let obj = Objective::new(posed.spec, bundle, object, *weights, Grasp::zero(posed.spec))?;
    Ok(obj.anchor_term(posed, None))
}

/// Angle of the relative rotation between two orientations.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let dot = a.coords.dot(&b.coords).abs().min(1.0);
    2.0 * dot.acos()
}

/// Wrist translation offset expressed in the reference wrist frame, so the
/// L1 norm does not depend on the world axes.
fn wrist_offset(g: &Grasp, reference: &Grasp) -> Vec3 {
    reference.wrist.rotation.inverse() * (g.wrist.translation.vector - reference.wrist.translation.vector)
}

pub fn loss_gesture(g: &Grasp, reference: &Grasp, weights: &LossWeights) -> f64 {
    let dq: f64 = g.q.iter().zip(&reference.q).map(|(a, b)| (a - b).abs()).sum();
    let dt = wrist_offset(g, reference).abs().sum();
    let dr = rotation_distance(&g.wrist.rotation, &reference.wrist.rotation);
    weights.joint * dq + weights.translation * dt + weights.rotation * dr
}

fn add_gesture_gradient(grad: &mut GraspGradient, g: &Grasp, reference: &Grasp, w: &LossWeights) {
    for (gq, (a, b)) in grad.q.iter_mut().zip(g.q.iter().zip(&reference.q)) {
        *gq += w.joint * sign(a - b);
    }
    let dt = wrist_offset(g, reference);
    grad.translation += w.translation * (reference.wrist.rotation * dt.map(sign));
    // the angle of R·R_refᵀ grows along its own axis under a left increment
    let rel = g.wrist.rotation * reference.wrist.rotation.inverse();
    if let Some((axis, angle)) = rel.axis_angle() {
        if angle > 1e-12 {
            grad.rotation += w.rotation * axis.into_inner();
        }
    }
}

pub fn loss_interpenetration(posed: &PosedHand, object: &ObjectModel, weights: &LossWeights) -> f64 {
    let mut total = 0.0;
    for p in &object.samples.points {
        if let Some((d, _, _)) = posed.sdf(p) {
            total += (-d).max(0.0);
        }
    }
    weights.interpenetration * total
}

pub fn loss_self_penetration(posed: &PosedHand, weights: &LossWeights) -> f64 {
    self_penetration(posed, weights.self_penetration, None)
}

/// Samples of each link inside the other link of every collision pair, both orderings.
fn self_penetration(posed: &PosedHand, lam: f64, mut forces: Option<&mut LinkForces>) -> f64 {
    let mut total = 0.0;
    for &(a, b) in &posed.spec.collision_pairs {
        for (i, j) in [(a, b), (b, a)] {
            for x in posed.link_samples(i) {
                if posed.link_lower_bound(j, x) >= 0.0 {
                    continue;
                }
                let (d, g) = posed.link_sdf(j, x);
                if d < 0.0 {
                    total -= d;
                    if let Some(f) = forces.as_deref_mut() {
                        f.add(i, x, &(-lam * g));
                        f.add(j, x, &(lam * g));
                    }
                }
            }
        }
    }
    lam * total
}

/// Deepest overlap between hand and object: hand samples inside the object
/// and object samples inside the hand (cm).
pub fn penetration_depth(posed: &PosedHand, object: &ObjectModel) -> f64 {
    let hand = posed
        .samples
        .iter()
        .map(|x| -object.sdf(x).0)
        .fold(0.0, f64::max);
    let obj = object
        .samples
        .points
        .iter()
        .filter_map(|p| posed.sdf(p).map(|s| -s.0))
        .fold(0.0, f64::max);
    hand.max(obj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub steps: usize,
    pub seed: u64,
    /// Restart noise on joints (rad), wrist translation (cm), wrist rotation (rad).
    pub noise_joint: f64,
    pub noise_translation: f64,
    pub noise_rotation: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: 5,
            steps: 200,
            seed: 0,
            noise_joint: 0.05,
            noise_translation: 0.5,
            noise_rotation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub seed: u64,
    pub initial: LossTerms,
    pub final_loss: LossTerms,
    /// Loss after every accepted step.
    pub trace: Vec<LossTerms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub restarts: Vec<RestartSummary>,
    pub chosen: usize,
    pub grasp: Grasp,
    pub actuated: Vec<f64>,
    /// Not part of any reproducibility comparison.
    pub wall_clock_s: f64,
}

impl OptimizationReport {
    pub fn best(&self) -> &RestartSummary {
        &self.restarts[self.chosen]
    }
}

struct Descent {
    grasp: Grasp,
    actuated: Vec<f64>,
    terms: LossTerms,
    initial: LossTerms,
    trace: Vec<LossTerms>,
}

/// Projected gradient descent in actuator and wrist space with Armijo
/// backtracking. `stop` is checked after every accepted step.
fn descend(
    obj: &Objective,
    start: Grasp,
    steps: usize,
    stop: &dyn Fn(&Grasp) -> bool,
) -> Result<Descent> {
    let spec = obj.spec;
    let c = &spec.coupling.matrix;
    let mut a = spec.clamp_actuated(&spec.actuated_from_q(&start.q));
    let mut g = Grasp::new(spec.apply_coupling(&a)?.0, start.wrist);
    let (mut terms, _) = obj.evaluate(&g, false)?;
    if !terms.is_finite() {
        return Err(Error::NonFinite(format!("loss at initialization: {terms:?}")));
    }
    let initial = terms;
    let mut trace = Vec::new();
    let mut step = 0.05;
    let l2 = ANGLE_SCALE * ANGLE_SCALE;
    for _ in 0..steps {
        let (_, grad) = obj.evaluate(&g, true)?;
        let grad = grad.expect("gradient requested");
        let ga: Vec<f64> = (0..spec.doa())
            .map(|k| (0..spec.dof()).map(|j| c[(j, k)] * grad.q[j]).sum())
            .collect();
        let mut accepted = None;
        let mut s = step;
        for _ in 0..40 {
            let cand_a = spec.clamp_actuated(
                &a.iter().zip(&ga).map(|(x, d)| x - s * d / l2).collect::<Vec<_>>(),
            );
            let dt = -s * grad.translation;
            let dw = -s * grad.rotation / l2;
            let decrease = ga.iter().zip(cand_a.iter().zip(&a)).map(|(d, (x, y))| d * (y - x)).sum::<f64>()
                - grad.translation.dot(&dt)
                - grad.rotation.dot(&dw);
            if decrease <= 0.0 {
                break;
            }
            let cand = Grasp::new(spec.apply_coupling(&cand_a)?.0, g.moved(&dt, &dw));
            let (t, _) = obj.evaluate(&cand, false)?;
            if t.is_finite() && t.total <= terms.total - ARMIJO * decrease {
                accepted = Some((cand_a, cand, t));
                break;
            }
            s *= 0.5;
        }
        let Some((na, ng, nt)) = accepted else { break };
        a = na;
        g = ng;
        terms = nt;
        trace.push(terms);
        step = (s * 2.0).min(10.0);
        if stop(&g) {
            break;
        }
    }
    Ok(Descent {
        grasp: g,
        actuated: a,
        terms,
        initial,
        trace,
    })
}

fn check_finite(g: &Grasp) -> Result<()> {
    let w = &g.wrist;
    if g.q.iter().all(|v| v.is_finite())
        && w.translation.vector.iter().all(|v| v.is_finite())
        && w.rotation.coords.iter().all(|v| v.is_finite())
    {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("grasp has non-finite entries: q={:?}, wrist={:?}", g.q, w)))
    }
}

fn restart_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Perturbed copy of `g` for restart seeds.
fn perturb(spec: &HandSpec, g: &Grasp, opts: &OptimizeOptions, seed: u64) -> Result<Grasp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |s: f64| s * unit.sample(&mut rng);
    let a: Vec<f64> = spec
        .actuated_from_q(&g.q)
        .iter()
        .map(|x| x + draw(opts.noise_joint))
        .collect();
    let q = spec.apply_coupling(&spec.clamp_actuated(&a))?.0;
    let dt = Vec3::new(draw(opts.noise_translation), draw(opts.noise_translation), draw(opts.noise_translation));
    let dw = Vec3::new(draw(opts.noise_rotation), draw(opts.noise_rotation), draw(opts.noise_rotation));
    Ok(Grasp::new(q, g.moved(&dt, &dw)))
}

/// Minimizes the full objective from `init` (the gesture reference) and
/// from perturbed copies; the lowest final loss wins, ties to the lower index.
pub fn optimize(
    spec: &HandSpec,
    init: &Grasp,
    bundle: &ContactBundle,
    object: &ObjectModel,
    weights: &LossWeights,
    opts: &OptimizeOptions,
) -> Result<OptimizationReport> {
    if opts.restarts == 0 {
        return Err(Error::Config("at least one restart is required".into()));
    }
    check_finite(init)?;
    if !spec.within_limits(&init.q) {
        return Err(Error::invalid("initial grasp violates joint limits"));
    }
    let clock = Instant::now();
    let obj = Objective::new(spec, bundle, object, *weights, init.clone())?;
    let runs: Vec<Result<(RestartSummary, Grasp, Vec<f64>)>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = restart_seed(opts.seed, r);
            let start = if r == 0 { init.clone() } else { perturb(spec, init, opts, seed)? };
            let d = descend(&obj, start, opts.steps, &|_| false)?;
            Ok((
                RestartSummary {
                    index: r,
                    seed,
                    initial: d.initial,
                    final_loss: d.terms,
                    trace: d.trace,
                },
                d.grasp,
                d.actuated,
            ))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let chosen = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.0.final_loss.total < runs[best].0.final_loss.total { i } else { best });
    let (grasp, actuated) = (runs[chosen].1.clone(), runs[chosen].2.clone());
    Ok(OptimizationReport {
        restarts: runs.into_iter().map(|r| r.0).collect(),
        chosen,
        grasp,
        actuated,
        wall_clock_s: clock.elapsed().as_secs_f64(),
    })
}

/// Refinement stops once penetration is below this depth (cm).
pub const REFINE_TARGET_DEPTH: f64 = 0.1;
/// Grasps left deeper than this are flagged infeasible (cm).
pub const REFINE_FEASIBLE_DEPTH: f64 = 0.5;
pub const REFINE_STEPS: usize = 100;
/// Multiplier on both penetration weights during refinement.
pub const REFINE_PENETRATION_BOOST: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub grasp: Grasp,
    pub initial_depth: f64,
    pub final_depth: f64,
    pub steps: usize,
    pub feasible: bool,
}

/// Pushes the hand out of the object while staying close to `g`: gesture
/// term against `g`, contact and anchor terms, penetration weights boosted.
pub fn refine_physical(
    spec: &HandSpec,
    g: &Grasp,
    bundle: &ContactBundle,
    object: &ObjectModel,
    weights: &LossWeights,
) -> Result<RefineOutcome> {
    check_finite(g)?;
    let depth_of = |g: &Grasp| -> Result<f64> { Ok(penetration_depth(&forward_kinematics(spec, g)?, object)) };
    let initial_depth = depth_of(g)?;
    if initial_depth < REFINE_TARGET_DEPTH {
        return Ok(RefineOutcome {
            grasp: g.clone(),
            initial_depth,
            final_depth: initial_depth,
            steps: 0,
            feasible: true,
        });
    }
    let mut w = *weights;
    w.interpenetration *= REFINE_PENETRATION_BOOST;
    w.self_penetration *= REFINE_PENETRATION_BOOST;
    let obj = Objective::new(spec, bundle, object, w, g.clone())?;
    let stop = |g: &Grasp| depth_of(g).map(|d| d < REFINE_TARGET_DEPTH).unwrap_or(true);
    let d = descend(&obj, g.clone(), REFINE_STEPS, &stop)?;
    let final_depth = depth_of(&d.grasp)?;
    Ok(RefineOutcome {
        grasp: d.grasp,
        initial_depth,
        final_depth,
        steps: d.trace.len(),
        feasible: final_depth <= REFINE_FEASIBLE_DEPTH,
    })
}
