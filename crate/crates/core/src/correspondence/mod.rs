//! Dense correspondence within an object category: a free-form lattice
//! deformation warps the category template onto an instance, instance
//! samples are matched to warped template samples, and contact labels are
//! carried between instances through the shared template.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::contact::{AnchorContacts, AnchorRegion, ContactBundle, SegmentContacts};
use crate::geometry::{Aabb, KdTree, SurfaceSamples, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformationOptions {
    /// Lattice nodes per axis.
    pub lattice: usize,
    pub smoothness: f64,
    pub magnitude: f64,
    pub iterations: usize,
    /// Lattice padding around the template box, as a fraction of its diagonal.
    pub padding: f64,
}

impl Default for DeformationOptions {
    fn default() -> Self {
        DeformationOptions {
            lattice: 8,
            smoothness: 10.0,
            magnitude: 0.1,
            iterations: 300,
            padding: 0.05,
        }
    }
}

/// Fixed-point rounds used to invert a field.
const UNWARP_ROUNDS: usize = 12;

/// Minimum instance cloud size accepted by [`fit_deformation`].
pub const MIN_INSTANCE_SAMPLES: usize = 32;

/// Displacements on a regular lattice, interpolated trilinearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub origin: Vec3,
    pub cell: Vec3,
    pub nodes: usize,
    pub displacement: Vec<Vec3>,
}

impl DeformationField {
    /// Zero field whose lattice covers `bounds`.
    pub fn identity(bounds: &Aabb, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Config("deformation lattice needs at least 2 nodes per axis".into()));
        }
        if bounds.is_empty() {
            return Err(Error::invalid("deformation lattice over empty bounds"));
        }
        let ext = bounds.extent().map(|e| e.max(1e-9));
        Ok(DeformationField {
            origin: bounds.min,
            cell: ext / (nodes - 1) as f64,
            nodes,
            displacement: vec![Vec3::zeros(); nodes * nodes * nodes],
        })
    }

    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nodes * (j + self.nodes * k)
    }

    /// The 8 lattice nodes around `x` with their trilinear weights. Points
    /// outside the lattice use the nearest boundary cell's values.
    pub fn weights(&self, x: &Vec3) -> [(usize, f64); 8] {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((x[a] - self.origin[a]) / self.cell[a]).clamp(0.0, (self.nodes - 1) as f64);
            let b = (u.floor() as usize).min(self.nodes - 2);
            base[a] = b;
            frac[a] = u - b as f64;
        }
        let mut out = [(0, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = [di, dj, dk]
                .iter()
                .enumerate()
                .map(|(a, &d)| if d == 1 { frac[a] } else { 1.0 - frac[a] })
                .product::<f64>();
            *slot = (self.node(base[0] + di, base[1] + dj, base[2] + dk), w);
        }
        out
    }

    pub fn displacement_at(&self, x: &Vec3) -> Vec3 {
        self.weights(x)
            .iter()
            .map(|(n, w)| *w * self.displacement[*n])
            .sum()
    }

    pub fn warp(&self, x: &Vec3) -> Vec3 {
        x + self.displacement_at(x)
    }

    pub fn warp_all(&self, xs: &[Vec3]) -> Vec<Vec3> {
        xs.iter().map(|x| self.warp(x)).collect()
    }

    /// Template-frame point that warps onto `p`, by fixed-point iteration
    /// from `guess`. Exact for fields whose displacement changes slower
    /// than the position.
    pub fn unwarp(&self, p: &Vec3, guess: &Vec3) -> Vec3 {
        let mut x = *guess;
        for _ in 0..UNWARP_ROUNDS {
            x = p - self.displacement_at(&x);
        }
        x
    }

    /// Field of the per-axis affine map taking box `from` onto box `to`.
    pub fn box_affine(&self, from: &Aabb, to: &Aabb) -> DeformationField {
        let (ef, et) = (from.extent(), to.extent());
        let scale = Vec3::from_fn(|a, _| if ef[a] > 1e-12 { et[a] / ef[a] } else { 1.0 });
        let (cf, ct) = (from.center(), to.center());
        let mut out = self.clone();
        let n = self.nodes;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let x = self.origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&self.cell);
                    let y = ct + (x - cf).component_mul(&scale);
                    out.displacement[self.node(i, j, k)] = y - x;
                }
            }
        }
        out
    }

    /// Jacobian of the warp at `x` (identity plus the displacement gradient),
    /// by central differences across a small fraction of a cell.
    pub fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        let mut j = Matrix3::identity();
        for a in 0..3 {
            let h = 1e-3 * self.cell[a];
            let mut lo = *x;
            lo[a] -= h;
            let mut hi = *x;
            hi[a] += h;
            j.set_column(a, &(j.column(a) + (self.displacement_at(&hi) - self.displacement_at(&lo)) / (2.0 * h)));
        }
        j
    }

    /// `M` with `smoothness() = sum over axes of d_axis^T M d_axis`.
    fn smoothness_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes;
        let mut m = DMatrix::zeros(self.displacement.len(), self.displacement.len());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let here = [i, j, k];
                    for a in 0..3 {
                        if here[a] == 0 || here[a] == n - 1 {
                            continue;
                        }
                        let mut lo = here;
                        lo[a] -= 1;
                        let mut hi = here;
                        hi[a] += 1;
                        let row = [
                            (self.node(lo[0], lo[1], lo[2]), 1.0),
                            (self.node(i, j, k), -2.0),
                            (self.node(hi[0], hi[1], hi[2]), 1.0),
                        ];
                        for (r, cr) in row {
                            for (c, cc) in row {
                                m[(r, c)] += cr * cc;
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// Sum of squared axis-wise second differences and its gradient.
    /// Vanishes exactly for fields that are affine in the node indices.
    fn smoothness(&self, grad: Option<&mut [Vec3]>) -> f64 {
        let n = self.nodes;
        let mut total = 0.0;
        let mut g = grad;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let here = [i, j, k];
                    for a in 0..3 {
                        if here[a] == 0 || here[a] == n - 1 {
                            continue;
                        }
                        let mut lo = here;
                        lo[a] -= 1;
                        let mut hi = here;
                        hi[a] += 1;
                        let (il, ic, ih) = (
                            self.node(lo[0], lo[1], lo[2]),
                            self.node(i, j, k),
                            self.node(hi[0], hi[1], hi[2]),
                        );
                        let s = self.displacement[il] - 2.0 * self.displacement[ic]
                            + self.displacement[ih];
                        total += s.norm_squared();
                        if let Some(g) = g.as_deref_mut() {
                            g[il] += 2.0 * s;
                            g[ic] -= 4.0 * s;
                            g[ih] += 2.0 * s;
                        }
                    }
                }
            }
        }
        total
    }
}

/// Symmetric squared chamfer between warped template points and the instance.
fn chamfer(warped: &[Vec3], instance: &KdTree) -> f64 {
    let wt = KdTree::new(warped);
    let fwd: f64 = warped.iter().map(|p| instance.nearest(p).1).sum();
    let bwd: f64 = instance.points().iter().map(|q| wt.nearest(q).1).sum();
    fwd / warped.len() as f64 + bwd / instance.len() as f64
}

#[derive(Debug, Clone)]
pub struct DeformationFit {
    pub field: DeformationField,
    /// Total objective after every round (first entry: zero field).
    pub loss_trace: Vec<f64>,
    /// Chamfer term of the final field.
    pub chamfer: f64,
    /// Chamfer with the zero field.
    pub initial_chamfer: f64,
}

/// Fits a lattice deformation taking `template` onto `instance`. Each round
/// freezes the nearest-neighbor pairs in both directions and solves the
/// resulting quadratic exactly; the frozen-pair objective bounds the true
/// one from above, so the loss never increases. Both clouds must share a
/// canonical frame.
pub fn fit_deformation(
    template: &[Vec3],
    instance: &[Vec3],
    opts: &DeformationOptions,
) -> Result<DeformationFit> {
    if instance.len() < MIN_INSTANCE_SAMPLES {
        return Err(Error::invalid(format!(
            "instance has {} samples, at least {MIN_INSTANCE_SAMPLES} are needed",
            instance.len()
        )));
    }
    if template.is_empty() {
        return Err(Error::invalid("template cloud is empty"));
    }
    if !(opts.smoothness >= 0.0 && opts.magnitude >= 0.0) {
        return Err(Error::Config("deformation weights must be non-negative".into()));
    }
    let bbox = Aabb::from_points(template);
    let bounds = bbox.padded(opts.padding * bbox.diagonal());
    let mut field = DeformationField::identity(&bounds, opts.lattice)?;
    let weights: Vec<[(usize, f64); 8]> = template.iter().map(|x| field.weights(x)).collect();
    let tree = KdTree::new(instance);
    let n = field.displacement.len();
    let (nw, ni) = (template.len() as f64, instance.len() as f64);

    // regularizer Hessian (shared by the three axes)
    let mut reg = field.smoothness_matrix() * (opts.smoothness / n as f64);
    for i in 0..n {
        reg[(i, i)] += opts.magnitude / n as f64 + 1e-12;
    }
    // The magnitude term measures displacement from `prior`: the zero field,
    // or the per-axis box-to-box affine map when that fits better.
    // Stretches along smooth walls are otherwise only seen at the ends, and
    // a penalty toward zero would pull them back.
    let objective = |f: &DeformationField, prior: &DeformationField| {
        let ch = chamfer(&f.warp_all(template), &tree);
        let mag: f64 = f.displacement.iter().zip(&prior.displacement).map(|(d, p)| (d - p).norm_squared()).sum();
        (ch + (opts.smoothness * f.smoothness(None) + opts.magnitude * mag) / n as f64, ch)
    };

    let (mut loss, initial_chamfer) = objective(&field, &field);
    let mut chamfer = initial_chamfer;
    let mut trace = vec![loss];
    let affine = field.box_affine(&bbox, &Aabb::from_points(instance));
    let (l, ch) = objective(&affine, &affine);
    if l < loss {
        field = affine;
        loss = l;
        chamfer = ch;
        trace.push(loss);
    }
    let prior = field.clone();
    for _ in 0..opts.iterations {
        let warped = field.warp_all(template);
        let wt = KdTree::new(&warped);
        let mut h = reg.clone();
        let mut rhs = DMatrix::<f64>::zeros(n, 3);
        for (i, p) in prior.displacement.iter().enumerate() {
            for ax in 0..3 {
                rhs[(i, ax)] += opts.magnitude / n as f64 * p[ax];
            }
        }
        let mut add = |w: &[(usize, f64); 8], target: Vec3, scale: f64| {
            for &(a, ca) in w {
                for &(b, cb) in w {
                    h[(a, b)] += scale * ca * cb;
                }
                for ax in 0..3 {
                    rhs[(a, ax)] += scale * ca * target[ax];
                }
            }
        };
        for (t, p) in warped.iter().enumerate() {
            let q = instance[tree.nearest(p).0];
            add(&weights[t], q - template[t], 1.0 / nw);
        }
        for q in instance {
            let t = wt.nearest(q).0;
            add(&weights[t], q - template[t], 1.0 / ni);
        }
        let Some(chol) = h.cholesky() else { break };
        let sol = chol.solve(&rhs);
        let mut cand = field.clone();
        for (i, d) in cand.displacement.iter_mut().enumerate() {
            *d = Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]);
        }
        let (l, ch) = objective(&cand, &prior);
        if !(l < loss - 1e-12 * loss.abs().max(1e-300)) {
            break;
        }
        field = cand;
        loss = l;
        chamfer = ch;
        trace.push(loss);
    }
    Ok(DeformationFit {
        field,
        loss_trace: trace,
        chamfer,
        initial_chamfer,
    })
}

/// Instance samples matched to template samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceMap {
    pub template_id: String,
    /// For each instance sample, the matched template sample.
    pub matches: Vec<usize>,
    /// Distance from each instance sample to its matched warped sample (cm).
    pub residuals: Vec<f64>,
    /// Template-frame position of each match.
    pub template_points: Vec<Vec3>,
    /// Each instance sample carried back into the template frame by the
    /// inverse field; unlike `template_points` this separates samples that
    /// share a match.
    pub canonical: Vec<Vec3>,
    /// Instance normals carried into the template frame; empty when the
    /// instance came without normals.
    #[serde(default)]
    pub canonical_normals: Vec<Vec3>,
}

/// Matches every instance sample to its nearest warped template sample.
pub fn correspond(
    template_id: &str,
    template: &[Vec3],
    instance: &[Vec3],
    field: &DeformationField,
) -> Result<CorrespondenceMap> {
    if template.is_empty() {
        return Err(Error::invalid("template cloud is empty"));
    }
    let warped = field.warp_all(template);
    let tree = KdTree::new(&warped);
    let mut matches = Vec::with_capacity(instance.len());
    let mut residuals = Vec::with_capacity(instance.len());
    for p in instance {
        let (t, d2) = tree.nearest(p);
        matches.push(t);
        residuals.push(d2.sqrt());
    }
    let template_points: Vec<Vec3> = matches.iter().map(|&t| template[t]).collect();
    let canonical = instance
        .iter()
        .zip(&template_points)
        .map(|(p, t)| field.unwarp(p, t))
        .collect();
    Ok(CorrespondenceMap {
        template_id: template_id.to_string(),
        matches,
        residuals,
        template_points,
        canonical,
        canonical_normals: Vec::new(),
    })
}

/// Fits and matches in one call.
pub fn register(
    template_id: &str,
    template: &SurfaceSamples,
    instance: &SurfaceSamples,
    opts: &DeformationOptions,
) -> Result<(DeformationFit, CorrespondenceMap)> {
    let fit = fit_deformation(&template.points, &instance.points, opts)?;
    let mut map = correspond(template_id, &template.points, &instance.points, &fit.field)?;
    if instance.normals.len() == instance.points.len() {
        // normals pull back with the transposed Jacobian
        map.canonical_normals = map
            .canonical
            .iter()
            .zip(&instance.normals)
            .map(|(x, n)| (fit.field.jacobian(x).transpose() * n).try_normalize(1e-12).unwrap_or(*n))
            .collect();
    }
    Ok((fit, map))
}

/// Candidates examined when matching across instances with normals.
const NORMAL_CANDIDATES: usize = 8;

/// For every sample of `to`, the nearest sample of `from` in the template
/// frame, preferring samples whose normals face the same way so thin walls
/// do not swap sides.
fn canonical_matches(from: &CorrespondenceMap, to: &CorrespondenceMap) -> Vec<usize> {
    let tree = KdTree::new(&from.canonical);
    let with_normals = from.canonical_normals.len() == from.canonical.len() && to.canonical_normals.len() == to.canonical.len();
    to.canonical
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if !with_normals {
                return tree.nearest(p).0;
            }
            let near = tree.k_nearest(p, NORMAL_CANDIDATES);
            near.iter()
                .find(|(i, _)| from.canonical_normals[*i].dot(&to.canonical_normals[j]) > 0.0)
                .unwrap_or(&near[0])
                .0
        })
        .collect()
}

/// Carries a bundle defined on object A's samples to object B's samples.
/// Every B sample takes the values of the A sample nearest to it once both
/// are carried back into the template frame (among those with agreeing
/// normals when both maps have them); labels that would vanish are pushed
/// forward from A.
pub fn diffuse_contacts(
    bundle: &ContactBundle,
    map_a: &CorrespondenceMap,
    map_b: &CorrespondenceMap,
) -> Result<ContactBundle> {
    if map_a.template_id != map_b.template_id {
        return Err(Error::CategoryMismatch(
            map_a.template_id.clone(),
            map_b.template_id.clone(),
        ));
    }
    bundle.validate(map_a.matches.len())?;
    let nb = map_b.matches.len();
    let tree_b = KdTree::new(&map_b.canonical);
    let source = canonical_matches(map_a, map_b);

    // label per A sample: segment index, anchor index
    let na = map_a.matches.len();
    let mut seg_of = vec![None; na];
    for (s, seg) in bundle.segments.iter().enumerate() {
        for &i in &seg.region {
            seg_of[i] = Some(s);
        }
    }
    let mut anchor_of: Vec<Option<(usize, f64)>> = vec![None; na];
    for (k, a) in bundle.anchors.iter().enumerate() {
        for (&i, &d) in a.region.points.iter().zip(&a.region.delta) {
            anchor_of[i] = Some((k, d));
        }
    }
    let in_contact_a: Vec<bool> = {
        let mut v = vec![false; na];
        for &i in &bundle.object_contact {
            v[i] = true;
        }
        v
    };

    let object_omega: Vec<f64> = source.iter().map(|&i| bundle.object_omega[i]).collect();
    let mut seg_b: Vec<Option<usize>> = source.iter().map(|&i| seg_of[i]).collect();
    let mut anchor_b: Vec<Option<(usize, f64)>> = source.iter().map(|&i| anchor_of[i]).collect();
    let mut contact_b: Vec<bool> = source.iter().map(|&i| in_contact_a[i]).collect();

    // push forward labels that found no B sample
    let mut seg_count: HashMap<usize, usize> = HashMap::new();
    for s in seg_b.iter().flatten() {
        *seg_count.entry(*s).or_default() += 1;
    }
    for (s, seg) in bundle.segments.iter().enumerate() {
        if seg.region.is_empty() || seg_count.get(&s).copied().unwrap_or(0) > 0 {
            continue;
        }
        for &i in &seg.region {
            let j = tree_b.nearest(&map_a.canonical[i]).0;
            let prev = seg_b[j];
            if let Some(p) = prev {
                if seg_count[&p] <= 1 {
                    continue;
                }
                *seg_count.get_mut(&p).unwrap() -= 1;
            }
            seg_b[j] = Some(s);
            contact_b[j] = true;
            *seg_count.entry(s).or_default() += 1;
        }
    }
    let mut anchor_count = vec![0usize; bundle.anchors.len()];
    for (k, _) in anchor_b.iter().flatten() {
        anchor_count[*k] += 1;
    }
    for (k, a) in bundle.anchors.iter().enumerate() {
        if a.region.points.is_empty() || anchor_count[k] > 0 {
            continue;
        }
        for (&i, &d) in a.region.points.iter().zip(&a.region.delta) {
            let j = tree_b.nearest(&map_a.canonical[i]).0;
            if let Some((p, _)) = anchor_b[j] {
                if anchor_count[p] <= 1 {
                    continue;
                }
                anchor_count[p] -= 1;
            }
            anchor_b[j] = Some((k, d));
            anchor_count[k] += 1;
            contact_b[j] = true;
        }
    }

    // membership follows label presence
    for j in 0..nb {
        if seg_b[j].is_some() || anchor_b[j].is_some() {
            contact_b[j] = true;
        }
    }
    let object_contact: Vec<usize> = (0..nb).filter(|&j| contact_b[j]).collect();
    let segments = bundle
        .segments
        .iter()
        .enumerate()
        .map(|(s, seg)| SegmentContacts {
            name: seg.name.clone(),
            omega: seg.omega.clone(),
            hand_contact: seg.hand_contact.clone(),
            region: (0..nb).filter(|&j| seg_b[j] == Some(s)).collect(),
        })
        .collect();
    let anchors = bundle
        .anchors
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let mut region = AnchorRegion::default();
            for (j, lab) in anchor_b.iter().enumerate() {
                if let Some((kk, d)) = lab {
                    if *kk == k {
                        region.points.push(j);
                        region.delta.push(*d);
                    }
                }
            }
            AnchorContacts {
                name: a.name.clone(),
                region,
            }
        })
        .collect();
    Ok(ContactBundle {
        object_omega,
        object_contact,
        segments,
        anchors,
    })
}

/// Named points on a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub names: Vec<String>,
    pub points: Vec<Vec3>,
}

impl KeypointSet {
    pub fn get(&self, name: &str) -> Option<Vec3> {
        self.names.iter().position(|n| n == name).map(|i| self.points[i])
    }
}

/// Fraction of keypoints within `t * diagonal` of the truth, per threshold.
pub fn pck(predicted: &KeypointSet, truth: &KeypointSet, diagonal: f64, thresholds: &[f64]) -> Result<Vec<f64>> {
    if predicted.names.len() != truth.names.len() {
        return Err(Error::invalid("keypoint sets have different sizes"));
    }
    if truth.names.is_empty() {
        return Err(Error::invalid("keypoint set is empty"));
    }
    let mut dists = Vec::with_capacity(truth.names.len());
    for (name, t) in truth.names.iter().zip(&truth.points) {
        let p = predicted
            .get(name)
            .ok_or_else(|| Error::invalid(format!("keypoint `{name}` missing from prediction")))?;
        dists.push((p - t).norm());
    }
    Ok(thresholds
        .iter()
        .map(|th| {
            dists.iter().filter(|d| **d <= th * diagonal).count() as f64 / dists.len() as f64
        })
        .collect())
}

/// Template keypoints carried onto an instance by a fitted field.
pub fn transfer_keypoints(template_keypoints: &KeypointSet, field: &DeformationField) -> KeypointSet {
    KeypointSet {
        names: template_keypoints.names.clone(),
        points: field.warp_all(&template_keypoints.points),
    }
}
