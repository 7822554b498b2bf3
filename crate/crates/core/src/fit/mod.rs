//! Object state estimation from a partial point cloud: pick the category
//! template that explains the cloud best and recover its scale, rotation and
//! translation. Coarse alignment comes from scaled ICP; the refinement
//! minimizes a weighted sum of template SDF residual, normal disagreement and
//! chamfer distance.

use std::sync::Arc;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_surface, Aabb, KdTree, MeshSdf, SdfGrid, SignedDistance, SurfaceSamples, TriMesh, Vec3};
use crate::{Error, Result};

/// Template distance grids use this many cells along the unit diagonal.
pub const GRID_CELLS_PER_DIAGONAL: f64 = 96.0;
/// Minimum observed cloud size for ICP.
pub const MIN_OBSERVED: usize = 64;
/// Guard for normal-length denominators.
pub const NORMAL_EPS: f64 = 1e-8;
pub const NORMAL_NEIGHBORS: usize = 16;

/// Canonical category shape: unit bounding-box diagonal, centered at the origin.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    pub category: String,
    pub mesh: TriMesh,
    pub samples: SurfaceSamples,
    grid: Arc<SdfGrid>,
}

/// Similarity taking a raw mesh into its canonical frame: `c = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn of(mesh: &TriMesh) -> Result<Self> {
        let b = mesh.bbox();
        if b.is_empty() || b.diagonal() <= 0.0 {
            return Err(Error::invalid("cannot normalize an empty mesh"));
        }
        Ok(Normalization {
            center: b.center(),
            scale: 1.0 / b.diagonal(),
        })
    }

    pub fn apply(&self, mesh: &TriMesh) -> Result<TriMesh> {
        mesh.map_vertices(|p| (p - self.center) * self.scale)
    }
}

impl Template {
    /// Normalizes `mesh` and precomputes its distance grid and samples.
    pub fn new(id: &str, category: &str, mesh: &TriMesh, samples: usize, seed: u64) -> Result<Self> {
        if !mesh.is_watertight() {
            return Err(Error::NotWatertight(mesh.open_edge_count()));
        }
        let canon = Normalization::of(mesh)?.apply(mesh)?;
        let spacing = 1.0 / GRID_CELLS_PER_DIAGONAL;
        let bounds = canon.bbox().padded(0.15);
        let grid = SdfGrid::from_mesh(&MeshSdf::new(canon.clone()), &bounds, spacing);
        let samples = sample_surface(&canon, samples, seed)?;
        Ok(Template {
            id: id.to_string(),
            category: category.to_string(),
            mesh: canon,
            samples,
            grid: Arc::new(grid),
        })
    }

    /// Distance and gradient in the canonical frame.
    pub fn sdf(&self, c: &Vec3) -> (f64, Vec3) {
        self.grid.distance_and_gradient(c)
    }

    /// Surface normal direction at `c`: central differences of the grid
    /// over one cell, smoother than the per-cell interpolant gradient.
    pub fn normal(&self, c: &Vec3) -> Vec3 {
        let h = self.grid.spacing();
        Vec3::from_fn(|a, _| {
            let e = Vec3::ith(a, h);
            (self.grid.distance(&(c + e)) - self.grid.distance(&(c - e))) / (2.0 * h)
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateLibrary {
    pub templates: Vec<Template>,
}

impl TemplateLibrary {
    pub fn new(templates: Vec<Template>) -> Result<Self> {
        let mut ids: Vec<&str> = templates.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate template id in library".into()));
        }
        Ok(TemplateLibrary { templates })
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitLosses {
    pub sdf: f64,
    pub normal: f64,
    pub chamfer: f64,
    pub total: f64,
}

/// World point `p = scale * R * c + translation` for canonical point `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub template_id: String,
    pub losses: FitLosses,
}

impl ObjectState {
    pub fn identity(template_id: &str) -> Self {
        ObjectState {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            template_id: template_id.to_string(),
            losses: FitLosses::default(),
        }
    }

    pub fn to_world(&self, c: &Vec3) -> Vec3 {
        self.scale * (self.rotation * c) + self.translation
    }

    pub fn to_canonical(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.translation) / self.scale
    }

    /// Template mesh placed in the world.
    pub fn place(&self, template: &Template) -> Result<TriMesh> {
        template.mesh.map_vertices(|c| self.to_world(c))
    }
}

/// Unit normals by plane fit over the `k` nearest neighbors, oriented away
/// from the cloud centroid.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Result<Vec<Vec3>> {
    if points.len() < 3 {
        return Err(Error::invalid("normal estimation needs at least 3 points"));
    }
    let tree = KdTree::new(points);
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let k = k.min(points.len()).max(3);
    Ok(points
        .par_iter()
        .map(|p| {
            let nb = tree.k_nearest(p, k);
            let mean = nb.iter().map(|(i, _)| points[*i]).sum::<Vec3>() / nb.len() as f64;
            let mut cov = Matrix3::zeros();
            for (i, _) in &nb {
                let d = points[*i] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (mut idx, mut best) = (0, f64::INFINITY);
            for a in 0..3 {
                if eig.eigenvalues[a] < best {
                    best = eig.eigenvalues[a];
                    idx = a;
                }
            }
            let n: Vec3 = eig.eigenvectors.column(idx).into_owned();
            let n = if n.norm() > 0.0 { n.normalize() } else { Vec3::z() };
            if n.dot(&(p - centroid)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub state: ObjectState,
    /// RMS distance from observed points to their matches (cm).
    pub residual: f64,
    pub iterations: usize,
    pub diverged: bool,
}

pub const ICP_MAX_ITERATIONS: usize = 50;

/// Closed-form similarity minimizing sum |dst - (s R src + t)|^2.
fn umeyama(src: &[Vec3], dst: &[Vec3]) -> (f64, UnitQuaternion<f64>, Vec3) {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - ms, d - md);
        cov += b * a.transpose();
        var += a.norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sgn = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        sgn[(2, 2)] = -1.0;
    }
    let r = u * sgn * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * sgn[(i, i)]).sum();
    let s = if var > 0.0 { trace / var } else { 1.0 };
    let rot = UnitQuaternion::from_matrix(&r);
    let t = md - s * (rot * ms);
    (s, rot, t)
}

/// Point-to-point ICP with scale, from centroid and extent alignment.
pub fn icp_init(observed: &[Vec3], template: &Template) -> Result<IcpResult> {
    if observed.len() < MIN_OBSERVED {
        return Err(Error::invalid(format!(
            "observed cloud has {} points, at least {MIN_OBSERVED} are needed",
            observed.len()
        )));
    }
    if observed.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("observed cloud".into()));
    }
    let tpl = &template.samples.points;
    let tree = KdTree::new(tpl);
    let ob = Aabb::from_points(observed);
    let tb = Aabb::from_points(tpl);
    let mut state = ObjectState::identity(&template.id);
    state.scale = (ob.diagonal() / tb.diagonal()).max(1e-6);
    let oc = observed.iter().sum::<Vec3>() / observed.len() as f64;
    state.translation = oc - state.scale * tb.center();

    let mut best: Option<(f64, ObjectState)> = None;
    let mut last = f64::INFINITY;
    let mut growing = 0;
    let mut iterations = 0;
    let mut diverged = false;
    for _ in 0..ICP_MAX_ITERATIONS {
        iterations += 1;
        let mut src = Vec::with_capacity(observed.len());
        let mut sq = 0.0;
        for p in observed {
            let (j, d2) = tree.nearest(&state.to_canonical(p));
            src.push(tpl[j]);
            sq += d2 * state.scale * state.scale;
        }
        let residual = (sq / observed.len() as f64).sqrt();
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, state.clone()));
        }
        if residual > last {
            growing += 1;
            if growing >= 5 {
                warn!("ICP residual grew for 5 iterations; keeping the best state");
                diverged = true;
                break;
            }
        } else {
            growing = 0;
        }
        if (last - residual).abs() < 1e-10 * (1.0 + residual) {
            break;
        }
        last = residual;
        let (s, r, t) = umeyama(&src, observed);
        state.scale = s.max(1e-9);
        state.rotation = r;
        state.translation = t;
    }
    let (residual, state) = best.expect("at least one iteration");
    Ok(IcpResult {
        state,
        residual,
        iterations,
        diverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub iterations: usize,
    pub sdf_weight: f64,
    pub normal_weight: f64,
    pub chamfer_weight: f64,
    /// Best total loss above this means no template explains the cloud.
    pub ceiling: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 300,
            sdf_weight: 5.0,
            normal_weight: 1.0,
            chamfer_weight: 10.0,
            ceiling: 0.3,
        }
    }
}

/// Mean observed normal; long when the cloud is a one-sided view.
fn view_direction(normals: &[Vec3]) -> Option<Vec3> {
    let m = normals.iter().sum::<Vec3>() / normals.len().max(1) as f64;
    (m.norm() > 0.2).then(|| m.normalize())
}

struct FitProblem<'a> {
    observed: &'a [Vec3],
    normals: &'a [Vec3],
    template: &'a Template,
    view: Option<Vec3>,
    opts: FitOptions,
}

/// Parameters: log scale, rotation, translation.
#[derive(Clone, Copy)]
struct Params {
    log_s: f64,
    rot: UnitQuaternion<f64>,
    t: Vec3,
}

impl Params {
    fn canonical(&self, p: &Vec3) -> Vec3 {
        self.rot.inverse() * (p - self.t) / self.log_s.exp()
    }

    /// Step: scale multiplies, rotation composes on the left.
    fn stepped(&self, d: &[f64; 7]) -> Params {
        Params {
            log_s: self.log_s + d[0],
            rot: UnitQuaternion::from_scaled_axis(Vec3::new(d[1], d[2], d[3])) * self.rot,
            t: self.t + Vec3::new(d[4], d[5], d[6]),
        }
    }
}

impl FitProblem<'_> {
    fn normal_term(&self, p: &Params) -> f64 {
        let inv = p.rot.inverse();
        let mut total = 0.0;
        for (x, n) in self.observed.iter().zip(self.normals) {
            let g = self.template.normal(&p.canonical(x));
            let nc = inv * n;
            total += 1.0 - nc.dot(&g) / (nc.norm() * g.norm()).max(NORMAL_EPS);
        }
        total / self.observed.len() as f64
    }

    /// Losses, and when asked the gradient in (log s, rotation, translation).
    fn evaluate(&self, p: &Params, with_grad: bool) -> (FitLosses, [f64; 7]) {
        let s = p.log_s.exp();
        let cs: Vec<Vec3> = self.observed.iter().map(|x| p.canonical(x)).collect();
        let no = cs.len() as f64;
        // gradient with respect to each canonical observed point
        let mut gc = vec![Vec3::zeros(); cs.len()];

        let mut l_sdf = 0.0;
        for (c, g) in cs.iter().zip(gc.iter_mut()) {
            let (d, grad) = self.template.sdf(c);
            l_sdf += d.abs();
            if d != 0.0 {
                *g += self.opts.sdf_weight * d.signum() * grad / no;
            }
        }
        l_sdf /= no;

        let l_normal = self.normal_term(p);

        let visible: Vec<Vec3> = match self.view {
            Some(v) => {
                let vc = p.rot.inverse() * v;
                let pts: Vec<Vec3> = self
                    .template
                    .samples
                    .points
                    .iter()
                    .zip(&self.template.samples.normals)
                    .filter(|(_, n)| n.dot(&vc) > 0.0)
                    .map(|(c, _)| *c)
                    .collect();
                if pts.is_empty() {
                    self.template.samples.points.clone()
                } else {
                    pts
                }
            }
            None => self.template.samples.points.clone(),
        };
        let nt = visible.len() as f64;
        let tt = KdTree::new(&visible);
        let ot = KdTree::new(&cs);
        let mut l_pc = 0.0;
        for (c, g) in cs.iter().zip(gc.iter_mut()) {
            let (j, d2) = tt.nearest(c);
            l_pc += d2 / no;
            *g += self.opts.chamfer_weight * 2.0 * (c - visible[j]) / no;
        }
        for v in &visible {
            let (i, d2) = ot.nearest(v);
            l_pc += d2 / nt;
            gc[i] += self.opts.chamfer_weight * 2.0 * (cs[i] - v) / nt;
        }

        let losses = FitLosses {
            sdf: l_sdf,
            normal: l_normal,
            chamfer: l_pc,
            total: self.opts.sdf_weight * l_sdf + self.opts.normal_weight * l_normal + self.opts.chamfer_weight * l_pc,
        };
        let mut grad = [0.0; 7];
        if with_grad {
            // c = R^T (x - t) / s: dc/dlog s = -c, dc/dt = -R^T/s, and a left
            // rotation increment w gives dc = R^T ((x - t) x w) / s.
            for ((c, g), x) in cs.iter().zip(&gc).zip(self.observed) {
                grad[0] -= g.dot(c);
                let a = (p.rot * g) / s;
                let r = a.cross(&(x - p.t));
                grad[1] += r.x;
                grad[2] += r.y;
                grad[3] += r.z;
                grad[4] -= a.x;
                grad[5] -= a.y;
                grad[6] -= a.z;
            }
            // normal term through central differences
            let h = 1e-6;
            for k in 0..7 {
                let mut d = [0.0; 7];
                d[k] = h;
                let up = self.normal_term(&p.stepped(&d));
                d[k] = -h;
                let dn = self.normal_term(&p.stepped(&d));
                grad[k] += self.opts.normal_weight * (up - dn) / (2.0 * h);
            }
        }
        (losses, grad)
    }
}

/// Refines `init` against one template by backtracking gradient descent.
/// Returns the final state and the loss after every accepted step.
pub fn fit_state_traced(
    observed: &[Vec3],
    normals: &[Vec3],
    template: &Template,
    init: &ObjectState,
    opts: &FitOptions,
) -> Result<(ObjectState, Vec<f64>)> {
    if observed.len() != normals.len() {
        return Err(Error::invalid("observed points and normals differ in length"));
    }
    if observed.is_empty() {
        return Err(Error::invalid("observed cloud is empty"));
    }
    if !(init.scale > 0.0) || !init.translation.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial object state is not valid"));
    }
    let prob = FitProblem {
        observed,
        normals,
        template,
        view: view_direction(normals),
        opts: *opts,
    };
    let mut p = Params {
        log_s: init.scale.ln(),
        rot: init.rotation,
        t: init.translation,
    };
    let (mut losses, mut grad) = prob.evaluate(&p, true);
    let mut trace = vec![losses.total];
    let mut step = 1e-3;
    for _ in 0..opts.iterations {
        // rotation and scale steps are in units of the object's half size
        let size = 0.5 * p.log_s.exp();
        let metric = [1.0 / (size * size), 1.0 / (size * size), 1.0 / (size * size), 1.0 / (size * size), 1.0, 1.0, 1.0];
        let dir: [f64; 7] = std::array::from_fn(|k| -grad[k] * metric[k] * size * size);
        let slope: f64 = (0..7).map(|k| grad[k] * dir[k]).sum();
        if slope >= 0.0 || slope.abs() < 1e-18 {
            break;
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..40 {
            let d: [f64; 7] = std::array::from_fn(|k| s * dir[k]);
            let cand = p.stepped(&d);
            let (l, _) = prob.evaluate(&cand, false);
            if l.total.is_finite() && l.total <= losses.total + 1e-4 * s * slope {
                accepted = Some(cand);
                break;
            }
            s *= 0.5;
        }
        let Some(cand) = accepted else { break };
        p = cand;
        p.rot.renormalize();
        (losses, grad) = prob.evaluate(&p, true);
        trace.push(losses.total);
        step = s * 2.0;
    }
    Ok((
        ObjectState {
            scale: p.log_s.exp(),
            rotation: p.rot,
            translation: p.t,
            template_id: template.id.clone(),
            losses,
        },
        trace,
    ))
}

pub fn fit_state(
    observed: &[Vec3],
    normals: &[Vec3],
    template: &Template,
    init: &ObjectState,
    opts: &FitOptions,
) -> Result<ObjectState> {
    Ok(fit_state_traced(observed, normals, template, init, opts)?.0)
}

/// Candidate outcome for one template.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub template_id: String,
    pub state: ObjectState,
}

/// ICP and refinement against every template; the lowest final loss wins.
/// `normals` are estimated when absent.
pub fn recognize(
    observed: &[Vec3],
    normals: Option<&[Vec3]>,
    library: &TemplateLibrary,
    opts: &FitOptions,
) -> Result<(ObjectState, Vec<Candidate>)> {
    if library.templates.is_empty() {
        return Err(Error::Config("template library is empty".into()));
    }
    let owned;
    let normals = match normals {
        Some(n) => n,
        None => {
            owned = estimate_normals(observed, NORMAL_NEIGHBORS)?;
            &owned
        }
    };
    let candidates: Vec<Result<Candidate>> = library
        .templates
        .par_iter()
        .map(|t| {
            let init = icp_init(observed, t)?.state;
            let state = fit_state(observed, normals, t, &init, opts)?;
            Ok(Candidate {
                template_id: t.id.clone(),
                state,
            })
        })
        .collect();
    let candidates = candidates.into_iter().collect::<Result<Vec<_>>>()?;
    let best = candidates
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.state.losses.total < candidates[b].state.losses.total { i } else { b });
    let loss = candidates[best].state.losses.total;
    if !(loss <= opts.ceiling) {
        return Err(Error::Unrecognized {
            best: loss,
            ceiling: opts.ceiling,
        });
    }
    Ok((candidates[best].state.clone(), candidates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn blob() -> TriMesh {
        // asymmetric so that rotations are identifiable
        shapes::icosphere(1.0, 5)
            .map_vertices(|p| Vec3::new(2.0 * p.x, 1.2 * p.y + 0.3 * p.x * p.x, 0.8 * p.z + 0.2 * p.x))
            .unwrap()
    }

    #[test]
    fn template_is_normalized() {
        let t = Template::new("b", "blob", &blob(), 1024, 1).unwrap();
        let b = t.mesh.bbox();
        assert!((b.diagonal() - 1.0).abs() < 1e-12);
        assert!(b.center().norm() < 1e-12);
    }

    #[test]
    fn umeyama_recovers_similarity() {
        let src: Vec<Vec3> = (0..20).map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1)).collect();
        let r = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0);
        let t = Vec3::new(1.0, -2.0, 0.5);
        let dst: Vec<Vec3> = src.iter().map(|p| 1.7 * (r * p) + t).collect();
        let (s, rr, tt) = umeyama(&src, &dst);
        assert!((s - 1.7).abs() < 1e-9);
        assert!(rr.angle_to(&r) < 1e-9);
        assert!((tt - t).norm() < 1e-9);
    }

    #[test]
    fn sphere_normals_point_outward() {
        let pts = sample_surface(&shapes::icosphere(2.0, 3), 800, 3).unwrap().points;
        let n = estimate_normals(&pts, 16).unwrap();
        for (p, n) in pts.iter().zip(&n) {
            assert!(n.dot(&p.normalize()) > 0.98);
        }
    }

    #[test]
    fn exact_template_has_tiny_losses() {
        let t = Template::new("b", "blob", &blob(), 1024, 1).unwrap();
        let init = ObjectState::identity("b");
        let s = fit_state(&t.samples.points, &t.samples.normals, &t, &init, &FitOptions::default()).unwrap();
        assert!(s.losses.sdf < 1e-4, "{:?}", s.losses);
        assert!(s.losses.normal < 1e-4, "{:?}", s.losses);
        assert!(s.losses.chamfer < 1e-4, "{:?}", s.losses);
    }

    #[test]
    fn degenerate_normals_stay_finite() {
        let t = Template::new("b", "blob", &blob(), 256, 1).unwrap();
        let zeros = vec![Vec3::zeros(); t.samples.len()];
        let s = fit_state(&t.samples.points, &zeros, &t, &ObjectState::identity("b"), &FitOptions { iterations: 5, ..Default::default() }).unwrap();
        assert!(s.losses.total.is_finite());
    }

    #[test]
    fn too_few_points_rejected() {
        let t = Template::new("b", "blob", &blob(), 256, 1).unwrap();
        assert!(icp_init(&t.samples.points[..10], &t).is_err());
    }
}
