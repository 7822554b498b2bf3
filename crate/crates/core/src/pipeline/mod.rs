//! Batch driver: demonstration contacts, per-instance synthesis over a
//! category, evaluation, object fitting, scene export and fixture generation.
//!
//! Every entry point is deterministic for a fixed configuration. Instances are
//! processed in parallel but seeded by their id, and all listings are sorted,
//! so scheduling never shows up in the outputs.

use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::UnitQuaternion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{extract_contacts, object_contact_map, ContactBundle, Demonstration};
use crate::correspondence::{diffuse_contacts, register, CorrespondenceMap, DeformationOptions, KeypointSet};
use crate::fit::{recognize, FitOptions, Template, TemplateLibrary};
use crate::geometry::meshio::{format_ply, write_mesh, write_ply_points};
use crate::geometry::{sample_surface, MeshSdf, SurfaceSamples, TriMesh};
use crate::hand::{builtin, forward_kinematics, Grasp, HandSpec};
use crate::io::*;
use crate::metrics::{
    closure_success, epsilon_quality, functionality_pr, grasp_contacts, hrd_between, penetration, self_penetration,
    to_csv, torque_scale, MetricsReport, METRICS_SCHEMA,
};
use crate::optimize::{
    optimize, refine_physical, LossWeights, ObjectModel, OptimizeOptions, DEFAULT_SDF_SPACING,
};
use crate::retarget::{retarget, RetargetOptions, RetargetProblem, RetargetWeights};
use crate::synth::{closing_demonstration, make_category, partial_view, CategoryKind};
use crate::{Error, Result};

/// Everything a run can be configured with. Read from TOML; unknown keys are
/// rejected and missing ones take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Surface samples per object.
    pub object_samples: usize,
    /// Surface samples on the category template.
    pub template_samples: usize,
    pub weights: LossWeights,
    /// `optimize.seed` is ignored; each instance derives its own from `seed`.
    pub optimize: OptimizeOptions,
    pub deformation: DeformationOptions,
    pub retarget: RetargetWeights,
    pub retarget_options: RetargetOptions,
    pub fit: FitOptions,
    /// Samples per fitting template.
    pub fit_template_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            object_samples: 1024,
            template_samples: 2000,
            weights: LossWeights::default(),
            optimize: OptimizeOptions::default(),
            deformation: DeformationOptions::default(),
            retarget: RetargetWeights::default(),
            retarget_options: RetargetOptions::default(),
            fit: FitOptions::default(),
            fit_template_samples: 2048,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.object_samples < crate::correspondence::MIN_INSTANCE_SAMPLES {
            return bad("object_samples is too small");
        }
        if self.template_samples == 0 || self.fit_template_samples == 0 {
            return bad("template sample counts must be positive");
        }
        if self.optimize.restarts == 0 {
            return bad("optimize.restarts must be at least 1");
        }
        if self.deformation.lattice < 2 {
            return bad("deformation.lattice must be at least 2");
        }
        if self.retarget.task < 0.0 || self.retarget.joint < 0.0 {
            return bad("retarget weights must be non-negative");
        }
        Ok(())
    }
}

/// Seed for one named unit of work, independent of processing order.
pub fn derived_seed(seed: u64, name: &str) -> u64 {
    let h = sha256_hex(name.as_bytes());
    let bits = u64::from_str_radix(&h[..16], 16).expect("hex digest");
    seed ^ bits
}

pub struct Category {
    pub name: String,
    pub template: TriMesh,
    pub keypoints: Option<KeypointSet>,
    /// Instance id and mesh path; meshes load lazily so one bad file only
    /// costs its own instance.
    pub instances: Vec<(String, PathBuf)>,
}

pub const CATEGORY_FILE: &str = "category.json";

pub fn load_category(dir: &Path) -> Result<Category> {
    let index = dir.join(CATEGORY_FILE);
    let rec: CategoryRecord = read_record(&index, CATEGORY_SCHEMA)?;
    let template = read_mesh_checked(&resolve(&index, &rec.template))?;
    let keypoints = match &rec.keypoints {
        Some(k) => Some(read_record(&resolve(&index, k), KEYPOINTS_SCHEMA)?),
        None => None,
    };
    let mut ids: Vec<&str> = rec.instances.iter().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("{}: duplicate instance id", index.display())));
    }
    Ok(Category {
        name: rec.name,
        template,
        keypoints,
        instances: rec.instances.iter().map(|i| (i.id.clone(), resolve(&index, &i.mesh))).collect(),
    })
}

/// Mesh that must be closed, since distances to it need a sign.
pub fn read_mesh_checked(path: &Path) -> Result<TriMesh> {
    let mesh = crate::geometry::meshio::read_mesh(path)?;
    if mesh.is_empty() {
        return Err(Error::invalid(format!("{}: mesh has no faces", path.display())));
    }
    if !mesh.is_watertight() {
        return Err(Error::NotWatertight(mesh.open_edge_count()));
    }
    Ok(mesh)
}

pub struct LoadedDemo {
    pub demo: Demonstration,
    pub skeleton: HandSpec,
    pub object_name: String,
}

pub fn load_demo(path: &Path) -> Result<LoadedDemo> {
    let rec: DemoRecord = read_record(path, DEMO_SCHEMA)?;
    let skeleton = match builtin::by_name(&rec.skeleton) {
        Some(h) => h,
        None => HandSpec::load(&resolve(path, &rec.skeleton))?,
    };
    let object_path = resolve(path, &rec.object);
    let object = read_mesh_checked(&object_path)?;
    if rec.q.len() != skeleton.dof() {
        return Err(Error::invalid(format!(
            "demo has {} joint angles, skeleton `{}` has {}",
            rec.q.len(),
            skeleton.name,
            skeleton.dof()
        )));
    }
    let grasp = Grasp::new(rec.q.clone(), rec.wrist.to_isometry()?);
    let demo = Demonstration::from_skeleton(&skeleton, &grasp, object)?;
    let object_name = object_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into());
    Ok(LoadedDemo {
        demo,
        skeleton,
        object_name,
    })
}

/// Contact targets of a demonstration on its own object.
pub fn demo_contacts(d: &LoadedDemo, cfg: &RunConfig) -> Result<ContactsRecord> {
    let samples = sample_surface(&d.demo.object, cfg.object_samples, derived_seed(cfg.seed, "demo-samples"))?;
    let bundle = extract_contacts(&d.demo, &d.skeleton, &samples, derived_seed(cfg.seed, "demo-segments"))?;
    Ok(ContactsRecord {
        object: d.object_name.clone(),
        samples,
        bundle,
    })
}

/// Full metric row for a grasp. `truth_omega`, when given, must be a contact
/// map over `samples`; `reference` is the rotation HRD is measured against.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_grasp(
    object_name: &str,
    grasp_name: &str,
    spec: &HandSpec,
    g: &Grasp,
    mesh: &TriMesh,
    samples: &SurfaceSamples,
    truth_omega: Option<&[f64]>,
    reference: Option<&UnitQuaternion<f64>>,
) -> Result<MetricsReport> {
    let posed = forward_kinematics(spec, g)?;
    let sdf = MeshSdf::new(mesh.clone());
    let contacts = grasp_contacts(&posed, &sdf)?;
    let epsilon = if contacts.points.is_empty() {
        0.0
    } else {
        epsilon_quality(&contacts, torque_scale(mesh))?
    };
    let pen = penetration(&posed, &sdf)?;
    let selfp = self_penetration(&posed)?;
    let func = match truth_omega {
        Some(t) => Some(functionality_pr(&object_contact_map(samples, &posed).omega, t)?),
        None => None,
    };
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        object: object_name.into(),
        grasp: grasp_name.into(),
        epsilon,
        penetration_depth: pen.depth,
        penetration_volume: pen.volume,
        self_penetration_depth: selfp.depth,
        self_penetration_volume: selfp.volume,
        functionality_precision: func.map(|f| f.precision),
        functionality_recall: func.map(|f| f.recall),
        hrd: reference.map(|r| hrd_between(r, &g.wrist.rotation)),
        iou: None,
        ncd: None,
        closure_success: closure_success(spec, g, &sdf)?.success,
    })
}

/// Inputs shared by every instance of one synthesis run.
struct Shared<'a> {
    category: &'a Category,
    hand: &'a HandSpec,
    hand_label: &'a str,
    cfg: &'a RunConfig,
    template_samples: SurfaceSamples,
    demo_bundle: ContactBundle,
    demo_map: CorrespondenceMap,
    init: Grasp,
    demo_rotation: UnitQuaternion<f64>,
}

struct InstanceOutput {
    files: Vec<(String, String)>,
    metrics: MetricsReport,
}

pub const GRASP_FILE: &str = "grasp.json";
pub const OPTREPORT_FILE: &str = "optreport.json";
pub const CONTACTS_FILE: &str = "contacts.json";
pub const DSC_FILE: &str = "dsc.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";

fn run_instance(s: &Shared, id: &str, mesh_path: &Path) -> Result<InstanceOutput> {
    let cfg = s.cfg;
    let seed = derived_seed(cfg.seed, id);
    let mesh = read_mesh_checked(mesh_path)?;
    let samples = sample_surface(&mesh, cfg.object_samples, seed)?;
    let (_, map) = register(&s.category.name, &s.template_samples, &samples, &cfg.deformation)?;
    let bundle = diffuse_contacts(&s.demo_bundle, &s.demo_map, &map)?;
    let object = ObjectModel::new(&mesh, samples.clone(), DEFAULT_SDF_SPACING)?;
    let opts = OptimizeOptions { seed, ..cfg.optimize };
    let report = optimize(s.hand, &s.init, &bundle, &object, &cfg.weights, &opts)?;
    let refined = refine_physical(s.hand, &report.grasp, &bundle, &object, &cfg.weights)?;
    info!(
        "{id}: loss {:.4} -> {:.4}, depth {:.3} cm{} in {:.1} s",
        report.best().initial.total,
        report.best().final_loss.total,
        refined.final_depth,
        if refined.feasible { "" } else { " (infeasible)" },
        report.wall_clock_s
    );
    let metrics = evaluate_grasp(
        id,
        &format!("{id}/{GRASP_FILE}"),
        s.hand,
        &refined.grasp,
        &mesh,
        &samples,
        Some(&bundle.object_omega),
        Some(&s.demo_rotation),
    )?;
    let grasp = GraspRecord {
        hand: s.hand_label.into(),
        object: id.into(),
        q: refined.grasp.q.clone(),
        actuated: s.hand.actuated_from_q(&refined.grasp.q),
        wrist: PoseRecord::from(&refined.grasp.wrist),
        feasible: refined.feasible,
        penetration_depth: refined.final_depth,
    };
    let optreport = OptReportRecord {
        chosen: report.chosen,
        restarts: report.restarts.clone(),
        refine: (&refined).into(),
    };
    let contacts = ContactsRecord {
        object: id.into(),
        samples,
        bundle,
    };
    let files = vec![
        (format!("{id}/{GRASP_FILE}"), to_json(GRASP_SCHEMA, &grasp)?),
        (format!("{id}/{OPTREPORT_FILE}"), to_json(OPTREPORT_SCHEMA, &optreport)?),
        (format!("{id}/{CONTACTS_FILE}"), to_json(CONTACTS_SCHEMA, &contacts)?),
        (format!("{id}/{DSC_FILE}"), to_json(DSC_SCHEMA, &map)?),
        (format!("{id}/{METRICS_FILE}"), to_json(METRICS_SCHEMA, &metrics)?),
    ];
    Ok(InstanceOutput { files, metrics })
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub manifest: ManifestRecord,
    pub reports: Vec<MetricsReport>,
    /// Failures caused by bad input only, as opposed to internal errors.
    pub input_failures: usize,
}

impl SynthesisOutcome {
    pub fn succeeded(&self) -> usize {
        self.reports.len()
    }
}

/// Transfers one demonstration to every instance of a category and writes
/// grasps, reports and a manifest under `out`. An instance that fails is
/// logged and listed in the manifest; the others are unaffected. Errors out
/// only when the shared inputs are unusable.
pub fn synthesize(
    category_dir: &Path,
    demo_path: &Path,
    hand: &HandSpec,
    hand_label: &str,
    cfg: &RunConfig,
    out: &Path,
    jobs: usize,
) -> Result<SynthesisOutcome> {
    cfg.validate()?;
    let category = load_category(category_dir)?;
    let demo = load_demo(demo_path)?;
    let template_samples =
        sample_surface(&category.template, cfg.template_samples, derived_seed(cfg.seed, "template"))?;
    let contacts = demo_contacts(&demo, cfg)?;
    if contacts.bundle.object_contact.is_empty() {
        warn!("demonstration hand does not touch its object; contact targets are empty");
    }
    let (_, demo_map) = register(&category.name, &template_samples, &contacts.samples, &cfg.deformation)?;
    let problem = RetargetProblem::new(&demo.skeleton, &demo.demo.q, hand, cfg.retarget)?;
    let init = retarget(&problem, demo.demo.wrist, &cfg.retarget_options)?.grasp;
    let shared = Shared {
        category: &category,
        hand,
        hand_label,
        cfg,
        template_samples,
        demo_bundle: contacts.bundle,
        demo_map,
        init,
        demo_rotation: demo.demo.wrist.rotation,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(String, Result<InstanceOutput>)> = pool.install(|| {
        category
            .instances
            .par_iter()
            .map(|(id, path)| (id.clone(), run_instance(&shared, id, path)))
            .collect()
    });

    let mut written = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut input_failures = 0;
    for (id, r) in results {
        match r {
            Ok(o) => {
                for (rel, text) in &o.files {
                    write_text(&out.join(rel), text)?;
                    written.push(ManifestEntry {
                        path: rel.clone(),
                        sha256: sha256_hex(text.as_bytes()),
                    });
                }
                reports.push(o.metrics);
            }
            Err(e) => {
                warn!("instance {id} failed: {e}");
                input_failures += usize::from(e.is_input_error());
                failures.push(FailureEntry {
                    instance: id,
                    error: e.to_string(),
                });
            }
        }
    }
    reports.sort_by(|a, b| a.object.cmp(&b.object));
    let csv = to_csv(&reports);
    write_text(&out.join(METRICS_CSV), &csv)?;
    written.push(ManifestEntry {
        path: METRICS_CSV.into(),
        sha256: sha256_hex(csv.as_bytes()),
    });
    written.sort();
    failures.sort();
    let manifest = ManifestRecord {
        seed: cfg.seed,
        outputs: written,
        failures,
    };
    write_record(&out.join(MANIFEST_FILE), MANIFEST_SCHEMA, &manifest)?;
    Ok(SynthesisOutcome {
        manifest,
        reports,
        input_failures,
    })
}

/// A template for fitting, from a category directory or a mesh file.
pub fn load_template(path: &Path, cfg: &RunConfig) -> Result<Template> {
    let (id, category, mesh) = if path.is_dir() {
        let cat = load_category(path)?;
        (cat.name.clone(), cat.name, cat.template)
    } else {
        let (name, mesh) = load_named_mesh(path)?;
        (name.clone(), name, mesh)
    };
    Template::new(&id, &category, &mesh, cfg.fit_template_samples, derived_seed(cfg.seed, &id))
}

/// Pose, scale and template for an observed cloud. The state maps the
/// chosen template's canonical frame (centered, unit diagonal) to the world.
pub fn fit_cloud(cloud: &Path, library: &[PathBuf], cfg: &RunConfig) -> Result<ObjStateRecord> {
    let (points, normals) = read_cloud(cloud)?;
    if points.len() < crate::fit::MIN_OBSERVED {
        return Err(Error::invalid(format!(
            "{}: {} points, need at least {}",
            cloud.display(),
            points.len(),
            crate::fit::MIN_OBSERVED
        )));
    }
    if library.is_empty() {
        return Err(Error::Config("template library is empty".into()));
    }
    let templates = library.iter().map(|p| load_template(p, cfg)).collect::<Result<Vec<_>>>()?;
    let lib = TemplateLibrary::new(templates)?;
    let (state, candidates) = recognize(&points, normals.as_deref(), &lib, &cfg.fit)?;
    for c in &candidates {
        info!("template {}: loss {:.5}", c.template_id, c.state.losses.total);
    }
    Ok(ObjStateRecord::from(&state))
}

/// Label of the object in exported scenes; hand link `i` gets `i + 1`.
pub const OBJECT_LABEL: u32 = 0;

/// Posed hand primitives plus the object as one labeled PLY.
pub fn export_scene(spec: &HandSpec, g: &Grasp, object: &TriMesh, feasible: bool) -> Result<String> {
    let posed = forward_kinematics(spec, g)?;
    let mut parts = vec![object.clone()];
    let mut labels = vec![OBJECT_LABEL; object.faces().len()];
    let mut comments = vec![
        format!("hand {}", spec.name),
        format!("feasible {feasible}"),
        format!("label {OBJECT_LABEL} object"),
    ];
    if !feasible {
        comments.push("INFEASIBLE: penetration above tolerance after refinement".into());
    }
    for (l, link) in spec.links.iter().enumerate() {
        if !link.has_geometry() {
            continue;
        }
        let label = l as u32 + 1;
        comments.push(format!("label {label} {}", link.name));
        for p in &link.primitives {
            let m = p.tessellate().transformed(&posed.link_poses[l], 1.0);
            labels.extend(std::iter::repeat_n(label, m.faces().len()));
            parts.push(m);
        }
    }
    let merged = TriMesh::merge(&parts);
    Ok(format_ply(merged.vertices(), None, merged.faces(), Some(&labels), &comments))
}

/// Instances generated per synthetic category.
pub const FIXTURE_INSTANCES: usize = 4;
/// Points in each fixture's partial view.
pub const FIXTURE_VIEW_POINTS: usize = 1500;

/// Synthetic categories, demonstrations and partial views under `dir`:
/// `<kind>/category.json` with template, instances, keypoints, `demo.json`
/// on the first instance and one `*_view.ply` per instance.
pub fn make_fixtures(dir: &Path, kinds: &[CategoryKind], instances: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let human = builtin::human();
    let mut made = Vec::new();
    for &kind in kinds {
        let cat = make_category(kind, instances, derived_seed(seed, kind.name()))?;
        let root = dir.join(kind.name());
        std::fs::create_dir_all(&root).map_err(|source| Error::Write {
            path: root.clone(),
            source,
        })?;
        write_mesh(&root.join("template.obj"), &cat.template)?;
        write_record(&root.join("keypoints.json"), KEYPOINTS_SCHEMA, &cat.keypoints)?;
        let mut records = Vec::new();
        for (i, inst) in cat.instances.iter().enumerate() {
            let mesh_name = format!("{}.obj", inst.id);
            write_mesh(&root.join(&mesh_name), &inst.mesh)?;
            write_record(
                &root.join(format!("{}.keypoints.json", inst.id)),
                KEYPOINTS_SCHEMA,
                &cat.instance_keypoints(i),
            )?;
            let view = crate::geometry::Vec3::new(1.0, 0.3, 0.2).normalize();
            let cloud = partial_view(&inst.mesh, FIXTURE_VIEW_POINTS, &view, derived_seed(seed, &inst.id))?;
            write_ply_points(&root.join(format!("{}_view.ply", inst.id)), &cloud.points, Some(&cloud.normals))?;
            records.push(InstanceRecord {
                id: inst.id.clone(),
                mesh: mesh_name,
            });
        }
        let first = &cat.instances[0];
        let demo = closing_demonstration(&human, &first.mesh, kind.grasp_height())?;
        write_record(
            &root.join("demo.json"),
            DEMO_SCHEMA,
            &DemoRecord {
                skeleton: human.name.clone(),
                object: format!("{}.obj", first.id),
                q: demo.q.clone(),
                wrist: PoseRecord::from(&demo.wrist),
            },
        )?;
        write_record(
            &root.join(CATEGORY_FILE),
            CATEGORY_SCHEMA,
            &CategoryRecord {
                name: kind.name().into(),
                template: "template.obj".into(),
                keypoints: Some("keypoints.json".into()),
                instances: records,
            },
        )?;
        made.push(root);
    }
    Ok(made)
}
