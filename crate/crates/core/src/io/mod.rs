//! Versioned JSON records for everything the command line reads or writes.
//!
//! Every file is a JSON object with a `schema` key naming its format and
//! version. Relative paths inside a record resolve against the directory of
//! the file that holds them.

use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contact::ContactBundle;
use crate::fit::{FitLosses, ObjectState};
use crate::geometry::meshio::{read_mesh, read_ply};
use crate::geometry::{SurfaceSamples, TriMesh, Vec3};
use crate::hand::{builtin, Grasp, HandSpec};
use crate::metrics::{MetricsReport, METRICS_SCHEMA};
use crate::optimize::{RefineOutcome, RestartSummary};
use crate::{Error, Result};

pub const CATEGORY_SCHEMA: &str = "category/1";
pub const DEMO_SCHEMA: &str = "demo/1";
pub const CONTACTS_SCHEMA: &str = "contacts/1";
pub const GRASP_SCHEMA: &str = "grasp/1";
pub const OPTREPORT_SCHEMA: &str = "optreport/1";
pub const DSC_SCHEMA: &str = "dsc/1";
pub const KEYPOINTS_SCHEMA: &str = "keypoints/1";
pub const OBJSTATE_SCHEMA: &str = "objstate/1";
pub const MANIFEST_SCHEMA: &str = "manifest/1";

fn parse_err(path: &Path, msg: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Pretty JSON text of `value` tagged with `schema`. Keys come out sorted,
/// so equal values always give equal bytes.
pub fn to_json<T: Serialize>(schema: &str, value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::invalid(format!("serialize: {e}")))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::invalid("only objects can carry a schema"))?;
    obj.insert("schema".into(), serde_json::Value::String(schema.into()));
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| Error::invalid(format!("serialize: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Parses `text` as a record of `schema`; the schema key is checked and
/// stripped before the body is decoded.
pub fn from_json<T: DeserializeOwned>(schema: &str, text: &str, path: &Path) -> Result<T> {
    let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
    let obj = v.as_object_mut().ok_or_else(|| parse_err(path, "expected a JSON object"))?;
    let found = match obj.remove("schema") {
        Some(serde_json::Value::String(s)) => s,
        Some(_) => return Err(parse_err(path, "`schema` must be a string")),
        None => String::new(),
    };
    if found != schema {
        return Err(Error::Schema {
            expected: schema.into(),
            found,
        });
    }
    serde_json::from_value(v).map_err(|e| parse_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_record<T: Serialize>(path: &Path, schema: &str, value: &T) -> Result<()> {
    write_text(path, &to_json(schema, value)?)
}

pub fn read_record<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    from_json(schema, &read_text(path)?, path)
}

/// `rel` resolved against the directory holding `file`.
pub fn resolve(file: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    file.parent().unwrap_or(Path::new("")).join(p)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// A shipped hand by name (`human22`, `five_finger_coupled`, `four_finger`,
/// `two_finger_gripper`) or a handspec/1 file.
pub fn load_hand(name_or_path: &str) -> Result<HandSpec> {
    match builtin::by_name(name_or_path) {
        Some(h) => Ok(h),
        None => HandSpec::load(Path::new(name_or_path)),
    }
}

/// Wrist pose: translation in cm, rotation as a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl From<&Isometry3<f64>> for PoseRecord {
    fn from(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        PoseRecord {
            translation: [t.x, t.y, t.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl PoseRecord {
    pub fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !(self.translation.iter().chain(&self.rotation).all(|v| v.is_finite()) && q.norm() > 1e-9) {
            return Err(Error::invalid("pose must be finite with a nonzero quaternion"));
        }
        let [tx, ty, tz] = self.translation;
        Ok(Isometry3::from_parts(Translation3::new(tx, ty, tz), UnitQuaternion::from_quaternion(q)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub hand: String,
    pub object: String,
    /// Full joint vector (rad).
    pub q: Vec<f64>,
    /// Actuator values the joint vector was coupled from.
    pub actuated: Vec<f64>,
    pub wrist: PoseRecord,
    /// False when physical refinement could not push penetration below tolerance.
    pub feasible: bool,
    pub penetration_depth: f64,
}

impl GraspRecord {
    pub fn grasp(&self) -> Result<Grasp> {
        if !self.q.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grasp joints must be finite"));
        }
        Ok(Grasp::new(self.q.clone(), self.wrist.to_isometry()?))
    }
}

/// A contact bundle together with the object samples it indexes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactsRecord {
    pub object: String,
    pub samples: SurfaceSamples,
    pub bundle: ContactBundle,
}

impl ContactsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.samples.normals.len() != self.samples.points.len() {
            return Err(Error::invalid("contacts: sample normals and points differ in count"));
        }
        self.bundle.validate(self.samples.points.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRecord {
    pub initial_depth: f64,
    pub final_depth: f64,
    pub steps: usize,
    pub feasible: bool,
}

impl From<&RefineOutcome> for RefineRecord {
    fn from(r: &RefineOutcome) -> Self {
        RefineRecord {
            initial_depth: r.initial_depth,
            final_depth: r.final_depth,
            steps: r.steps,
            feasible: r.feasible,
        }
    }
}

/// Optimization history. Wall-clock time is deliberately left out so the
/// file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptReportRecord {
    pub chosen: usize,
    pub restarts: Vec<RestartSummary>,
    pub refine: RefineRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjStateRecord {
    pub template_id: String,
    pub scale: f64,
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub losses: FitLosses,
}

impl From<&ObjectState> for ObjStateRecord {
    fn from(s: &ObjectState) -> Self {
        let q = s.rotation.quaternion();
        ObjStateRecord {
            template_id: s.template_id.clone(),
            scale: s.scale,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [s.translation.x, s.translation.y, s.translation.z],
            losses: s.losses,
        }
    }
}

impl ObjStateRecord {
    pub fn state(&self) -> Result<ObjectState> {
        let iso = PoseRecord {
            translation: self.translation,
            rotation: self.rotation,
        }
        .to_isometry()?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("object scale must be positive"));
        }
        Ok(ObjectState {
            scale: self.scale,
            rotation: iso.rotation,
            translation: iso.translation.vector,
            template_id: self.template_id.clone(),
            losses: self.losses,
        })
    }
}

/// A human demonstration: skeleton pose plus the grasped object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    /// Shipped hand name or a handspec/1 path.
    pub skeleton: String,
    /// Mesh file of the demonstrated object.
    pub object: String,
    pub q: Vec<f64>,
    pub wrist: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub mesh: String,
}

/// A category directory's index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryRecord {
    pub name: String,
    /// Template mesh; its samples define the shared correspondence space.
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<String>,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEntry {
    pub instance: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub seed: u64,
    /// Sorted by path.
    pub outputs: Vec<ManifestEntry>,
    /// Sorted by instance.
    pub failures: Vec<FailureEntry>,
}

/// Mesh plus a name for it taken from the file stem.
pub fn load_named_mesh(path: &Path) -> Result<(String, TriMesh)> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into());
    Ok((name, read_mesh(path)?))
}

/// Point cloud from a PLY or whitespace-separated `x y z [nx ny nz]` text file.
pub fn read_cloud(path: &Path) -> Result<(Vec<Vec3>, Option<Vec<Vec3>>)> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default();
    if ext == "ply" {
        let ply = read_ply(path)?;
        return Ok((ply.points, ply.normals));
    }
    let text = read_text(path)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, format!("line {}: {e}", n + 1)))?;
        if !(v.len() == 3 || v.len() == 6) || !v.iter().all(|x| x.is_finite()) {
            return Err(parse_err(path, format!("line {}: expected 3 or 6 finite numbers", n + 1)));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            normals.push(Vec3::new(v[3], v[4], v[5]));
        }
    }
    let normals = match normals.len() {
        0 => None,
        k if k == points.len() => Some(normals),
        _ => return Err(parse_err(path, "normals given on some lines only")),
    };
    Ok((points, normals))
}

/// metrics/1 carries its schema as a field of the report itself.
pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let r: MetricsReport = serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))?;
    if r.schema != METRICS_SCHEMA {
        return Err(Error::Schema {
            expected: METRICS_SCHEMA.into(),
            found: r.schema,
        });
    }
    Ok(r)
}

pub fn write_metrics(path: &Path, r: &MetricsReport) -> Result<()> {
    write_record(path, METRICS_SCHEMA, r)
}
