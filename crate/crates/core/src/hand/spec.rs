use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, Isometry3, Unit};
use serde::{Deserialize, Serialize};

use crate::geometry::{PoseRecord, Primitive, Vec3};
use crate::{Error, Result};

pub const HANDSPEC_SCHEMA: &str = "handspec/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    /// +1 when positive motion closes the finger toward the palm, 0 for
    /// joints that do not flex (abduction, roll).
    #[serde(default)]
    pub flex: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_joint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub name: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub origin: PoseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointRecord>,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_segment: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub name: String,
    pub link: String,
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_anchor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingertipRecord {
    pub name: String,
    pub link: String,
    pub point: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_fingertip: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorRecord {
    pub name: String,
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingRecord {
    pub actuators: Vec<ActuatorRecord>,
    /// One row per joint (in link order), one column per actuator.
    pub matrix: Vec<Vec<f64>>,
}

/// On-disk form of a hand description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSpecRecord {
    pub schema: String,
    pub name: String,
    pub links: Vec<LinkRecord>,
    #[serde(default)]
    pub anchors: Vec<AnchorRecord>,
    #[serde(default)]
    pub fingertips: Vec<FingertipRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingRecord>,
    #[serde(default)]
    pub self_collision_ignore: Vec<[String; 2]>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub link: usize,
    pub axis: Unit<Vec3>,
    pub lower: f64,
    pub upper: f64,
    pub flex: f64,
    pub human_joint: Option<String>,
}

impl Joint {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: Isometry3<f64>,
    pub joint: Option<usize>,
    pub primitives: Vec<Primitive>,
    pub human_segment: Option<String>,
    /// Oriented surface points in the link frame.
    pub samples: Vec<(Vec3, Vec3)>,
}

impl Link {
    pub fn has_geometry(&self) -> bool {
        !self.primitives.is_empty()
    }

    /// Signed distance to the union of this link's primitives, link frame.
    pub fn local_sdf(&self, x: &Vec3) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::zeros());
        for p in &self.primitives {
            let r = p.sdf(x);
            if r.0 < best.0 {
                best = r;
            }
        }
        best
    }

    /// Center and radius of a sphere bounding all primitives (link frame).
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        if self.primitives.is_empty() {
            return (Vec3::zeros(), 0.0);
        }
        let c = self.primitives.iter().map(|p| p.center()).sum::<Vec3>()
            / self.primitives.len() as f64;
        let r = self
            .primitives
            .iter()
            .map(|p| (p.center() - c).norm() + p.bounding_radius())
            .fold(0.0, f64::max);
        (c, r)
    }
}

#[derive(Debug, Clone)]
pub struct Anchor {
    pub name: String,
    pub link: usize,
    pub position: Vec3,
    pub human_anchor: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Fingertip {
    pub name: String,
    pub link: usize,
    pub point: Vec3,
    pub human_fingertip: Option<String>,
}

/// Linear map from actuated values to joint values.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub actuator_names: Vec<String>,
    pub actuator_limits: Vec<[f64; 2]>,
    /// DoF x DoA.
    pub matrix: DMatrix<f64>,
}

/// A joint pushed back inside its limits by [`HandSpec::apply_coupling`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClampEvent {
    pub joint: usize,
    pub requested: f64,
    pub clamped: f64,
}

/// Validated articulated hand.
#[derive(Debug, Clone)]
pub struct HandSpec {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub anchors: Vec<Anchor>,
    pub fingertips: Vec<Fingertip>,
    pub coupling: Coupling,
    /// For each link, the joints that move it (root first).
    pub joint_chain: Vec<Vec<usize>>,
    /// Link pairs checked for self-penetration, `i < j`.
    pub collision_pairs: Vec<(usize, usize)>,
    record: HandSpecRecord,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl HandSpec {
    pub fn from_json(text: &str) -> Result<HandSpec> {
        let rec: HandSpecRecord = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("hand spec: {e}")))?;
        HandSpec::from_record(rec)
    }

    pub fn load(path: &Path) -> Result<HandSpec> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let rec: HandSpecRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        HandSpec::from_record(rec)
    }

    pub fn record(&self) -> &HandSpecRecord {
        &self.record
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.record).expect("hand spec serializes")
    }

    pub fn from_record(rec: HandSpecRecord) -> Result<HandSpec> {
        if rec.schema != HANDSPEC_SCHEMA {
            return Err(Error::Schema {
                expected: HANDSPEC_SCHEMA.into(),
                found: rec.schema.clone(),
            });
        }
        if rec.links.is_empty() {
            return Err(Error::invalid("hand spec has no links"));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut links = Vec::with_capacity(rec.links.len());
        let mut joints = Vec::new();
        for (i, lr) in rec.links.iter().enumerate() {
            if index.insert(lr.name.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate link `{}`", lr.name)));
            }
            let parent = match &lr.parent {
                None if i == 0 => None,
                None => {
                    return Err(Error::invalid(format!(
                        "link `{}` has no parent; only the first link may be the root",
                        lr.name
                    )))
                }
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    Error::invalid(format!(
                        "link `{}` names parent `{p}` which is not declared before it",
                        lr.name
                    ))
                })?),
            };
            if i == 0 && lr.joint.is_some() {
                return Err(Error::invalid("the root link cannot carry a joint"));
            }
            let joint = match &lr.joint {
                None => None,
                Some(jr) => {
                    let axis = Vec3::from(jr.axis);
                    if !finite(&jr.axis) || (axis.norm() - 1.0).abs() > 1e-6 {
                        return Err(Error::invalid(format!(
                            "joint `{}` axis must be unit length",
                            jr.name
                        )));
                    }
                    if !finite(&jr.limits) || jr.limits[0] > jr.limits[1] {
                        return Err(Error::invalid(format!(
                            "joint `{}` has limits {:?}",
                            jr.name, jr.limits
                        )));
                    }
                    joints.push(Joint {
                        name: jr.name.clone(),
                        link: i,
                        axis: Unit::new_normalize(axis),
                        lower: jr.limits[0],
                        upper: jr.limits[1],
                        flex: jr.flex,
                        human_joint: jr.human_joint.clone(),
                    });
                    Some(joints.len() - 1)
                }
            };
            links.push(Link {
                name: lr.name.clone(),
                parent,
                origin: lr.origin.to_isometry()?,
                joint,
                primitives: lr.primitives.clone(),
                human_segment: lr.human_segment.clone(),
                samples: link_samples(&lr.primitives, lr.samples),
            });
        }
        {
            let mut names = HashSet::new();
            for j in &joints {
                if !names.insert(j.name.as_str()) {
                    return Err(Error::invalid(format!("duplicate joint `{}`", j.name)));
                }
            }
        }
        let link_of = |name: &str| -> Result<usize> {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown link `{name}`")))
        };
        let anchors = rec
            .anchors
            .iter()
            .map(|a| {
                Ok(Anchor {
                    name: a.name.clone(),
                    link: link_of(&a.link)?,
                    position: Vec3::from(a.position),
                    human_anchor: a.human_anchor.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fingertips = rec
            .fingertips
            .iter()
            .map(|f| {
                Ok(Fingertip {
                    name: f.name.clone(),
                    link: link_of(&f.link)?,
                    point: Vec3::from(f.point),
                    human_fingertip: f.human_fingertip.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let dof = joints.len();
        let coupling = match &rec.coupling {
            None => Coupling {
                actuator_names: joints.iter().map(|j| j.name.clone()).collect(),
                actuator_limits: joints.iter().map(|j| [j.lower, j.upper]).collect(),
                matrix: DMatrix::identity(dof, dof),
            },
            Some(c) => {
                let doa = c.actuators.len();
                if c.matrix.len() != dof || c.matrix.iter().any(|r| r.len() != doa) {
                    return Err(Error::invalid(format!(
                        "coupling matrix must be {dof}x{doa} (joints x actuators)"
                    )));
                }
                let flat: Vec<f64> = c.matrix.iter().flatten().copied().collect();
                if !finite(&flat) {
                    return Err(Error::invalid("coupling matrix is not finite"));
                }
                for a in &c.actuators {
                    if !finite(&a.limits) || a.limits[0] > a.limits[1] {
                        return Err(Error::invalid(format!(
                            "actuator `{}` has limits {:?}",
                            a.name, a.limits
                        )));
                    }
                }
                Coupling {
                    actuator_names: c.actuators.iter().map(|a| a.name.clone()).collect(),
                    actuator_limits: c.actuators.iter().map(|a| a.limits).collect(),
                    matrix: DMatrix::from_row_slice(dof, doa, &flat),
                }
            }
        };
        // the coupled image of the actuator box must stay inside joint limits
        for (j, joint) in joints.iter().enumerate() {
            let (mut lo, mut hi) = (0.0, 0.0);
            for (k, lim) in coupling.actuator_limits.iter().enumerate() {
                let c = coupling.matrix[(j, k)];
                lo += (c * lim[0]).min(c * lim[1]);
                hi += (c * lim[0]).max(c * lim[1]);
            }
            if lo < joint.lower - 1e-9 || hi > joint.upper + 1e-9 {
                return Err(Error::invalid(format!(
                    "coupling drives joint `{}` to [{lo:.4}, {hi:.4}], outside its limits [{}, {}]",
                    joint.name, joint.lower, joint.upper
                )));
            }
        }

        let mut joint_chain: Vec<Vec<usize>> = Vec::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            let mut chain = l.parent.map(|p| joint_chain[p].clone()).unwrap_or_default();
            if let Some(j) = l.joint {
                chain.push(j);
            }
            debug_assert_eq!(joint_chain.len(), i);
            joint_chain.push(chain);
        }

        let mut ignore = HashSet::new();
        for [a, b] in &rec.self_collision_ignore {
            let (a, b) = (link_of(a)?, link_of(b)?);
            ignore.insert((a.min(b), a.max(b)));
        }
        let geometric_parent: Vec<Option<usize>> = (0..links.len())
            .map(|i| {
                let mut p = links[i].parent;
                while let Some(k) = p {
                    if links[k].has_geometry() {
                        return Some(k);
                    }
                    p = links[k].parent;
                }
                None
            })
            .collect();
        let mut collision_pairs = Vec::new();
        for i in 0..links.len() {
            for j in i + 1..links.len() {
                if !links[i].has_geometry() || !links[j].has_geometry() {
                    continue;
                }
                if geometric_parent[j] == Some(i) || geometric_parent[i] == Some(j) {
                    continue;
                }
                if ignore.contains(&(i, j)) {
                    continue;
                }
                collision_pairs.push((i, j));
            }
        }

        Ok(HandSpec {
            name: rec.name.clone(),
            links,
            joints,
            anchors,
            fingertips,
            coupling,
            joint_chain,
            collision_pairs,
            record: rec,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn doa(&self) -> usize {
        self.coupling.matrix.ncols()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn clamp_q(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.joints).map(|(v, j)| j.clamp(*v)).collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q.iter().zip(&self.joints).all(|(v, j)| *v >= j.lower && *v <= j.upper)
    }

    pub fn clamp_actuated(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(&self.coupling.actuator_limits)
            .map(|(v, l)| v.clamp(l[0], l[1]))
            .collect()
    }

    /// `q = C a`, clamped to joint limits; clamps are reported.
    pub fn apply_coupling(&self, actuated: &[f64]) -> Result<(Vec<f64>, Vec<ClampEvent>)> {
        if actuated.len() != self.doa() {
            return Err(Error::invalid(format!(
                "expected {} actuated values, got {}",
                self.doa(),
                actuated.len()
            )));
        }
        let mut events = Vec::new();
        let q = (0..self.dof())
            .map(|j| {
                let v: f64 = (0..self.doa())
                    .map(|k| self.coupling.matrix[(j, k)] * actuated[k])
                    .sum();
                let c = self.joints[j].clamp(v);
                if c != v {
                    events.push(ClampEvent {
                        joint: j,
                        requested: v,
                        clamped: c,
                    });
                }
                c
            })
            .collect();
        Ok((q, events))
    }

    /// Actuated values whose coupled image is closest to `q` in least squares,
    /// clamped to actuator limits.
    pub fn actuated_from_q(&self, q: &[f64]) -> Vec<f64> {
        let c = &self.coupling.matrix;
        if c.is_square() && *c == DMatrix::identity(c.nrows(), c.ncols()) {
            return self.clamp_actuated(q);
        }
        let qv = nalgebra::DVector::from_column_slice(q);
        let a = c
            .clone()
            .svd(true, true)
            .solve(&qv, 1e-12)
            .map(|v| v.iter().copied().collect::<Vec<_>>())
            .unwrap_or_else(|_| vec![0.0; self.doa()]);
        self.clamp_actuated(&a)
    }

    /// Indices of links with geometry, in link order.
    pub fn geometric_links(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&i| self.links[i].has_geometry())
            .collect()
    }

    pub fn is_ancestor_or_self(&self, ancestor: usize, mut link: usize) -> bool {
        loop {
            if link == ancestor {
                return true;
            }
            match self.links[link].parent {
                Some(p) => link = p,
                None => return false,
            }
        }
    }
}

/// Spreads `n` samples over a link's primitives by surface area, dropping
/// points buried inside a sibling primitive.
fn link_samples(prims: &[Primitive], n: usize) -> Vec<(Vec3, Vec3)> {
    if prims.is_empty() || n == 0 {
        return Vec::new();
    }
    let total: f64 = prims.iter().map(|p| p.surface_area()).sum();
    let mut out = Vec::with_capacity(n);
    let mut assigned = 0;
    for (i, p) in prims.iter().enumerate() {
        let k = if i + 1 == prims.len() {
            n - assigned
        } else {
            ((p.surface_area() / total * n as f64).round() as usize).min(n - assigned)
        };
        assigned += k;
        for (x, nrm) in p.surface_points(k) {
            let buried = prims
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.sdf(&x).0 < -1e-9);
            if !buried {
                out.push((x, nrm));
            }
        }
    }
    out
}
