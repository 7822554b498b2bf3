//! Contact structure of a demonstrated grasp: digitized contact maps on
//! object and hand, the per-segment split of the object contact region and
//! the anchor assignment.

use nalgebra::Isometry3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    sample_surface, KdTree, MeshSdf, SignedDistance, SurfaceSamples, TriMesh, UnionSdf, Vec3,
};
use crate::hand::{forward_kinematics, Grasp, HandSpec, PosedHand};
use crate::{Error, Result};

/// Object points with digitized distance at or below this (cm) are in contact.
pub const CONTACT_THRESHOLD: f64 = 0.5;

/// Hand samples per segment when the hand description has no count for it.
pub const DEFAULT_SEGMENT_SAMPLES: usize = 64;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Contact likelihood from a signed distance in cm: `1 - 2 (sigmoid(2d) - 0.5)`
/// with `d` truncated at zero, so touching or penetrating points map to 1.
pub fn digitize(d: f64) -> f64 {
    let d = d.max(0.0);
    2.0 - 2.0 * sigmoid(2.0 * d)
}

/// Derivative of [`digitize`] with respect to `d` (zero for `d < 0`).
pub fn digitize_derivative(d: f64) -> f64 {
    if d < 0.0 {
        return 0.0;
    }
    let s = sigmoid(2.0 * d);
    -4.0 * s * (1.0 - s)
}

impl SignedDistance for PosedHand<'_> {
    fn distance(&self, p: &Vec3) -> f64 {
        self.sdf(p).map_or(f64::INFINITY, |r| r.0)
    }

    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        self.sdf(p).map_or((f64::INFINITY, Vec3::zeros()), |r| (r.0, r.1))
    }
}

/// Digitized map over a point set together with the indices in contact.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMap {
    pub omega: Vec<f64>,
    pub distance: Vec<f64>,
    pub contact: Vec<usize>,
}

/// Digitizes each point's signed distance to `surface`.
pub fn contact_map(points: &[Vec3], surface: &dyn SignedDistance) -> ContactMap {
    let distance: Vec<f64> = points.par_iter().map(|p| surface.distance(p)).collect();
    let omega = distance.iter().map(|d| digitize(*d)).collect();
    let contact = distance
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= CONTACT_THRESHOLD)
        .map(|(i, _)| i)
        .collect();
    ContactMap {
        omega,
        distance,
        contact,
    }
}

/// Object-side map against the posed hand surface.
pub fn object_contact_map(object: &SurfaceSamples, hand: &dyn SignedDistance) -> ContactMap {
    contact_map(&object.points, hand)
}

/// Per-segment maps of hand samples against the object, concatenated in
/// segment order. Returns the concatenated map and each segment's range.
pub fn hand_contact_map(
    segments: &[Vec<Vec3>],
    object: &dyn SignedDistance,
) -> (ContactMap, Vec<(usize, usize)>) {
    let mut ranges = Vec::with_capacity(segments.len());
    let mut all = Vec::new();
    for s in segments {
        ranges.push((all.len(), all.len() + s.len()));
        all.extend_from_slice(s);
    }
    (contact_map(&all, object), ranges)
}

/// Assigns each contact point to the segment whose samples are nearest.
/// Ties go to the lowest segment index. Segments without samples never win.
pub fn knuckle_partition(
    points: &[Vec3],
    contact: &[usize],
    segments: &[Vec<Vec3>],
) -> Vec<Vec<usize>> {
    let trees: Vec<Option<KdTree>> = segments
        .iter()
        .map(|s| (!s.is_empty()).then(|| KdTree::new(s)))
        .collect();
    let owner: Vec<Option<usize>> = contact
        .par_iter()
        .map(|&i| {
            let mut best: Option<(usize, f64)> = None;
            for (s, t) in trees.iter().enumerate() {
                if let Some(t) = t {
                    let d = t.nearest(&points[i]).1;
                    if best.is_none_or(|b| d < b.1) {
                        best = Some((s, d));
                    }
                }
            }
            best.map(|b| b.0)
        })
        .collect();
    let mut out = vec![Vec::new(); segments.len()];
    for (&i, o) in contact.iter().zip(owner) {
        if let Some(s) = o {
            out[s].push(i);
        }
    }
    out
}

/// Points assigned to one anchor with their squared projection distances.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorRegion {
    pub points: Vec<usize>,
    pub delta: Vec<f64>,
}

/// Assigns each contact point to its nearest anchor (ties to the lowest
/// index); `delta` is the squared distance to that anchor.
pub fn anchor_assignment(points: &[Vec3], contact: &[usize], anchors: &[Vec3]) -> Result<Vec<AnchorRegion>> {
    if anchors.is_empty() {
        return Err(Error::invalid("anchor assignment needs at least one anchor"));
    }
    let tree = KdTree::new(anchors);
    let mut out = vec![AnchorRegion::default(); anchors.len()];
    for &i in contact {
        let (a, d2) = tree.nearest(&points[i]);
        out[a].points.push(i);
        out[a].delta.push(d2);
    }
    Ok(out)
}

/// Contact data for one hand segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentContacts {
    pub name: String,
    /// Digitized map over this segment's samples.
    pub omega: Vec<f64>,
    /// Segment samples in contact (indices into `omega`).
    pub hand_contact: Vec<usize>,
    /// Object samples nearest to this segment among the contact region.
    pub region: Vec<usize>,
}

/// Contact data for one named anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorContacts {
    pub name: String,
    #[serde(flatten)]
    pub region: AnchorRegion,
}

/// Everything extracted from a demonstration, indexed against one set of
/// object samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactBundle {
    pub object_omega: Vec<f64>,
    pub object_contact: Vec<usize>,
    pub segments: Vec<SegmentContacts>,
    pub anchors: Vec<AnchorContacts>,
}

impl ContactBundle {
    pub fn segment(&self, name: &str) -> Option<&SegmentContacts> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn anchor(&self, name: &str) -> Option<&AnchorContacts> {
        self.anchors.iter().find(|a| a.name == name)
    }

    pub fn active_anchors(&self) -> usize {
        self.anchors.iter().filter(|a| !a.region.points.is_empty()).count()
    }

    /// Checks the structural invariants against `n` object samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.object_omega.len() != n {
            return Err(Error::invalid(format!(
                "bundle has {} object values for {n} samples",
                self.object_omega.len()
            )));
        }
        if self.object_omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("object contact values must lie in [0, 1]"));
        }
        let mut seen = vec![false; n];
        let in_contact: std::collections::HashSet<usize> =
            self.object_contact.iter().copied().collect();
        for s in &self.segments {
            for &i in &s.region {
                if i >= n || !in_contact.contains(&i) || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!(
                        "segment `{}` region is not a disjoint subset of the contact set",
                        s.name
                    )));
                }
            }
        }
        for a in &self.anchors {
            if a.region.points.len() != a.region.delta.len()
                || a.region.points.iter().any(|i| !in_contact.contains(i))
            {
                return Err(Error::invalid(format!("anchor `{}` region is invalid", a.name)));
            }
        }
        Ok(())
    }
}

/// A human grasp: object, segmented posed hand surface, joint angles and
/// wrist pose of the demonstrator skeleton.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub object: TriMesh,
    pub segments: Vec<(String, TriMesh)>,
    pub q: Vec<f64>,
    pub wrist: Isometry3<f64>,
}

impl Demonstration {
    pub fn grasp(&self) -> Grasp {
        Grasp::new(self.q.clone(), self.wrist)
    }

    /// Demonstration made by posing a skeleton hand: each geometric link
    /// becomes one segment named after its human segment.
    pub fn from_skeleton(skeleton: &HandSpec, grasp: &Grasp, object: TriMesh) -> Result<Self> {
        let posed = forward_kinematics(skeleton, grasp)?;
        let segments = posed
            .link_meshes()
            .into_iter()
            .map(|(l, m)| {
                let link = &skeleton.links[l];
                (link.human_segment.clone().unwrap_or_else(|| link.name.clone()), m)
            })
            .collect();
        Ok(Demonstration {
            object,
            segments,
            q: grasp.q.clone(),
            wrist: grasp.wrist,
        })
    }

    /// Merged hand surface.
    pub fn hand_mesh(&self) -> TriMesh {
        let m: Vec<TriMesh> = self.segments.iter().map(|(_, m)| m.clone()).collect();
        TriMesh::merge(&m)
    }

    /// Surface samples of each segment; counts follow the skeleton spec's
    /// link with the same segment name.
    pub fn segment_samples(&self, skeleton: &HandSpec, seed: u64) -> Result<Vec<Vec<Vec3>>> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, (name, mesh))| {
                let n = skeleton
                    .links
                    .iter()
                    .find(|l| l.human_segment.as_deref() == Some(name))
                    .map_or(DEFAULT_SEGMENT_SAMPLES, |l| l.samples.len().max(1));
                Ok(sample_surface(mesh, n, seed.wrapping_add(i as u64 + 1))?.points)
            })
            .collect()
    }
}

/// Runs the full extraction for a demonstration on the given object samples.
pub fn extract_contacts(
    demo: &Demonstration,
    skeleton: &HandSpec,
    object_samples: &SurfaceSamples,
    seed: u64,
) -> Result<ContactBundle> {
    if demo.segments.is_empty() {
        return Err(Error::invalid("demonstration hand has no segments"));
    }
    let hand_sdf = UnionSdf::from_mesh(&demo.hand_mesh());
    let obj_map = object_contact_map(object_samples, &hand_sdf);
    let seg_samples = demo.segment_samples(skeleton, seed)?;
    let object_sdf = MeshSdf::new(demo.object.clone());
    let (hand_map, ranges) = hand_contact_map(&seg_samples, &object_sdf);
    let partition = knuckle_partition(&object_samples.points, &obj_map.contact, &seg_samples);

    let posed = forward_kinematics(skeleton, &demo.grasp())?;
    let anchors = if posed.anchors.is_empty() {
        Vec::new()
    } else {
        anchor_assignment(&object_samples.points, &obj_map.contact, &posed.anchors)?
    };

    let segments = demo
        .segments
        .iter()
        .zip(ranges)
        .zip(partition)
        .map(|(((name, _), (a, b)), region)| SegmentContacts {
            name: name.clone(),
            omega: hand_map.omega[a..b].to_vec(),
            hand_contact: hand_map
                .contact
                .iter()
                .filter(|&&i| i >= a && i < b)
                .map(|i| i - a)
                .collect(),
            region,
        })
        .collect();
    let anchors = skeleton
        .anchors
        .iter()
        .zip(anchors)
        .map(|(a, region)| AnchorContacts {
            name: a.human_anchor.clone().unwrap_or_else(|| a.name.clone()),
            region,
        })
        .collect();
    Ok(ContactBundle {
        object_omega: obj_map.omega,
        object_contact: obj_map.contact,
        segments,
        anchors,
    })
}
