use std::collections::HashMap;

use log::warn;
use nalgebra::Isometry3;

use super::Vec3;
use crate::{Error, Result};

/// Faces with area at or below this (cm²) are dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(pad),
            max: self.max + Vec3::repeat(pad),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.extent().norm()
        }
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Indexed triangle mesh in centimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    dropped_degenerate: usize,
}

impl TriMesh {
    /// Validates indices and coordinates and drops zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("non-finite vertex {v:?}")));
        }
        let n = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for f in faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!(
                    "face {f:?} references a vertex outside 0..{n}"
                )));
            }
            let area = tri_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if area <= DEGENERATE_AREA {
                dropped += 1;
            } else {
                kept.push(f);
            }
        }
        if dropped > 0 {
            warn!("dropped {dropped} degenerate faces");
        }
        Ok(TriMesh {
            vertices,
            faces: kept,
            dropped_degenerate: dropped,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        tri_area(&a, &b, &c)
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox(&self) -> Aabb {
        // only referenced vertices count
        let mut b = Aabb::empty();
        for f in &self.faces {
            for &i in f {
                b.grow(&self.vertices[i]);
            }
        }
        b
    }

    /// Number of undirected edges not shared by exactly two faces.
    pub fn open_edge_count(&self) -> usize {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().filter(|&&c| c != 2).count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.open_edge_count() == 0
    }

    /// Euler characteristic V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                used[f[k]] = true;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.faces.len() as i64
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, iso: &Isometry3<f64>, scale: f64) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| iso.transform_vector(&(v * scale)) + iso.translation.vector)
                .collect(),
            faces: self.faces.clone(),
            dropped_degenerate: self.dropped_degenerate,
        }
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<TriMesh> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Concatenates meshes without welding vertices.
    pub fn merge(meshes: &[TriMesh]) -> TriMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut dropped = 0;
        for m in meshes {
            let off = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
            dropped += m.dropped_degenerate;
        }
        TriMesh {
            vertices,
            faces,
            dropped_degenerate: dropped,
        }
    }

    /// Splits into edge-connected shells, each with compacted vertices.
    pub fn connected_components(&self) -> Vec<TriMesh> {
        let nf = self.faces.len();
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut root_slot: HashMap<usize, usize> = HashMap::new();
        for fi in 0..nf {
            let r = find(&mut parent, self.faces[fi][0]);
            let slot = *root_slot.entry(r).or_insert_with(|| {
                groups.push((r, Vec::new()));
                groups.len() - 1
            });
            groups[slot].1.push(fi);
        }
        groups
            .into_iter()
            .map(|(_, fs)| {
                let mut remap: HashMap<usize, usize> = HashMap::new();
                let mut vertices = Vec::new();
                let faces = fs
                    .iter()
                    .map(|&fi| {
                        let f = self.faces[fi];
                        let mut out = [0; 3];
                        for k in 0..3 {
                            out[k] = *remap.entry(f[k]).or_insert_with(|| {
                                vertices.push(self.vertices[f[k]]);
                                vertices.len() - 1
                            });
                        }
                        out
                    })
                    .collect();
                TriMesh {
                    vertices,
                    faces,
                    dropped_degenerate: 0,
                }
            })
            .collect()
    }
}

pub fn tri_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Length of the diagonal of the mesh's axis-aligned bounding box (cm).
pub fn bbox_diagonal(mesh: &TriMesh) -> f64 {
    mesh.bbox().diagonal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn degenerate_faces_are_dropped_and_counted() {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.faces().len(), 1);
        assert_eq!(m.dropped_degenerate(), 1);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = TriMesh::new(vec![Vec3::zeros()], vec![[0, 1, 2]]);
        assert!(err.is_err());
    }

    #[test]
    fn bbox_diagonal_of_unit_cube_and_scaled_cube() {
        let cube = shapes::cuboid(Vec3::repeat(0.5));
        assert!((bbox_diagonal(&cube) - 3f64.sqrt()).abs() < 1e-12);
        let big = cube.transformed(&Isometry3::identity(), 2.0);
        assert!((bbox_diagonal(&big) - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rotated_cube_diagonal_matches_vertex_extrema() {
        let cube = shapes::cuboid(Vec3::repeat(0.5));
        let rot = Isometry3::rotation(Vec3::new(0.3, -0.7, 0.2));
        let m = cube.transformed(&rot, 1.0);
        let mut lo = Vec3::repeat(f64::MAX);
        let mut hi = Vec3::repeat(f64::MIN);
        for v in m.vertices() {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        assert!((bbox_diagonal(&m) - (hi - lo).norm()).abs() < 1e-12);
    }

    #[test]
    fn components_of_two_shells() {
        let a = shapes::cuboid(Vec3::repeat(0.5));
        let b = a.transformed(&Isometry3::translation(3.0, 0.0, 0.0), 1.0);
        let m = TriMesh::merge(&[a, b]);
        let comps = m.connected_components();
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.is_watertight()));
    }
}
