//! Signed distance queries. Negative inside, positive outside.

use log::warn;
use rayon::prelude::*;

use super::bvh::Bvh;
use super::mesh::{Aabb, TriMesh};
use super::Vec3;

/// A shape that can report its signed distance and the gradient of it.
pub trait SignedDistance: Sync {
    fn distance(&self, p: &Vec3) -> f64;

    /// Signed distance and its spatial gradient (unit length where defined).
    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3);
}

// Fixed, mutually skewed directions; three votes make the parity test
// robust against rays grazing an edge or vertex.
const RAY_DIRS: [[f64; 3]; 3] = [
    [0.577_350_269_189_625_7, 0.577_350_269_189_625_7, 0.577_350_269_189_625_7],
    [-0.801_783_725_737_273_2, 0.267_261_241_912_424_4, 0.534_522_483_824_848_8],
    [0.169_030_850_945_703_3, -0.845_154_254_728_516_5, 0.507_092_552_837_109_9],
];

/// Exact signed distance to a triangle mesh. Sign by ray parity (majority of
/// three rays) when the mesh is watertight; otherwise the unsigned distance
/// is returned with a positive sign and [`MeshSdf::is_signed`] is false.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriMesh,
    bvh: Bvh,
    signed: bool,
}

impl MeshSdf {
    pub fn new(mesh: TriMesh) -> Self {
        let signed = mesh.is_watertight();
        if !signed {
            warn!(
                "mesh has {} open edges; falling back to unsigned distance",
                mesh.open_edge_count()
            );
        }
        let bvh = Bvh::build(&mesh);
        MeshSdf { mesh, bvh, signed }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Closest surface point, its face and the unsigned distance.
    pub fn closest_point(&self, p: &Vec3) -> (Vec3, usize, f64) {
        let hit = self
            .bvh
            .closest(&self.mesh, p)
            .expect("closest_point on an empty mesh");
        (hit.point, hit.face, hit.dist_sq.sqrt())
    }

    /// Closest surface point, if one lies within `sqrt(bound_sq)`.
    pub fn closest_within(&self, p: &Vec3, bound_sq: f64) -> Option<Vec3> {
        self.bvh.closest_within(&self.mesh, p, bound_sq).map(|h| h.point)
    }

    /// Inside test by ray parity; meaningful only for watertight meshes.
    pub fn contains(&self, p: &Vec3) -> bool {
        let mut hits = Vec::new();
        let mut votes = 0;
        for d in RAY_DIRS {
            self.bvh.ray_hits(&self.mesh, p, &Vec3::from(d), &mut hits);
            if hits.len() % 2 == 1 {
                votes += 1;
            }
        }
        votes >= 2
    }

    /// Sorted crossings of the ray `origin + t * dir` with the surface.
    pub fn ray_crossings(&self, origin: &Vec3, dir: &Vec3) -> Vec<f64> {
        let mut hits = Vec::new();
        self.bvh.ray_hits(&self.mesh, origin, dir, &mut hits);
        hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
        hits
    }
}

impl SignedDistance for MeshSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        let (_, _, d) = self.closest_point(p);
        if self.signed && self.contains(p) {
            -d
        } else {
            d
        }
    }

    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let (q, face, d) = self.closest_point(p);
        let inside = self.signed && self.contains(p);
        let g = if d > 1e-12 {
            (p - q) / d
        } else {
            self.mesh.face_normal(face)
        };
        if inside {
            (-d, -g)
        } else {
            (d, g)
        }
    }
}

/// Result of a batch mesh SDF query.
#[derive(Debug, Clone)]
pub struct SdfResult {
    pub values: Vec<f64>,
    /// False when the mesh was not watertight and values are unsigned.
    pub signed: bool,
}

pub fn mesh_sdf(mesh: &TriMesh, queries: &[Vec3]) -> SdfResult {
    let sdf = MeshSdf::new(mesh.clone());
    SdfResult {
        values: queries.par_iter().map(|q| sdf.distance(q)).collect(),
        signed: sdf.is_signed(),
    }
}

/// Union of closed shells: the minimum of the per-shell signed distances.
/// Overlapping shells (e.g. a hand tessellated primitive by primitive) break
/// single-mesh ray parity, so each shell is signed on its own.
#[derive(Debug, Clone)]
pub struct UnionSdf {
    shells: Vec<MeshSdf>,
    bounds: Vec<Aabb>,
}

impl UnionSdf {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let shells: Vec<MeshSdf> = mesh
            .connected_components()
            .into_iter()
            .map(MeshSdf::new)
            .collect();
        let bounds = shells.iter().map(|s| s.mesh().bbox()).collect();
        UnionSdf { shells, bounds }
    }

    pub fn is_empty(&self) -> bool {
        self.shells.is_empty()
    }
}

impl SignedDistance for UnionSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        self.distance_and_gradient(p).0
    }

    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::z());
        for (s, b) in self.shells.iter().zip(&self.bounds) {
            // a shell whose box is farther than the current best cannot win
            if best.0.is_finite() && best.0 > 0.0 && b.distance_sq(p) > best.0 * best.0 {
                continue;
            }
            let r = s.distance_and_gradient(p);
            if r.0 < best.0 {
                best = r;
            }
        }
        best
    }
}

/// Signed distances sampled on a regular lattice, queried by trilinear
/// interpolation with the exact gradient of the interpolant.
#[derive(Debug, Clone)]
pub struct SdfGrid {
    origin: Vec3,
    spacing: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl SdfGrid {
    /// Samples `sdf` on nodes covering `bounds` at `spacing`.
    pub fn build(sdf: &dyn SignedDistance, bounds: &Aabb, spacing: f64) -> Self {
        assert!(spacing > 0.0);
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|i| ((ext[i] / spacing).ceil() as usize + 1).max(2));
        let origin = bounds.min;
        let n = dims[0] * dims[1] * dims[2];
        let values = (0..n)
            .into_par_iter()
            .map(|idx| {
                let i = idx % dims[0];
                let j = (idx / dims[0]) % dims[1];
                let k = idx / (dims[0] * dims[1]);
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * spacing;
                sdf.distance(&p)
            })
            .collect();
        SdfGrid {
            origin,
            spacing,
            dims,
            values,
        }
    }

    /// Distance grid of a mesh built in three passes: exact closest points
    /// in a band of a few cells around the surface, closest-point propagation
    /// to every other node (an upper bound within a small fraction of a cell
    /// of the true distance), and the sign from one parity ray per row.
    pub fn from_mesh(sdf: &MeshSdf, bounds: &Aabb, spacing: f64) -> Self {
        if !sdf.is_signed() {
            return Self::build(sdf, bounds, spacing);
        }
        assert!(spacing > 0.0);
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|i| ((ext[i] / spacing).ceil() as usize + 1).max(2));
        let [nx, ny, nz] = dims;
        let origin = bounds.min;
        let node = |i: usize, j: usize, k: usize| origin + Vec3::new(i as f64, j as f64, k as f64) * spacing;
        let band = 3.0 * spacing;

        let mut closest: Vec<Option<Vec3>> = (0..nx * ny * nz)
            .into_par_iter()
            .map(|idx| {
                let p = node(idx % nx, (idx / nx) % ny, idx / (nx * ny));
                sdf.closest_within(&p, band * band)
            })
            .collect();
        if closest.iter().all(|c| c.is_none()) {
            // surface far from every node: seed the grid corner exactly
            closest[0] = Some(sdf.closest_point(&origin).0);
        }

        // eight directional sweeps, each looking at the upwind neighbours
        let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        for sweep in 0..8 {
            let (si, sj, sk) = (sweep & 1 == 1, sweep & 2 == 2, sweep & 4 == 4);
            let order = |n: usize, rev: bool| -> Vec<usize> {
                if rev {
                    (0..n).rev().collect()
                } else {
                    (0..n).collect()
                }
            };
            let step = |x: usize, rev: bool, n: usize| -> Option<usize> {
                if rev {
                    (x + 1 < n).then_some(x + 1)
                } else {
                    x.checked_sub(1)
                }
            };
            for &k in &order(nz, sk) {
                for &j in &order(ny, sj) {
                    for &i in &order(nx, si) {
                        let here = idx(i, j, k);
                        let p = node(i, j, k);
                        let mut best = closest[here].map(|c| ((c - p).norm_squared(), c));
                        for mask in 1..8usize {
                            let ii = if mask & 1 == 1 { step(i, si, nx) } else { Some(i) };
                            let jj = if mask & 2 == 2 { step(j, sj, ny) } else { Some(j) };
                            let kk = if mask & 4 == 4 { step(k, sk, nz) } else { Some(k) };
                            let (Some(ii), Some(jj), Some(kk)) = (ii, jj, kk) else { continue };
                            if let Some(c) = closest[idx(ii, jj, kk)] {
                                let d2 = (c - p).norm_squared();
                                if best.is_none_or(|b| d2 < b.0) {
                                    best = Some((d2, c));
                                }
                            }
                        }
                        closest[here] = best.map(|b| b.1);
                    }
                }
            }
        }

        let jitter = Vec3::new(0.0, 7.071e-8 * spacing, 3.183e-8 * spacing);
        let rows: Vec<Vec<f64>> = (0..ny * nz)
            .into_par_iter()
            .map(|jk| {
                let (j, k) = (jk % ny, jk / ny);
                let row0 = node(0, j, k);
                let start = Vec3::new(origin.x - spacing, row0.y, row0.z) + jitter;
                let hits = sdf.ray_crossings(&start, &Vec3::x());
                let parity_ok = hits.len() % 2 == 0;
                let mut next = 0;
                (0..nx)
                    .map(|i| {
                        let p = node(i, j, k);
                        let d = (closest[idx(i, j, k)].expect("every node reached") - p).norm();
                        let inside = if parity_ok {
                            while next < hits.len() && start.x + hits[next] < p.x {
                                next += 1;
                            }
                            next % 2 == 1
                        } else {
                            sdf.contains(&p)
                        };
                        if inside {
                            -d
                        } else {
                            d
                        }
                    })
                    .collect()
            })
            .collect();
        let values = rows.concat();
        SdfGrid {
            origin,
            spacing,
            dims,
            values,
        }
    }

    pub fn from_parts(origin: Vec3, spacing: f64, dims: [usize; 3], values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dims[0] * dims[1] * dims[2]);
        SdfGrid {
            origin,
            spacing,
            dims,
            values,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> Aabb {
        let max = self.origin
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.spacing;
        Aabb {
            min: self.origin,
            max,
        }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    fn interpolate(&self, p: &Vec3) -> (f64, Vec3) {
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let x = (p[a] - self.origin[a]) / self.spacing;
            let max_cell = self.dims[a] - 2;
            let c = (x.floor().max(0.0) as usize).min(max_cell);
            cell[a] = c;
            frac[a] = (x - c as f64).clamp(0.0, 1.0);
        }
        let [i, j, k] = cell;
        let [fx, fy, fz] = frac;
        let c000 = self.at(i, j, k);
        let c100 = self.at(i + 1, j, k);
        let c010 = self.at(i, j + 1, k);
        let c110 = self.at(i + 1, j + 1, k);
        let c001 = self.at(i, j, k + 1);
        let c101 = self.at(i + 1, j, k + 1);
        let c011 = self.at(i, j + 1, k + 1);
        let c111 = self.at(i + 1, j + 1, k + 1);
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let v = c0 + (c1 - c0) * fz;

        let dx0 = (c100 - c000) + (c110 - c010 - c100 + c000) * fy;
        let dx1 = (c101 - c001) + (c111 - c011 - c101 + c001) * fy;
        let dx = dx0 + (dx1 - dx0) * fz;
        let dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let dz = c1 - c0;
        (v, Vec3::new(dx, dy, dz) / self.spacing)
    }
}

impl SignedDistance for SdfGrid {
    fn distance(&self, p: &Vec3) -> f64 {
        self.distance_and_gradient(p).0
    }

    fn distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let b = self.bounds();
        if b.contains(p) {
            return self.interpolate(p);
        }
        // outside the lattice: distance to the box plus the boundary value
        let q = Vec3::new(
            p.x.clamp(b.min.x, b.max.x),
            p.y.clamp(b.min.y, b.max.y),
            p.z.clamp(b.min.z, b.max.z),
        );
        let (v, _) = self.interpolate(&q);
        let off = p - q;
        let d = off.norm();
        (v + d, off / d)
    }
}
