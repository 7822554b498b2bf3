use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use super::Vec3;
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_COUNT: usize = 2048;

/// Oriented points on a surface, with the face each was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub face_ids: Vec<usize>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Samples without face provenance (e.g. observed clouds).
    pub fn from_points(points: Vec<Vec3>, normals: Vec<Vec3>) -> Self {
        let face_ids = vec![usize::MAX; points.len()];
        SurfaceSamples {
            points,
            normals,
            face_ids,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> SurfaceSamples {
        SurfaceSamples {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
            face_ids: idx.iter().map(|&i| self.face_ids[i]).collect(),
        }
    }
}

/// Area-weighted uniform samples; deterministic for a given seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot sample an empty mesh"));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let areas: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        face_ids: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let f = dist.sample(&mut rng);
        let [a, b, c] = mesh.triangle(f);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
        out.points.push(p);
        out.normals.push(mesh.face_normal(f));
        out.face_ids.push(f);
    }
    Ok(out)
}
