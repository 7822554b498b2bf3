use rayon::prelude::*;

use super::mesh::{Aabb, TriMesh};
use super::sdf::MeshSdf;
use super::Vec3;
use crate::{Error, Result};

pub const DEFAULT_VOXEL_SPACING: f64 = 0.25;

/// Padding (in cells) around a mesh's bounding box.
pub const GRID_PADDING_CELLS: usize = 2;

/// Boolean occupancy on a regular lattice of cubic cells. Cell `(i, j, k)`
/// spans `origin + [i, i+1) * spacing` etc.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub occupancy: Vec<bool>,
}

impl OccupancyGrid {
    /// Empty grid covering `bounds` padded by [`GRID_PADDING_CELLS`].
    pub fn covering(bounds: &Aabb, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::invalid("voxel spacing must be positive"));
        }
        if bounds.is_empty() {
            return Err(Error::invalid("cannot build a grid over empty bounds"));
        }
        let pad = GRID_PADDING_CELLS as f64 * spacing;
        let origin = bounds.min - Vec3::repeat(pad);
        let ext = bounds.extent();
        let dims = [0, 1, 2]
            .map(|i| ((ext[i] / spacing).ceil() as usize).max(1) + 2 * GRID_PADDING_CELLS);
        Ok(OccupancyGrid {
            origin,
            spacing,
            dims,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn occupied_volume(&self) -> f64 {
        self.occupied_count() as f64 * self.cell_volume()
    }

    pub fn same_lattice(&self, other: &OccupancyGrid) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && (self.origin - other.origin).norm() == 0.0
    }

    /// Same lattice, occupancy decided by `inside(cell center)`.
    pub fn filled_with(&self, inside: impl Fn(&Vec3) -> bool + Sync) -> OccupancyGrid {
        let [nx, ny, _] = self.dims;
        let occupancy = (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
                inside(&self.cell_center(i, j, k))
            })
            .collect();
        OccupancyGrid {
            occupancy,
            ..self.clone()
        }
    }

    /// Nearest-cell resampling onto `target`'s lattice.
    pub fn resample_to(&self, target: &OccupancyGrid) -> OccupancyGrid {
        target.filled_with(|c| {
            let rel = (c - self.origin) / self.spacing;
            let mut ijk = [0usize; 3];
            for a in 0..3 {
                let f = rel[a].floor();
                if f < 0.0 || f >= self.dims[a] as f64 {
                    return false;
                }
                ijk[a] = f as usize;
            }
            self.occupancy[self.index(ijk[0], ijk[1], ijk[2])]
        })
    }

    /// Marks cells whose centers are inside the watertight `mesh`, by
    /// scanline parity along +x.
    pub fn fill_mesh(&self, mesh: &TriMesh) -> Result<OccupancyGrid> {
        if !mesh.is_watertight() {
            return Err(Error::NotWatertight(mesh.open_edge_count()));
        }
        let sdf = MeshSdf::new(mesh.clone());
        let [nx, ny, nz] = self.dims;
        let h = self.spacing;
        // sub-nanometre skew keeps scanlines off shared edges
        let jitter = Vec3::new(0.0, 7.071e-8 * h, 3.183e-8 * h);
        let columns: Vec<Vec<bool>> = (0..ny * nz)
            .into_par_iter()
            .map(|jk| {
                let (j, k) = (jk % ny, jk / ny);
                let c0 = self.cell_center(0, j, k) + jitter;
                let start = Vec3::new(self.origin.x - h, c0.y, c0.z);
                let hits = sdf.ray_crossings(&start, &Vec3::x());
                let mut col = vec![false; nx];
                let mut h_idx = 0;
                for (i, cell) in col.iter_mut().enumerate() {
                    let x = self.origin.x + (i as f64 + 0.5) * h;
                    while h_idx < hits.len() && start.x + hits[h_idx] < x {
                        h_idx += 1;
                    }
                    *cell = h_idx % 2 == 1;
                }
                col
            })
            .collect();
        let mut out = self.clone();
        for (jk, col) in columns.into_iter().enumerate() {
            let (j, k) = (jk % ny, jk / ny);
            for (i, v) in col.into_iter().enumerate() {
                let idx = out.index(i, j, k);
                out.occupancy[idx] = v;
            }
        }
        Ok(out)
    }
}

/// Occupancy of a watertight mesh on a grid padded around its bounding box.
pub fn voxelize(mesh: &TriMesh, spacing: f64) -> Result<OccupancyGrid> {
    if !mesh.is_watertight() {
        return Err(Error::NotWatertight(mesh.open_edge_count()));
    }
    OccupancyGrid::covering(&mesh.bbox(), spacing)?.fill_mesh(mesh)
}
