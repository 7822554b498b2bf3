//! Convex hull of a small 6-D point set by incremental beneath-beyond
//! insertion, used for the largest origin-centered ball inside the hull.

use std::collections::HashMap;

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 6;
pub type Point = SVector<f64, DIM>;

/// Relative rank tolerance: singular values below this fraction of the
/// largest count as zero.
const RANK_TOL: f64 = 1e-9;
/// Relative size of the symmetry-breaking perturbation. Facets spanned by
/// points that are affinely dependent before the perturbation get their
/// normals from it alone, so it must dwarf rounding error.
const JITTER: f64 = 1e-5;
/// Insets smaller than this fraction of the point spread are boundary hits.
const BOUNDARY_TOL: f64 = 1e-4;

struct Facet {
    verts: [usize; DIM],
    normal: Point,
    offset: f64,
}

/// Hyperplane through `DIM` points, `normal . x = offset`, unit normal.
fn hyperplane(pts: &[Point], verts: &[usize; DIM]) -> Option<(Point, f64)> {
    let mut m = SMatrix::<f64, DIM, DIM>::zeros();
    for r in 1..DIM {
        let d = pts[verts[r]] - pts[verts[0]];
        m.set_row(r - 1, &d.transpose());
    }
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let (mut k, mut smallest) = (0, f64::INFINITY);
    for i in 0..DIM {
        if svd.singular_values[i] < smallest {
            smallest = svd.singular_values[i];
            k = i;
        }
    }
    let normal: Point = vt.row(k).transpose();
    let normal = normal.try_normalize(0.0)?;
    Some((normal, normal.dot(&pts[verts[0]])))
}

fn spread(points: &[Point]) -> f64 {
    let c = points.iter().sum::<Point>() / points.len() as f64;
    points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max)
}

/// Number of affinely independent directions in the set.
pub fn affine_rank(points: &[Point]) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let c = points.iter().sum::<Point>() / points.len() as f64;
    let mut cov = SMatrix::<f64, DIM, DIM>::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    // singular values of the centered cloud are square roots of these
    let ev = cov.symmetric_eigenvalues();
    let top = ev.max().max(0.0).sqrt();
    ev.iter().filter(|&&e| e.max(0.0).sqrt() > RANK_TOL * top).count()
}

/// Vertices of a full-dimensional starting simplex, greedily spread.
fn initial_simplex(pts: &[Point]) -> Option<[usize; DIM + 1]> {
    let c = pts.iter().sum::<Point>() / pts.len() as f64;
    let far = |f: &dyn Fn(&Point) -> f64| {
        (0..pts.len()).fold(0, |b, i| if f(&pts[i]) > f(&pts[b]) { i } else { b })
    };
    let first = far(&|p| (p - c).norm());
    let mut chosen = vec![first];
    let mut basis: Vec<Point> = Vec::new();
    while chosen.len() < DIM + 1 {
        let base = pts[first];
        let resid = |p: &Point| {
            let mut d = p - base;
            for b in &basis {
                d -= b * b.dot(&d);
            }
            d
        };
        let next = far(&|p| resid(p).norm());
        let r = resid(&pts[next]);
        if r.norm() <= RANK_TOL * spread(pts) {
            return None;
        }
        basis.push(r.normalize());
        chosen.push(next);
    }
    Some(std::array::from_fn(|i| chosen[i]))
}

/// Outward facet hyperplanes `(normal, offset)` with `normal . x <= offset`
/// inside. `None` when the set is not full-dimensional.
pub fn facets(points: &[Point]) -> Option<Vec<(Point, f64)>> {
    if points.len() <= DIM || affine_rank(points) < DIM {
        return None;
    }
    // tiny deterministic perturbation puts the points in general position
    let scale = spread(points);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let pts: Vec<Point> = points
        .iter()
        .map(|p| p + Point::from_fn(|_, _| rng.random_range(-1.0..1.0) * JITTER * scale))
        .collect();

    let simplex = initial_simplex(&pts)?;
    let interior = simplex.iter().map(|&i| pts[i]).sum::<Point>() / (DIM + 1) as f64;
    let make = |verts: [usize; DIM]| -> Option<Facet> {
        let (mut normal, mut offset) = hyperplane(&pts, &verts)?;
        if normal.dot(&interior) > offset {
            normal = -normal;
            offset = -offset;
        }
        Some(Facet { verts, normal, offset })
    };
    let mut hull: Vec<Facet> = Vec::new();
    for skip in 0..=DIM {
        let mut v = [0; DIM];
        let mut k = 0;
        for (i, &s) in simplex.iter().enumerate() {
            if i != skip {
                v[k] = s;
                k += 1;
            }
        }
        hull.push(make(v)?);
    }

    let eps = 1e-10 * scale;
    for (pi, p) in pts.iter().enumerate() {
        if simplex.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = (0..hull.len()).filter(|&f| hull[f].normal.dot(p) > hull[f].offset + eps).collect();
        if visible.is_empty() {
            continue;
        }
        // ridges seen once among the visible facets form the horizon
        let mut ridges: HashMap<[usize; DIM - 1], usize> = HashMap::new();
        for &f in &visible {
            let v = hull[f].verts;
            for skip in 0..DIM {
                let mut r = [0; DIM - 1];
                let mut k = 0;
                for (i, &x) in v.iter().enumerate() {
                    if i != skip {
                        r[k] = x;
                        k += 1;
                    }
                }
                r.sort_unstable();
                *ridges.entry(r).or_default() += 1;
            }
        }
        let mut horizon: Vec<[usize; DIM - 1]> = ridges.into_iter().filter(|(_, n)| *n == 1).map(|(r, _)| r).collect();
        horizon.sort_unstable();
        let mut keep = vec![true; hull.len()];
        for &f in &visible {
            keep[f] = false;
        }
        let mut i = 0;
        hull.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        for r in horizon {
            let verts: [usize; DIM] = std::array::from_fn(|i| if i < DIM - 1 { r[i] } else { pi });
            if let Some(f) = make(verts) {
                hull.push(f);
            }
        }
    }
    Some(hull.into_iter().map(|f| (f.normal, f.offset)).collect())
}

/// Radius of the largest origin-centered ball inside the hull; 0 when the
/// origin is not strictly interior or the hull is flat.
pub fn inscribed_radius(points: &[Point]) -> f64 {
    let Some(fs) = facets(points) else { return 0.0 };
    let r = fs.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    if r <= BOUNDARY_TOL * spread(points) {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross_polytope(r: f64) -> Vec<Point> {
        (0..DIM)
            .flat_map(|i| [Point::ith(i, r), Point::ith(i, -r)])
            .collect()
    }

    #[test]
    fn cross_polytope_radius() {
        // facets x1 +- ... +- x6 = r lie at r / sqrt(6)
        let got = inscribed_radius(&cross_polytope(2.0));
        assert!((got - 2.0 / 6f64.sqrt()).abs() < 1e-4, "{got}");
        assert_eq!(facets(&cross_polytope(1.0)).unwrap().len(), 64);
    }

    #[test]
    fn hypercube_radius() {
        let pts: Vec<Point> = (0..64u32)
            .map(|m| Point::from_fn(|i, _| if m >> i & 1 == 1 { 1.5 } else { -0.5 }))
            .collect();
        // nearest faces are at distance 0.5
        let r = inscribed_radius(&pts);
        assert!((r - 0.5).abs() < 1e-4, "{r}");
    }

    #[test]
    fn random_hull_contains_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..40).map(|_| Point::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        for (n, c) in facets(&pts).unwrap() {
            for p in &pts {
                assert!(n.dot(p) - c < 1e-4);
            }
        }
    }

    #[test]
    fn flat_or_offset_sets_give_zero() {
        let mut flat = cross_polytope(1.0);
        for p in &mut flat {
            p[5] = 0.0;
        }
        assert_eq!(inscribed_radius(&flat), 0.0);
        let shifted: Vec<Point> = cross_polytope(1.0).into_iter().map(|p| p + Point::ith(0, 3.0)).collect();
        assert_eq!(inscribed_radius(&shifted), 0.0);
    }
}
