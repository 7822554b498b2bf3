//! Static 3-D k-d tree with deterministic tie-breaking.
//!
//! Among equidistant candidates the lowest point index wins, which makes the
//! tree agree exactly with an exhaustive scan that keeps the first minimum.

use std::collections::BinaryHeap;

use super::Vec3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    // permutation of point indices; node `mid` of a range splits on `axis[mid]`
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        build(points, &mut order, &mut axis, 0, points.len());
        KdTree {
            points: points.to_vec(),
            order,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index of the nearest point and its squared distance.
    ///
    /// Panics on an empty tree.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on an empty k-d tree");
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(q, 0, self.points.len(), &mut best);
        best
    }

    fn nearest_rec(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = sq_dist(p, q);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.nearest_rec(q, far.0, far.1, best);
        }
    }

    /// The `k` nearest points, closest first, as `(index, squared distance)`.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(q, k, 0, self.points.len(), &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.idx, c.d)).collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, q: &Vec3, k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<Cand>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let cand = Cand { d: sq_dist(p, q), idx };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(q, k, near.0, near.1, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().d {
            self.knn_rec(q, k, far.0, far.1, heap);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d: f64,
    idx: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d
            .partial_cmp(&other.d)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

#[inline]
fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[Vec3], order: &mut [usize], axis: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for &i in &order[lo..hi] {
        min = min.inf(&points[i]);
        max = max.sup(&points[i]);
    }
    let ext = max - min;
    let ax = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (lo + hi) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a][ax].partial_cmp(&points[b][ax]).unwrap().then(a.cmp(&b))
    });
    axis[mid] = ax as u8;
    build(points, order, axis, lo, mid);
    build(points, order, axis, mid + 1, hi);
}

/// Exhaustive nearest neighbor, keeping the first minimum.
pub fn brute_force_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
