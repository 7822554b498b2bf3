//! Bounding-volume hierarchy over triangles for closest-point and ray queries.

use super::mesh::{Aabb, TriMesh};
use super::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ClosestHit {
    pub dist_sq: f64,
    pub point: Vec3,
    pub face: usize,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.faces().len();
        let mut order: Vec<usize> = (0..n).collect();
        let centroids: Vec<Vec3> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            build_rec(mesh, &centroids, &mut order, 0, n, &mut nodes);
        }
        Bvh { nodes, order }
    }

    pub fn closest(&self, mesh: &TriMesh, p: &Vec3) -> Option<ClosestHit> {
        self.closest_within(mesh, p, f64::INFINITY)
    }

    /// Closest hit no farther than `sqrt(bound_sq)`; a tight bound prunes
    /// most of the tree. `None` if nothing lies within the bound.
    pub fn closest_within(&self, mesh: &TriMesh, p: &Vec3, bound_sq: f64) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = ClosestHit {
            dist_sq: bound_sq,
            point: *p,
            face: usize::MAX,
        };
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().distance_sq(p) >= best.dist_sq {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let [a, b, c] = mesh.triangle(f);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d = (q - p).norm_squared();
                        if d < best.dist_sq || (d == best.dist_sq && f < best.face) {
                            best = ClosestHit { dist_sq: d, point: q, face: f };
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_sq(p);
                    let dr = self.nodes[right].bounds().distance_sq(p);
                    // visit the nearer child first
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        (best.face != usize::MAX).then_some(best)
    }

    /// Parameters `t > 0` of every crossing of the ray `origin + t * dir`.
    pub fn ray_hits(&self, mesh: &TriMesh, origin: &Vec3, dir: &Vec3, out: &mut Vec<f64>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !ray_box(origin, &inv, node.bounds()) {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let [a, b, c] = mesh.triangle(f);
                        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                            out.push(t);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
    }
}

fn build_rec(
    mesh: &TriMesh,
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        for v in mesh.triangle(f) {
            bounds.grow(&v);
        }
        cbounds.grow(&centroids[f]);
    }
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let ext = cbounds.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_rec(mesh, centroids, order, start, mid, nodes);
    let right = build_rec(mesh, centroids, order, mid, end, nodes);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

fn ray_box(origin: &Vec3, inv: &Vec3, b: &Aabb) -> bool {
    let mut tmin: f64 = 0.0;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        let t1 = (b.min[i] - origin[i]) * inv[i];
        let t2 = (b.max[i] - origin[i]) * inv[i];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

/// Möller–Trumbore; returns `t > 0` for a proper crossing.
pub(crate) fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub(crate) fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
