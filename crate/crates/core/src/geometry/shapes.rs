//! Watertight, outward-oriented tessellations of simple solids.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::mesh::TriMesh;
use super::Vec3;

fn build(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("generated mesh is valid")
}

/// Axis-aligned box centered at the origin.
pub fn cuboid(half: Vec3) -> TriMesh {
    let v = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            )
        })
        .collect();
    let f = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    build(v, f)
}

/// Geodesic sphere from a subdivided icosahedron.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nf = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let mut m = [0; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    v.push(((v[a] + v[b]) * 0.5).normalize());
                    v.len() - 1
                });
            }
            nf.push([tri[0], m[0], m[2]]);
            nf.push([tri[1], m[1], m[0]]);
            nf.push([tri[2], m[2], m[1]]);
            nf.push([m[0], m[1], m[2]]);
        }
        f = nf;
    }
    build(v.into_iter().map(|p| p * radius).collect(), f)
}

/// Capsule along z: a cylinder of half-length `half_length` capped by
/// hemispheres. `half_length = 0` gives a UV sphere.
pub fn capsule(radius: f64, half_length: f64, segments: usize, rings: usize) -> TriMesh {
    let rings = rings.max(2) + rings % 2; // even, so the equator is a ring
    let segs = segments.max(3);
    let mut v = vec![Vec3::new(0.0, 0.0, radius + half_length)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        let (s, c) = theta.sin_cos();
        let shift = if r < rings / 2 {
            half_length
        } else if r > rings / 2 {
            -half_length
        } else {
            // equator: duplicate ring, the upper copy is shifted up
            half_length
        };
        for k in 0..segs {
            let phi = 2.0 * PI * k as f64 / segs as f64;
            v.push(Vec3::new(radius * s * phi.cos(), radius * s * phi.sin(), radius * c + shift));
        }
        if r == rings / 2 && half_length > 0.0 {
            for k in 0..segs {
                let phi = 2.0 * PI * k as f64 / segs as f64;
                v.push(Vec3::new(radius * s * phi.cos(), radius * s * phi.sin(), -half_length));
            }
        }
    }
    v.push(Vec3::new(0.0, 0.0, -radius - half_length));
    let bottom = v.len() - 1;
    let ring_count = if half_length > 0.0 { rings } else { rings - 1 };
    let ring_start = |r: usize| 1 + r * segs;
    let mut f = Vec::new();
    for k in 0..segs {
        let k1 = (k + 1) % segs;
        f.push([0, ring_start(0) + k, ring_start(0) + k1]);
    }
    for r in 0..ring_count - 1 {
        for k in 0..segs {
            let k1 = (k + 1) % segs;
            let (a, b) = (ring_start(r) + k, ring_start(r) + k1);
            let (c, d) = (ring_start(r + 1) + k, ring_start(r + 1) + k1);
            f.push([a, c, d]);
            f.push([a, d, b]);
        }
    }
    let last = ring_start(ring_count - 1);
    for k in 0..segs {
        let k1 = (k + 1) % segs;
        f.push([bottom, last + k1, last + k]);
    }
    build(v, f)
}

/// Closed cylinder along z centered at the origin.
pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriMesh {
    lathe(
        &[
            (0.0, -half_height),
            (radius, -half_height),
            (radius, half_height),
            (0.0, half_height),
        ],
        segments,
    )
}

/// Surface of revolution about z. `profile` lists `(radius, z)` pairs from
/// bottom to top; the first and last radius must be 0 (closed ends).
pub fn lathe(profile: &[(f64, f64)], segments: usize) -> TriMesh {
    assert!(profile.len() >= 3);
    assert!(profile[0].0 == 0.0 && profile[profile.len() - 1].0 == 0.0);
    let segs = segments.max(3);
    let mut v = vec![Vec3::new(0.0, 0.0, profile[0].1)];
    let inner = &profile[1..profile.len() - 1];
    for &(r, z) in inner {
        for k in 0..segs {
            let phi = 2.0 * PI * k as f64 / segs as f64;
            v.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    v.push(Vec3::new(0.0, 0.0, profile[profile.len() - 1].1));
    let top = v.len() - 1;
    let ring = |i: usize| 1 + i * segs;
    let mut f = Vec::new();
    for k in 0..segs {
        let k1 = (k + 1) % segs;
        f.push([0, ring(0) + k1, ring(0) + k]);
    }
    for i in 0..inner.len() - 1 {
        for k in 0..segs {
            let k1 = (k + 1) % segs;
            let (a, b) = (ring(i) + k, ring(i) + k1);
            let (c, d) = (ring(i + 1) + k, ring(i + 1) + k1);
            f.push([a, b, d]);
            f.push([a, d, c]);
        }
    }
    let last = ring(inner.len() - 1);
    for k in 0..segs {
        let k1 = (k + 1) % segs;
        f.push([top, last + k, last + k1]);
    }
    build(v, f)
}
