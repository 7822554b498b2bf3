use dexgrasp::contact::*;
use dexgrasp::geometry::{sample_surface, shapes, MeshSdf, SurfaceSamples, Vec3};
use dexgrasp::hand::builtin;
use dexgrasp::synth::closing_demonstration;
use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn random_points(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)))
        .collect()
}

#[test]
fn digitization_profile() {
    assert_eq!(digitize(0.0), 1.0);
    assert!((digitize(1.0) - 0.2384).abs() < 1e-4);
    let grid: Vec<f64> = (0..100).map(|i| -1.0 + 0.1 * i as f64).collect();
    for w in grid.windows(2) {
        assert!(digitize(w[1]) <= digitize(w[0]));
    }
    assert!(grid.iter().all(|&d| (0.0..=1.0).contains(&digitize(d))));
}

#[test]
fn partition_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let points = random_points(&mut rng, 300, 5.0);
        let contact: Vec<usize> = (0..points.len()).filter(|i| i % 3 != 0).collect();
        let segments: Vec<Vec<Vec3>> = (0..7)
            .map(|s| {
                let n = if s == 4 { 0 } else { rng.random_range(1..40) };
                random_points(&mut rng, n, 6.0)
            })
            .collect();
        let got = knuckle_partition(&points, &contact, &segments);
        let mut want = vec![Vec::new(); segments.len()];
        for &i in &contact {
            let mut best = (usize::MAX, f64::INFINITY);
            for (s, seg) in segments.iter().enumerate() {
                for q in seg {
                    let d = (points[i] - q).norm_squared();
                    if d < best.1 {
                        best = (s, d);
                    }
                }
            }
            want[best.0].push(i);
        }
        assert_eq!(got, want);
    }
}

#[test]
fn anchors_match_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let points = random_points(&mut rng, 400, 5.0);
    let anchors = random_points(&mut rng, 41, 5.0);
    let contact: Vec<usize> = (0..points.len()).step_by(2).collect();
    let got = anchor_assignment(&points, &contact, &anchors).unwrap();
    for &i in &contact {
        let (k, d) = anchors
            .iter()
            .enumerate()
            .map(|(k, a)| (k, (points[i] - a).norm_squared()))
            .fold((usize::MAX, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        let pos = got[k].points.iter().position(|&p| p == i).expect("assigned to the nearest anchor");
        assert!((got[k].delta[pos] - d).abs() < 1e-12);
    }
    assert_eq!(got.iter().map(|r| r.points.len()).sum::<usize>(), contact.len());
}

#[test]
fn far_hand_gives_vanishing_map() {
    let object = MeshSdf::new(shapes::cuboid(Vec3::repeat(1.0)));
    // segments at least 5 cm from the cube
    let segments = vec![
        vec![Vec3::new(6.0, 0.0, 0.0), Vec3::new(7.0, 0.0, 0.0)],
        vec![Vec3::new(0.0, 0.0, -6.5)],
    ];
    let (map, ranges) = hand_contact_map(&segments, &object);
    assert_eq!(map.omega.len(), 3);
    assert_eq!(ranges, vec![(0, 2), (2, 3)]);
    assert!(map.omega.iter().all(|&w| w < 1e-4));
    assert!(map.contact.is_empty());
    // a sample on the surface and one inside both read as full contact
    let (touch, _) = hand_contact_map(&[vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)]], &object);
    assert_eq!(touch.omega, vec![1.0, 1.0]);
}

struct Fixture {
    demo: Demonstration,
    samples: SurfaceSamples,
}

fn cylinder_fixture() -> Fixture {
    // intermediate rings so the side wall has vertices near the grasp height
    let profile: Vec<(f64, f64)> = std::iter::once((0.0, -6.0))
        .chain((0..=12).map(|k| (3.0, -6.0 + k as f64)))
        .chain(std::iter::once((0.0, 6.0)))
        .collect();
    let object = shapes::lathe(&profile, 48);
    let demo = closing_demonstration(&builtin::human(), &object, 0.0).unwrap();
    let samples = sample_surface(&object, 2000, 2).unwrap();
    Fixture { demo, samples }
}

#[test]
fn cylinder_demo_contact_structure() {
    let f = cylinder_fixture();
    let skeleton = builtin::human();
    let b = extract_contacts(&f.demo, &skeleton, &f.samples, 3).unwrap();
    b.validate(f.samples.len()).unwrap();
    assert!(!b.object_contact.is_empty());
    // partition covers the contact set exactly, without overlap
    let mut union: Vec<usize> = b.segments.iter().flat_map(|s| s.region.iter().copied()).collect();
    union.sort_unstable();
    assert_eq!(union, b.object_contact);
    let contact: HashSet<usize> = b.object_contact.iter().copied().collect();
    assert!(b.anchors.iter().all(|a| a.region.points.iter().all(|i| contact.contains(i))));
    assert!(b.active_anchors() > 0);
    assert!(b.object_omega.iter().all(|w| (0.0..=1.0).contains(w)));
    let touching = b.segments.iter().filter(|s| !s.region.is_empty()).count();
    assert!(touching >= 4, "{touching} segments touch");
}

fn moved_fixture(f: &Fixture, iso: &Isometry3<f64>) -> Fixture {
    let demo = Demonstration {
        object: f.demo.object.transformed(iso, 1.0),
        segments: f.demo.segments.iter().map(|(n, m)| (n.clone(), m.transformed(iso, 1.0))).collect(),
        q: f.demo.q.clone(),
        wrist: iso * f.demo.wrist,
    };
    let samples = SurfaceSamples {
        points: f.samples.points.iter().map(|p| (iso * nalgebra::Point3::from(*p)).coords).collect(),
        normals: f.samples.normals.iter().map(|n| iso.rotation * n).collect(),
        face_ids: f.samples.face_ids.clone(),
    };
    Fixture { demo, samples }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]
    #[test]
    fn extraction_is_rigid_invariant(ax in -2.0f64..2.0, ay in -2.0f64..2.0, az in -2.0f64..2.0,
                                     tx in -20.0f64..20.0, ty in -20.0f64..20.0, tz in -20.0f64..20.0) {
        let f = cylinder_fixture();
        let skeleton = builtin::human();
        let iso = Isometry3::from_parts(Translation3::new(tx, ty, tz), UnitQuaternion::from_scaled_axis(Vec3::new(ax, ay, az)));
        let a = extract_contacts(&f.demo, &skeleton, &f.samples, 3).unwrap();
        let m = moved_fixture(&f, &iso);
        let b = extract_contacts(&m.demo, &skeleton, &m.samples, 3).unwrap();
        prop_assert_eq!(&a.object_contact, &b.object_contact);
        for (x, y) in a.segments.iter().zip(&b.segments) {
            prop_assert_eq!(&x.region, &y.region);
        }
        for (x, y) in a.anchors.iter().zip(&b.anchors) {
            prop_assert_eq!(&x.region.points, &y.region.points);
        }
        for (x, y) in a.object_omega.iter().zip(&b.object_omega) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
