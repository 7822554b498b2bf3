use dexgrasp::geometry::Vec3;
use dexgrasp::hand::{builtin, forward_kinematics, Grasp, HandSpec};
use nalgebra::{Isometry3, Matrix3, Matrix4, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Homogeneous matrix of a rotation about `axis` by `angle` (Rodrigues).
fn rot4(axis: &Vec3, angle: f64) -> Matrix4<f64> {
    let k = Matrix3::new(0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0);
    let r = Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k;
    r.to_homogeneous()
}

/// Independent chain of 4x4 products.
fn chain_oracle(spec: &HandSpec, g: &Grasp) -> Vec<Matrix4<f64>> {
    let mut out: Vec<Matrix4<f64>> = Vec::new();
    for l in &spec.links {
        let parent = match l.parent {
            Some(p) => out[p],
            None => g.wrist.to_homogeneous(),
        };
        let mut m = parent * l.origin.to_homogeneous();
        if let Some(j) = l.joint {
            m *= rot4(&spec.joints[j].axis, g.q[j]);
        }
        out.push(m);
    }
    out
}

fn random_grasp(spec: &HandSpec, rng: &mut ChaCha8Rng) -> Grasp {
    let q = spec
        .joints
        .iter()
        .map(|j| rng.random_range(j.lower..=j.upper))
        .collect();
    let t = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    let w = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Grasp::new(q, Isometry3::new(t, w))
}

#[test]
fn anchors_match_matrix_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in builtin::all() {
        for _ in 0..20 {
            let g = random_grasp(&spec, &mut rng);
            let posed = forward_kinematics(&spec, &g).unwrap();
            let mats = chain_oracle(&spec, &g);
            for (a, world) in spec.anchors.iter().zip(&posed.anchors) {
                let p = mats[a.link] * Vector4::new(a.position.x, a.position.y, a.position.z, 1.0);
                assert!((world - p.xyz()).norm() < 1e-8, "{} anchor {}", spec.name, a.name);
            }
            for (i, m) in mats.iter().enumerate() {
                assert!((posed.link_poses[i].to_homogeneous() - m).abs().max() < 1e-8);
            }
        }
    }
}

fn fd_check(spec: &HandSpec, g: &Grasp, link: usize, local: &Vec3) -> f64 {
    let h = 1e-5;
    let posed = forward_kinematics(spec, g).unwrap();
    let jac = posed.local_point_jacobian(link, local);
    let world = |g: &Grasp| {
        let p = forward_kinematics(spec, g).unwrap();
        p.link_poses[link].transform_point(&(*local).into()).coords
    };
    let dof = spec.dof();
    let mut worst: f64 = 0.0;
    for c in 0..dof + 6 {
        let (mut gp, mut gm) = (g.clone(), g.clone());
        if c < dof {
            gp.q[c] += h;
            gm.q[c] -= h;
        } else {
            let mut e = Vec3::zeros();
            e[(c - dof) % 3] = h;
            if c < dof + 3 {
                gp.wrist = g.moved(&e, &Vec3::zeros());
                gm.wrist = g.moved(&-e, &Vec3::zeros());
            } else {
                gp.wrist = g.moved(&Vec3::zeros(), &e);
                gm.wrist = g.moved(&Vec3::zeros(), &-e);
            }
        }
        let fd = (world(&gp) - world(&gm)) / (2.0 * h);
        let an = Vec3::new(jac[(0, c)], jac[(1, c)], jac[(2, c)]);
        let rel = (fd - an).norm() / an.norm().max(1e-2);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn jacobian_matches_finite_differences_on_shipped_hands() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in builtin::all() {
        for _ in 0..5 {
            let g = random_grasp(&spec, &mut rng);
            for (k, a) in spec.anchors.iter().enumerate().step_by(3) {
                let err = fd_check(&spec, &g, a.link, &a.position);
                assert!(err < 1e-4, "{} anchor {k}: {err}", spec.name);
            }
        }
    }
}

#[test]
fn wrist_premultiplication_is_equivariant() {
    let spec = builtin::five_finger();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_grasp(&spec, &mut rng);
    let t = Isometry3::new(Vec3::new(3.0, -1.0, 2.0), Vec3::new(0.4, 0.1, -0.7));
    let a = forward_kinematics(&spec, &g).unwrap();
    let b = forward_kinematics(&spec, &Grasp::new(g.q.clone(), t * g.wrist)).unwrap();
    for (pa, pb) in a.samples.iter().zip(&b.samples) {
        let moved = t.transform_point(&(*pa).into()).coords;
        assert!((moved - pb).norm() < 1e-9);
    }
}

fn random_chain(seed: u64, n: usize) -> HandSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = vec![r#"{"name":"l0","parent":null,"primitives":[{"shape":"sphere","radius":0.5}],"samples":4}"#.to_string()];
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let mut axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        axis /= axis.norm().max(1e-3);
        let t = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        links.push(format!(
            r#"{{"name":"l{i}","parent":"l{parent}","origin":{{"translation":{t:?}}},
               "joint":{{"name":"j{i}","axis":[{},{},{}],"limits":[-2,2]}},
               "primitives":[{{"shape":"capsule","radius":0.3,"half_length":1.0}}],"samples":4}}"#,
            axis.x, axis.y, axis.z
        ));
    }
    let text = format!(r#"{{"schema":"handspec/1","name":"random","links":[{}]}}"#, links.join(","));
    HandSpec::from_json(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn jacobian_matches_fd_on_random_chains(seed in 0u64..10_000, n in 2usize..7, px in -2.0..2.0f64, py in -2.0..2.0f64) {
        let spec = random_chain(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let g = random_grasp(&spec, &mut rng);
        let err = fd_check(&spec, &g, n - 1, &Vec3::new(px, py, 0.5));
        prop_assert!(err < 1e-4, "err {}", err);
    }

    #[test]
    fn anchors_are_continuous(seed in 0u64..10_000) {
        let spec = builtin::four_finger();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grasp(&spec, &mut rng);
        let mut g2 = g.clone();
        for v in g2.q.iter_mut() { *v += 1e-6; }
        let a = forward_kinematics(&spec, &g).unwrap();
        let b = forward_kinematics(&spec, &g2).unwrap();
        for (x, y) in a.anchors.iter().zip(&b.anchors) {
            prop_assert!((x - y).norm() < 1e-4);
        }
    }
}
