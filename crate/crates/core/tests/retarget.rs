use dexgrasp::hand::{builtin, HandSpec};
use dexgrasp::retarget::{retarget, RetargetOptions, RetargetProblem, RetargetWeights};
use nalgebra::Isometry3;
use proptest::prelude::*;

fn planar_finger(name: &str, l1: f64, l2: f64) -> HandSpec {
    let text = format!(
        r#"{{"schema":"handspec/1","name":"{name}","links":[
          {{"name":"palm","parent":null}},
          {{"name":"prox","parent":"palm","joint":{{"name":"mcp","axis":[1,0,0],"limits":[0,2.5]}}}},
          {{"name":"dist","parent":"prox","origin":{{"translation":[0,{l1},0]}},
            "joint":{{"name":"pip","axis":[1,0,0],"limits":[0,2.5]}}}}],
          "fingertips":[{{"name":"tip","link":"dist","point":[0,{l2},0]}}]}}"#
    );
    HandSpec::from_json(&text).unwrap()
}

/// Elbow-down inverse kinematics of a planar two-link chain in the y-z plane.
fn planar_ik(l1: f64, l2: f64, y: f64, z: f64) -> (f64, f64) {
    let c2 = (y * y + z * z - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    let t2 = c2.clamp(-1.0, 1.0).acos();
    let t1 = z.atan2(y) - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
    (t1, t2)
}

#[test]
fn task_only_reaches_analytic_solution() {
    let human = planar_finger("h", 4.0, 3.0);
    let robot = planar_finger("r", 3.5, 3.5);
    let qh = [0.5, 0.7];
    let y = 4.0 * 0.5f64.cos() + 3.0 * 1.2f64.cos();
    let z = 4.0 * 0.5f64.sin() + 3.0 * 1.2f64.sin();
    let (t1, t2) = planar_ik(3.5, 3.5, y, z);
    let w = RetargetWeights { task: 1.0, joint: 0.0 };
    let p = RetargetProblem::new(&human, &qh, &robot, w).unwrap();
    let r = retarget(&p, Isometry3::identity(), &RetargetOptions::default()).unwrap();
    assert!((r.grasp.q[0] - t1).abs() < 1e-3, "{:?} vs {t1} {t2}", r.grasp.q);
    assert!((r.grasp.q[1] - t2).abs() < 1e-3, "{:?} vs {t1} {t2}", r.grasp.q);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn never_worse_than_direct_mapping(frac in proptest::collection::vec(0.0..1.0f64, 22), hand in 0usize..3) {
        let human = builtin::human();
        let robot = [builtin::five_finger(), builtin::four_finger(), builtin::gripper()][hand].clone();
        let q: Vec<f64> = human.joints.iter().zip(&frac).map(|(j, f)| j.lower + f * (j.upper - j.lower)).collect();
        let p = RetargetProblem::new(&human, &q, &robot, RetargetWeights::default()).unwrap();
        let r = retarget(&p, Isometry3::identity(), &RetargetOptions::default()).unwrap();
        prop_assert!(robot.within_limits(&r.grasp.q));
        prop_assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        let start = robot.apply_coupling(&robot.actuated_from_q(&p.direct_mapping())).unwrap().0;
        prop_assert!(r.energy() <= p.energy(&start).unwrap());
        let again = retarget(&p, Isometry3::identity(), &RetargetOptions::default()).unwrap();
        prop_assert_eq!(again.grasp.q, r.grasp.q);
    }
}
