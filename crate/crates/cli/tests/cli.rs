use std::path::Path;
use std::process::{Command, Output};

fn dexgrasp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexgrasp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUICK: &[&str] = &["--seed", "3", "--restarts", "1", "--steps", "20", "--samples", "600"];

fn fixtures(dir: &Path) {
    let o = dexgrasp(dir, &["make-fixtures", "--out", "fx", "--kinds", "bar", "--instances", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn contacts_from_demo_and_from_a_far_hand() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    let o = dexgrasp(tmp.path(), &["contacts", "--demo", "fx/bar/demo.json", "--out", "c.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = String::from_utf8_lossy(&o.stdout);
    let n: usize = summary.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(n > 0, "{summary}");

    // move the wrist 50 cm away
    let mut demo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fx/bar/demo.json")).unwrap()).unwrap();
    let x = demo["wrist"]["translation"][0].as_f64().unwrap();
    demo["wrist"]["translation"][0] = (x + 50.0).into();
    std::fs::write(tmp.path().join("fx/bar/far.json"), demo.to_string()).unwrap();
    let o = dexgrasp(tmp.path(), &["contacts", "--demo", "fx/bar/far.json", "--out", "far.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("contact points: 0 "));
    assert!(stderr(&o).contains("does not touch"));
}

#[test]
fn malformed_inputs_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    std::fs::write(tmp.path().join("bad.obj"), "v 0 0 0\nf 1 2 9\n").unwrap();
    std::fs::write(tmp.path().join("empty.xyz"), "").unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "bogus = 1\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["eval", "--grasp", "g.json", "--object", "bad.obj"],
        vec!["fit", "--cloud", "empty.xyz", "--library", "fx/bar", "--out", "s.json"],
        vec!["contacts", "--demo", "missing.json", "--out", "c.json"],
        vec!["--config", "bad.toml", "make-fixtures", "--out", "x"],
        vec!["make-fixtures", "--out", "x", "--kinds", "teapot"],
        vec!["synthesize", "--category", "fx/bar", "--demo", "fx/bar/demo.json", "--hand", "no_such_hand", "--out", "o"],
        vec!["no-such-command"],
    ];
    for args in cases {
        let o = dexgrasp(tmp.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn synthesize_eval_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    // one broken instance among three still exits 0
    std::fs::write(tmp.path().join("fx/bar/bar_02.obj"), "not a mesh\n").unwrap();
    let mut args = vec![
        "synthesize", "--category", "fx/bar", "--demo", "fx/bar/demo.json", "--hand", "two_finger_gripper", "--out", "run",
    ];
    args.extend_from_slice(QUICK);
    let o = dexgrasp(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("2 of 3"));
    assert!(stderr(&o).contains("bar_02"));

    // ten grasps, ten rows, in argument order
    let grasps: Vec<String> = (0..10).map(|i| format!("run/bar_0{}/grasp.json", i % 2)).collect();
    let mut eval: Vec<&str> = vec!["eval", "--object", "fx/bar/bar_00.obj", "--grasp"];
    eval.extend(grasps.iter().map(String::as_str));
    let o = dexgrasp(tmp.path(), &eval);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8_lossy(&o.stdout).into_owned();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for (r, g) in rows.iter().zip(&grasps) {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[1], g);
        // no truth bundle: functionality columns empty, the rest filled
        assert_eq!((cols[7], cols[8]), ("", ""));
        assert!(!cols[2].is_empty() && !cols[3].is_empty());
    }
    let again = dexgrasp(tmp.path(), &eval);
    assert_eq!(again.stdout, o.stdout);

    let o = dexgrasp(
        tmp.path(),
        &["eval", "--object", "fx/bar/bar_00.obj", "--grasp", "run/bar_00/grasp.json", "--truth", "run/bar_00/contacts.json", "--out", "m.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = std::fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    let cols: Vec<String> = m.lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert!(!cols[7].is_empty() && !cols[8].is_empty());

    // flip the feasibility flag and export
    let g = std::fs::read_to_string(tmp.path().join("run/bar_00/grasp.json")).unwrap();
    let flagged = g.replace("\"feasible\": true", "\"feasible\": false");
    std::fs::write(tmp.path().join("flagged.json"), &flagged).unwrap();
    let original = g.contains("\"feasible\": false");
    for (grasp, infeasible) in [("run/bar_00/grasp.json", original), ("flagged.json", true)] {
        let o = dexgrasp(tmp.path(), &["export", "--grasp", grasp, "--object", "fx/bar/bar_00.obj", "--out", "scene.ply"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ply = std::fs::read_to_string(tmp.path().join("scene.ply")).unwrap();
        let header: Vec<&str> = ply.lines().take_while(|l| *l != "end_header").collect();
        assert!(header.contains(&"property int label"));
        assert_eq!(header.iter().any(|l| l.starts_with("comment INFEASIBLE")), infeasible);
    }

    // inputs are left alone
    assert_eq!(std::fs::read_to_string(tmp.path().join("run/bar_00/grasp.json")).unwrap(), g);
}

#[test]
fn fit_writes_an_object_state() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    let o = dexgrasp(
        tmp.path(),
        &["fit", "--cloud", "fx/bar/bar_01_view.ply", "--library", "fx/bar", "--out", "state.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = std::fs::read_to_string(tmp.path().join("state.json")).unwrap();
    assert!(s.contains("\"schema\": \"objstate/1\""));
    assert!(s.contains("\"template_id\": \"bar\""));
}
