use dexgrasp::fit::*;
use dexgrasp::geometry::{sample_surface, shapes, TriMesh, Vec3};
use dexgrasp::synth::partial_view;
use dexgrasp::Error;
use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use std::sync::OnceLock;

/// Smooth asymmetric blob, about 12 cm long.
fn blob() -> TriMesh {
    shapes::icosphere(1.0, 5)
        .map_vertices(|p| 3.0 * Vec3::new(2.0 * p.x, 1.2 * p.y + 0.3 * p.x * p.x, 0.8 * p.z + 0.2 * p.x))
        .unwrap()
}

/// A second, differently shaped asymmetric solid.
fn bean() -> TriMesh {
    shapes::icosphere(1.0, 5)
        .map_vertices(|p| 3.0 * Vec3::new(1.6 * p.x + 0.4 * p.y * p.y, 1.5 * p.y, 1.1 * p.z + 0.3 * p.x * p.y))
        .unwrap()
}

fn blob_template() -> &'static Template {
    static T: OnceLock<Template> = OnceLock::new();
    T.get_or_init(|| Template::new("blob", "blobs", &blob(), 2048, 1).unwrap())
}

fn bean_template() -> &'static Template {
    static T: OnceLock<Template> = OnceLock::new();
    T.get_or_init(|| Template::new("bean", "blobs", &bean(), 2048, 1).unwrap())
}

/// The similarity `world = s R p + t` applied to the cm-frame mesh, as an
/// object state of the normalized template.
fn truth_state(mesh: &TriMesh, s: f64, r: UnitQuaternion<f64>, t: Vec3) -> ObjectState {
    let n = Normalization::of(mesh).unwrap();
    let mut st = ObjectState::identity("truth");
    st.scale = s / n.scale;
    st.rotation = r;
    st.translation = s * (r * n.center) + t;
    st
}

fn place(mesh: &TriMesh, s: f64, r: UnitQuaternion<f64>, t: Vec3) -> TriMesh {
    mesh.transformed(&Isometry3::from_parts(Translation3::from(t), r), s)
}

struct Errors {
    scale: f64,
    degrees: f64,
    cm: f64,
}

fn errors(got: &ObjectState, truth: &ObjectState) -> Errors {
    Errors {
        scale: (got.scale / truth.scale - 1.0).abs(),
        degrees: got.rotation.angle_to(&truth.rotation).to_degrees(),
        cm: (got.translation - truth.translation).norm(),
    }
}

fn view() -> Vec3 {
    Vec3::new(0.3, 0.2, 1.0).normalize()
}

#[test]
fn icp_recovers_small_rigid_motion() {
    let r = UnitQuaternion::from_scaled_axis(Vec3::new(1.0, 2.0, 0.5).normalize() * 10f64.to_radians());
    let t = Vec3::new(0.6, -0.8, 0.0);
    let observed = sample_surface(&place(&blob(), 1.0, r, t), 3000, 9).unwrap().points;
    let res = icp_init(&observed, blob_template()).unwrap();
    let e = errors(&res.state, &truth_state(&blob(), 1.0, r, t));
    assert!(e.degrees < 1.0, "{} deg", e.degrees);
    assert!(e.cm < 0.1, "{} cm", e.cm);
    assert!(res.residual.is_finite() && !res.diverged);
}

#[test]
fn icp_aligns_a_half_view() {
    let r = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 10f64.to_radians());
    let t = Vec3::new(1.0, 0.0, 0.0);
    let cloud = partial_view(&place(&blob(), 1.0, r, t), 1500, &view(), 4).unwrap();
    let res = icp_init(&cloud.points, blob_template()).unwrap();
    let e = errors(&res.state, &truth_state(&blob(), 1.0, r, t));
    assert!(res.residual.is_finite());
    assert!(e.degrees < 5.0, "{} deg", e.degrees);
    assert!(e.cm < 0.5, "{} cm", e.cm);
}

#[test]
fn identity_observation_gives_identity_state() {
    let tpl = blob_template();
    let observed = tpl.samples.points.clone();
    let res = icp_init(&observed, tpl).unwrap();
    assert!(res.residual < 1e-9);
    assert!((res.state.scale - 1.0).abs() < 1e-9);
    assert!(res.state.rotation.angle() < 1e-9);
    assert!(res.state.translation.norm() < 1e-9);
}

fn recover_from_half_view(mesh: &TriMesh, tpl: &Template) -> (ObjectState, ObjectState) {
    let r = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), 15f64.to_radians());
    let t = Vec3::new(2.0, 0.0, 1.0);
    let cloud = partial_view(&place(mesh, 1.2, r, t), 1500, &view(), 5).unwrap();
    let normals = estimate_normals(&cloud.points, NORMAL_NEIGHBORS).unwrap();
    let init = icp_init(&cloud.points, tpl).unwrap().state;
    let got = fit_state(&cloud.points, &normals, tpl, &init, &FitOptions::default()).unwrap();
    (got, truth_state(mesh, 1.2, r, t))
}

#[test]
fn refinement_recovers_scaled_rotated_half_view() {
    let (got, truth) = recover_from_half_view(&blob(), blob_template());
    let e = errors(&got, &truth);
    assert!(e.scale < 0.02, "scale err {}", e.scale);
    assert!(e.degrees < 2.0, "{} deg", e.degrees);
    assert!(e.cm < 0.2, "{} cm", e.cm);
}

#[test]
fn refinement_loss_never_increases() {
    let tpl = blob_template();
    let r = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3);
    let cloud = partial_view(&place(&blob(), 0.9, r, Vec3::new(-1.0, 3.0, 0.5)), 1000, &view(), 6).unwrap();
    let init = icp_init(&cloud.points, tpl).unwrap().state;
    let (_, trace) = fit_state_traced(&cloud.points, &cloud.normals, tpl, &init, &FitOptions::default()).unwrap();
    assert!(trace.len() > 1);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn library_picks_the_generating_template() {
    let library = TemplateLibrary::new(vec![blob_template().clone(), bean_template().clone()]).unwrap();
    let r = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), 0.4);
    for (mesh, id) in [(bean(), "bean"), (blob(), "blob")] {
        let cloud = partial_view(&place(&mesh, 1.1, r, Vec3::new(0.0, 1.0, 2.0)), 1200, &view(), 7).unwrap();
        let (state, candidates) = recognize(&cloud.points, None, &library, &FitOptions::default()).unwrap();
        assert_eq!(state.template_id, id, "{candidates:?}");
        let other = candidates.iter().find(|c| c.template_id != id).unwrap();
        assert!(other.state.losses.total > state.losses.total);
    }
}

#[test]
fn fitting_is_rotation_equivariant() {
    let tpl = blob_template();
    let cloud = partial_view(&blob(), 1500, &view(), 8).unwrap();
    let rho = UnitQuaternion::from_scaled_axis(Vec3::new(-0.3, 1.0, 0.2).normalize() * 0.5);
    let fit = |pts: &[Vec3]| {
        let normals = estimate_normals(pts, NORMAL_NEIGHBORS).unwrap();
        let init = icp_init(pts, tpl).unwrap().state;
        fit_state(pts, &normals, tpl, &init, &FitOptions::default()).unwrap()
    };
    let a = fit(&cloud.points);
    let rotated: Vec<Vec3> = cloud.points.iter().map(|p| rho * p).collect();
    let b = fit(&rotated);
    let rel = b.rotation * a.rotation.inverse();
    assert!(rel.angle_to(&rho).to_degrees() < 2.0, "{}", rel.angle_to(&rho).to_degrees());
}

#[test]
fn degenerate_normals_stay_finite() {
    let tpl = blob_template();
    let pts = partial_view(&blob(), 300, &view(), 2).unwrap().points;
    let zeros = vec![Vec3::zeros(); pts.len()];
    let init = icp_init(&pts, tpl).unwrap().state;
    let st = fit_state(&pts, &zeros, tpl, &init, &FitOptions { iterations: 20, ..Default::default() }).unwrap();
    assert!(st.losses.total.is_finite());
    assert!(st.scale.is_finite() && st.translation.iter().all(|v| v.is_finite()));
}

#[test]
fn unexplained_cloud_is_unrecognized() {
    let library = TemplateLibrary::new(vec![blob_template().clone()]).unwrap();
    // two separated boxes look like nothing in the library
    let a = shapes::cuboid(Vec3::new(1.0, 4.0, 1.0));
    let b = a.transformed(&Isometry3::translation(9.0, 0.0, 0.0), 1.0);
    let pts = sample_surface(&TriMesh::merge(&[a, b]), 1500, 3).unwrap().points;
    match recognize(&pts, None, &library, &FitOptions::default()) {
        Err(Error::Unrecognized { best, ceiling }) => assert!(best > ceiling),
        other => panic!("expected an unrecognized object, got {other:?}"),
    }
}

#[test]
fn tiny_cloud_is_rejected() {
    let pts = vec![Vec3::zeros(); 10];
    assert!(icp_init(&pts, blob_template()).is_err());
}
