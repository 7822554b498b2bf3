//! Closing a hand onto an object: every flexing actuator advances toward the
//! palm until one of the links it moves touches the surface.

use super::kinematics::{forward_kinematics, Grasp, PosedHand};
use super::spec::HandSpec;
use crate::geometry::SignedDistance;
use crate::Result;

/// Bisection rounds used to land a touching actuator just outside the gap.
const BISECTION_ROUNDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosingOptions {
    /// Largest total advance per actuator (rad).
    pub max_delta: f64,
    /// Advance per round (rad).
    pub step: f64,
    /// A link touches when one of its samples is within this distance (cm).
    pub contact_gap: f64,
}

impl Default for ClosingOptions {
    fn default() -> Self {
        ClosingOptions {
            max_delta: 10f64.to_radians(),
            step: 0.5f64.to_radians(),
            contact_gap: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub grasp: Grasp,
    pub actuated: Vec<f64>,
    /// Per actuator: stopped by contact (as opposed to limits or budget).
    pub stopped_by_contact: Vec<bool>,
    /// Geometric links within the gap at the end.
    pub touching_links: Vec<usize>,
}

fn link_clearance(posed: &PosedHand, link: usize, object: &dyn SignedDistance) -> f64 {
    posed
        .link_samples(link)
        .iter()
        .map(|p| object.distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Closes `g` onto `object`. Actuators that do not flex stay put; the others
/// move one step per round in actuator order and stop at the first contact,
/// which is located by bisection so the link ends just outside the gap.
pub fn close_hand(spec: &HandSpec, g: &Grasp, object: &dyn SignedDistance, opts: &ClosingOptions) -> Result<Closure> {
    let c = &spec.coupling.matrix;
    let doa = spec.doa();
    let mut a = spec.actuated_from_q(&g.q);
    let wrist = g.wrist;
    let pose = |a: &[f64]| -> Result<Grasp> { Ok(Grasp::new(spec.apply_coupling(a)?.0, wrist)) };

    let direction: Vec<f64> = (0..doa)
        .map(|k| {
            let s: f64 = (0..spec.dof()).map(|j| c[(j, k)] * spec.joints[j].flex).sum();
            if s.abs() < 1e-12 {
                0.0
            } else {
                s.signum()
            }
        })
        .collect();
    let moved: Vec<Vec<usize>> = (0..doa)
        .map(|k| {
            spec.geometric_links()
                .into_iter()
                .filter(|&l| spec.joint_chain[l].iter().any(|&j| c[(j, k)] != 0.0))
                .collect()
        })
        .collect();
    let touches = |posed: &PosedHand, k: usize| moved[k].iter().any(|&l| link_clearance(posed, l, object) <= opts.contact_gap);

    let start = forward_kinematics(spec, &pose(&a)?)?;
    let mut active: Vec<bool> = (0..doa).map(|k| direction[k] != 0.0 && !touches(&start, k)).collect();
    let mut stopped: Vec<bool> = (0..doa).map(|k| direction[k] != 0.0 && !active[k]).collect();
    let origin = a.clone();
    let limits = &spec.coupling.actuator_limits;

    while active.iter().any(|&x| x) {
        for k in 0..doa {
            if !active[k] {
                continue;
            }
            let target = origin[k] + direction[k] * opts.max_delta;
            let next = (a[k] + direction[k] * opts.step).clamp(limits[k][0], limits[k][1]);
            let next = if direction[k] > 0.0 { next.min(target) } else { next.max(target) };
            if next == a[k] {
                active[k] = false;
                continue;
            }
            let mut trial = a.clone();
            trial[k] = next;
            if touches(&forward_kinematics(spec, &pose(&trial)?)?, k) {
                let (mut free, mut hit) = (a[k], next);
                for _ in 0..BISECTION_ROUNDS {
                    trial[k] = 0.5 * (free + hit);
                    if touches(&forward_kinematics(spec, &pose(&trial)?)?, k) {
                        hit = trial[k];
                    } else {
                        free = trial[k];
                    }
                }
                a[k] = free;
                active[k] = false;
                stopped[k] = true;
            } else {
                a[k] = next;
            }
        }
    }

    let grasp = pose(&a)?;
    let posed = forward_kinematics(spec, &grasp)?;
    // "touching" at the end allows for the bisection tolerance
    let slack = opts.step / (1u64 << BISECTION_ROUNDS) as f64 * 25.0;
    let touching_links = spec
        .geometric_links()
        .into_iter()
        .filter(|&l| link_clearance(&posed, l, object) <= opts.contact_gap + slack)
        .collect();
    Ok(Closure {
        grasp,
        actuated: a,
        stopped_by_contact: stopped,
        touching_links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MeshSdf, Vec3};
    use crate::geometry::shapes;
    use crate::hand::builtin;
    use nalgebra::Isometry3;

    #[test]
    fn gripper_closes_onto_a_block_without_penetrating() {
        let spec = builtin::gripper();
        // block between the fingers
        let mesh = shapes::cuboid(Vec3::new(0.5, 1.5, 0.5)).transformed(&Isometry3::translation(0.0, 5.0, 0.0), 1.0);
        let sdf = MeshSdf::new(mesh);
        let opts = ClosingOptions {
            max_delta: 2.0,
            ..Default::default()
        };
        let out = close_hand(&spec, &Grasp::zero(&spec), &sdf, &opts).unwrap();
        let posed = forward_kinematics(&spec, &out.grasp).unwrap();
        let clearance = posed.samples.iter().map(|p| sdf.distance(p)).fold(f64::INFINITY, f64::min);
        assert!(clearance > opts.contact_gap - 1e-9, "{clearance}");
        assert!(clearance < opts.contact_gap + 0.01, "{clearance}");
    }

    #[test]
    fn far_object_only_moves_by_budget() {
        let spec = builtin::gripper();
        let sdf = MeshSdf::new(shapes::icosphere(1.0, 2).transformed(&Isometry3::translation(0.0, 50.0, 0.0), 1.0));
        let out = close_hand(&spec, &Grasp::zero(&spec), &sdf, &ClosingOptions::default()).unwrap();
        assert!(out.touching_links.is_empty());
        assert!(out.stopped_by_contact.iter().all(|s| !s));
        for v in &out.actuated {
            assert!((v.abs() - 10f64.to_radians()).abs() < 1e-12);
        }
    }
}
