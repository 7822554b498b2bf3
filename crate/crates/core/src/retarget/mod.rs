//! Human-to-robot joint mapping: minimizes fingertip task-vector error plus
//! direct joint error under the robot's limits.

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::hand::{forward_kinematics, Grasp, HandSpec};
use crate::geometry::Vec3;
use crate::{Error, Result};

/// Smoothing width for the absolute values in the objective.
const SMOOTH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetWeights {
    /// Weight of fingertip task-vector error.
    pub task: f64,
    /// Weight of direct joint-angle error.
    pub joint: f64,
}

impl Default for RetargetWeights {
    fn default() -> Self {
        RetargetWeights {
            task: 1.0,
            joint: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetOptions {
    pub max_iterations: usize,
    /// Stop after this many consecutive iterations improving by less than `tolerance`.
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        RetargetOptions {
            max_iterations: 500,
            patience: 10,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetargetResult {
    pub grasp: Grasp,
    pub actuated: Vec<f64>,
    /// Objective after initialization and after every accepted step.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
}

impl RetargetResult {
    pub fn energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace is never empty")
    }
}

/// Pairing of robot quantities with the human skeleton.
#[derive(Debug, Clone)]
pub struct RetargetProblem<'a> {
    pub human: &'a HandSpec,
    pub human_q: &'a [f64],
    pub robot: &'a HandSpec,
    pub weights: RetargetWeights,
    /// (robot fingertip, human task point in the wrist frame)
    targets: Vec<(usize, Vec3)>,
    /// (robot joint, human joint angle)
    joint_targets: Vec<(usize, f64)>,
}

impl<'a> RetargetProblem<'a> {
    /// Resolves fingertip and joint correspondences. Robot joints map to the
    /// human joint they name, or to a human joint with the same name.
    pub fn new(
        human: &'a HandSpec,
        human_q: &'a [f64],
        robot: &'a HandSpec,
        weights: RetargetWeights,
    ) -> Result<Self> {
        if weights.task < 0.0 || weights.joint < 0.0 {
            return Err(Error::Config("retarget weights must be non-negative".into()));
        }
        let posed = forward_kinematics(human, &Grasp::new(human_q.to_vec(), Isometry3::identity()))?;
        let mut targets = Vec::new();
        for (i, tip) in robot.fingertips.iter().enumerate() {
            let key = tip.human_fingertip.as_deref().unwrap_or(&tip.name);
            let h = human.fingertips.iter().position(|f| f.name == key).ok_or_else(|| {
                Error::Config(format!(
                    "robot fingertip `{}` has no human counterpart `{key}`",
                    tip.name
                ))
            })?;
            targets.push((i, posed.fingertips[h]));
        }
        let joint_targets = robot
            .joints
            .iter()
            .enumerate()
            .filter_map(|(j, joint)| {
                let key = joint.human_joint.as_deref().unwrap_or(&joint.name);
                human.joint_index(key).map(|h| (j, human_q[h]))
            })
            .collect();
        Ok(RetargetProblem {
            human,
            human_q,
            robot,
            weights,
            targets,
            joint_targets,
        })
    }

    /// Direct mapping of human angles onto mapped robot joints, clamped;
    /// unmapped joints take the value in their range closest to zero.
    pub fn direct_mapping(&self) -> Vec<f64> {
        let mut q: Vec<f64> = self.robot.joints.iter().map(|j| j.clamp(0.0)).collect();
        for &(j, v) in &self.joint_targets {
            q[j] = self.robot.joints[j].clamp(v);
        }
        q
    }

    /// Exact objective at joint vector `q`.
    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        let posed = forward_kinematics(self.robot, &Grasp::new(q.to_vec(), Isometry3::identity()))?;
        let task: f64 = self
            .targets
            .iter()
            .map(|(i, t)| (posed.fingertips[*i] - t).norm())
            .sum();
        let joint: f64 = self.joint_targets.iter().map(|(j, v)| (q[*j] - v).abs()).sum();
        Ok(self.weights.task * task + self.weights.joint * joint)
    }

    /// Smoothed objective and its gradient with respect to `q`.
    fn smoothed(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let posed = forward_kinematics(self.robot, &Grasp::new(q.to_vec(), Isometry3::identity()))?;
        let eps2 = SMOOTH_EPS * SMOOTH_EPS;
        let mut grad = vec![0.0; q.len()];
        let mut e = 0.0;
        for (i, t) in &self.targets {
            let tip = &self.robot.fingertips[*i];
            let r = posed.fingertips[*i] - t;
            let n = (r.norm_squared() + eps2).sqrt();
            e += self.weights.task * n;
            let p = posed.fingertips[*i];
            for &j in &self.robot.joint_chain[tip.link] {
                let col = posed.joint_axes[j].cross(&(p - posed.joint_origins[j]));
                grad[j] += self.weights.task * r.dot(&col) / n;
            }
        }
        for (j, v) in &self.joint_targets {
            let x = q[*j] - v;
            let n = (x * x + eps2).sqrt();
            e += self.weights.joint * n;
            grad[*j] += self.weights.joint * x / n;
        }
        Ok((e, grad))
    }
}

/// Projected gradient descent from the clamped direct mapping. A step is
/// kept only if it lowers the exact objective, so the trace never rises.
pub fn retarget(
    problem: &RetargetProblem,
    wrist: Isometry3<f64>,
    options: &RetargetOptions,
) -> Result<RetargetResult> {
    let robot = problem.robot;
    let c = &robot.coupling.matrix;
    let couple = |a: &[f64]| -> Vec<f64> { robot.apply_coupling(a).expect("actuator count").0 };

    let mut a = robot.actuated_from_q(&problem.direct_mapping());
    let mut q = couple(&a);
    let mut e = problem.energy(&q)?;
    let mut trace = vec![e];
    let mut step = 0.1;
    let mut quiet = 0;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let (es, gq) = problem.smoothed(&q)?;
        let ga: Vec<f64> = (0..robot.doa())
            .map(|k| (0..robot.dof()).map(|j| c[(j, k)] * gq[j]).sum())
            .collect();
        let mut accepted = None;
        let mut s = step;
        for _ in 0..50 {
            let cand: Vec<f64> = robot.clamp_actuated(
                &a.iter().zip(&ga).map(|(x, g)| x - s * g).collect::<Vec<_>>(),
            );
            let moved: f64 = cand.iter().zip(&a).map(|(x, y)| (x - y).abs()).sum();
            if moved == 0.0 {
                break;
            }
            let qc = couple(&cand);
            let (esc, _) = problem.smoothed(&qc)?;
            let decrease: f64 = ga.iter().zip(cand.iter().zip(&a)).map(|(g, (x, y))| g * (y - x)).sum();
            if esc <= es - 1e-4 * decrease {
                let ec = problem.energy(&qc)?;
                if ec < e {
                    accepted = Some((cand, qc, ec));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((cand, qc, ec)) = accepted else {
            break;
        };
        let improvement = e - ec;
        a = cand;
        q = qc;
        e = ec;
        trace.push(e);
        step = (s * 2.0).min(10.0);
        if improvement < options.tolerance {
            quiet += 1;
            if quiet >= options.patience {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok(RetargetResult {
        grasp: Grasp::new(q, wrist),
        actuated: a,
        energy_trace: trace,
        iterations,
    })
}
