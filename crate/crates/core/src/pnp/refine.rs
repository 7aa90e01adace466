//! Levenberg-Marquardt minimisation of the reprojection error.
//!
//! The pose is updated as `R <- exp(omega) * R`, `t <- t + dt` with the
//! 6-vector `[omega, dt]`.

use nalgebra::{Matrix2x6, Matrix6, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::filter::Correspondence;
use crate::geometry::{exp_so3, CameraIntrinsics, Pose, MIN_DEPTH};

const STEP_TOLERANCE: f64 = 1e-10;
const MAX_DAMPING: f64 = 1e16;

/// Applies a tangent increment `[omega, dt]` to `pose`.
pub fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose::from_parts_unchecked(exp_so3(&omega) * pose.rotation(), pose.translation() + dt)
}

/// Projection of `point` minus `observed`, or `None` behind the camera.
pub fn reprojection_residual(
    pose: &Pose,
    point: &Vector3<f64>,
    observed: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let pc = pose.transform_point(point);
    (pc.z > MIN_DEPTH).then(|| intr.project_camera_point(&pc) - observed)
}

/// Derivative of the projected pixel with respect to `[omega, dt]` at zero.
pub fn reprojection_jacobian(pose: &Pose, point: &Vector3<f64>, intr: &CameraIntrinsics) -> Option<Matrix2x6<f64>> {
    let rotated = pose.rotation() * point;
    let pc = rotated + pose.translation();
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let inv_z = 1.0 / pc.z;
    let inv_z2 = inv_z * inv_z;
    let d_proj = nalgebra::Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * pc.x * inv_z2,
        0.0,
        intr.fy * inv_z,
        -intr.fy * pc.y * inv_z2,
    );
    // d(exp(omega) R p)/d omega = -[R p]_x
    let skew = rotated.cross_matrix();
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-d_proj * skew));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
    Some(j)
}

/// Sum of squared reprojection errors; `None` if a point is behind the camera.
pub fn reprojection_cost(pose: &Pose, corr: &[Correspondence], intr: &CameraIntrinsics) -> Option<f64> {
    let mut cost = 0.0;
    for c in corr {
        cost += reprojection_residual(pose, &c.object, &c.image, intr)?.norm_squared();
    }
    Some(cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
}

pub fn refine_pose(initial: &Pose, corr: &[Correspondence], intr: &CameraIntrinsics, max_iters: usize) -> Result<Pose> {
    refine_pose_with_report(initial, corr, intr, max_iters).map(|r| r.pose)
}

/// Damped Gauss-Newton on the reprojection error.
///
/// Steps are accepted only when they strictly reduce the cost, so the cost
/// is non-increasing. Stops when the step norm drops below 1e-10, the damping
/// saturates, or `max_iters` trial steps have been taken.
pub fn refine_pose_with_report(
    initial: &Pose,
    corr: &[Correspondence],
    intr: &CameraIntrinsics,
    max_iters: usize,
) -> Result<RefineReport> {
    if corr.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: corr.len(),
        });
    }
    for (index, c) in corr.iter().enumerate() {
        let depth = initial.transform_point(&c.object).z;
        if depth <= MIN_DEPTH {
            return Err(Error::BehindCamera { index, depth });
        }
    }
    let initial_cost = reprojection_cost(initial, corr, intr).ok_or(Error::NonFiniteCost)?;
    if !initial_cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }

    let mut pose = *initial;
    let mut cost = initial_cost;
    let mut accepted_costs = vec![cost];
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;

    'outer: while iterations < max_iters && cost > 0.0 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corr {
            let (Some(j), Some(r)) = (
                reprojection_jacobian(&pose, &c.object, intr),
                reprojection_residual(&pose, &c.object, &c.image, intr),
            ) else {
                return Err(Error::NonFiniteCost);
            };
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if !jtj.iter().chain(jtr.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteCost);
        }
        let diag = jtj.diagonal().map(|d| d.max(1e-12));
        let lam = lambda.get_or_insert(1e-3);

        loop {
            iterations += 1;
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += *lam * diag[i];
            }
            let step = damped.cholesky().map(|ch| -ch.solve(&jtr));
            match step {
                Some(delta) if delta.iter().all(|v| v.is_finite()) => {
                    if delta.norm() < STEP_TOLERANCE {
                        break 'outer;
                    }
                    let candidate = apply_increment(&pose, &delta);
                    match reprojection_cost(&candidate, corr, intr) {
                        Some(new_cost) if new_cost < cost => {
                            pose = candidate;
                            cost = new_cost;
                            accepted_costs.push(cost);
                            *lam = (*lam * 0.1).max(1e-12);
                            break;
                        }
                        _ => *lam *= 10.0,
                    }
                }
                _ => *lam *= 10.0,
            }
            if *lam > MAX_DAMPING || iterations >= max_iters {
                break 'outer;
            }
        }
    }

    Ok(RefineReport {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
        accepted_costs,
    })
}
