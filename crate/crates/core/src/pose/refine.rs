use nalgebra::{Matrix2x3, Matrix6, Vector2, Vector3, Vector6};

use super::ransac::{reproj_error_with, scored};
use super::{CorrespondenceSet, RansacConfig, ScoredPose};
use crate::geometry::{PinholeCamera, Se3Pose, WorldToCamera, CHEIRALITY_EPS};

const INITIAL_LAMBDA: f64 = 1e-3;
const MAX_DAMPING_TRIES: usize = 12;
const STEP_TOL: f64 = 1e-6;
const COST_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub scored: ScoredPose,
    /// Outer iterations run, at most `max_refine_iters`.
    pub iterations: usize,
    /// Set when fewer than four inliers remained.
    pub insufficient_inliers: bool,
    /// `(cost before, cost after)` of every accepted damped step.
    pub cost_log: Vec<(f64, f64)>,
}

/// Inlier pixels and the currently closest candidate of each.
fn select_inliers(w2c: &WorldToCamera, set: &CorrespondenceSet, tau: f64) -> Vec<(usize, usize)> {
    set.entries
        .iter()
        .enumerate()
        .filter_map(|(j, e)| {
            let (err, k) = reproj_error_with(w2c, e, &set.camera);
            (err < tau).then_some((j, k))
        })
        .collect()
}

fn residual(camera: &PinholeCamera, pc: &Vector3<f64>, pixel: &Vector2<f64>) -> Option<Vector2<f64>> {
    camera.project_camera_point(pc).map(|p| p - pixel)
}

fn cost(w2c: &WorldToCamera, set: &CorrespondenceSet, matches: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(j, k) in matches {
        let e = &set.entries[j];
        match residual(&set.camera, &w2c.apply(&e.candidates[k]), &e.pixel) {
            Some(r) => total += r.norm_squared(),
            None => return f64::INFINITY,
        }
    }
    total
}

/// Normal equations for the left perturbation `(omega, v)` of the
/// world-to-camera transform.
fn normal_equations(w2c: &WorldToCamera, set: &CorrespondenceSet, matches: &[(usize, usize)]) -> (Matrix6<f64>, Vector6<f64>) {
    let cam = &set.camera;
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for &(j, k) in matches {
        let e = &set.entries[j];
        let pc = w2c.apply(&e.candidates[k]);
        let Some(r) = residual(cam, &pc, &e.pixel) else {
            continue;
        };
        let iz = 1.0 / pc.z;
        let jp = Matrix2x3::new(
            cam.fx * iz,
            0.0,
            -cam.fx * pc.x * iz * iz,
            0.0,
            cam.fy * iz,
            -cam.fy * pc.y * iz * iz,
        );
        let mut jac = nalgebra::Matrix2x6::zeros();
        // d(pc)/d(omega) = -[pc]x, d(pc)/d(v) = I
        jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -pc.cross_matrix()));
        jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
        h += jac.transpose() * jac;
        g += jac.transpose() * r;
    }
    (h, g)
}

/// Levenberg-Marquardt polish with inlier re-selection on every iteration.
pub fn refine(start: &Se3Pose, set: &CorrespondenceSet, config: &RansacConfig) -> RefineOutcome {
    let tau = config.tau;
    let mut pose = *start;
    let mut lambda = INITIAL_LAMBDA;
    let mut cost_log = Vec::new();
    let mut previous: Option<Vec<(usize, usize)>> = None;
    let mut iterations = 0;
    let mut insufficient = false;

    while iterations < config.max_refine_iters {
        let w2c = pose.world_to_camera();
        let matches = select_inliers(&w2c, set, tau);
        if matches.len() < 4 {
            insufficient = true;
            break;
        }
        iterations += 1;
        let before = cost(&w2c, set, &matches);
        let (h, g) = normal_equations(&w2c, set, &matches);

        let mut accepted = None;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let v = Vector3::new(step[3], step[4], step[5]);
            let candidate = pose.retract_world_to_camera(&omega, &v);
            let cw = candidate.world_to_camera();
            let after = cost(&cw, set, &matches);
            let in_front = matches
                .iter()
                .all(|&(j, k)| cw.apply(&set.entries[j].candidates[k]).z > CHEIRALITY_EPS);
            if in_front && after <= before {
                lambda = (lambda / 10.0).max(1e-12);
                accepted = Some((candidate, after, step.norm()));
                break;
            }
            lambda *= 10.0;
        }

        let Some((candidate, after, step_norm)) = accepted else {
            break;
        };
        cost_log.push((before, after));
        pose = candidate;
        let unchanged = previous.as_ref() == Some(&matches);
        if step_norm < STEP_TOL || (unchanged && before - after < COST_TOL) {
            break;
        }
        previous = Some(matches);
    }

    RefineOutcome {
        scored: scored(pose, set, tau),
        iterations,
        insufficient_inliers: insufficient,
        cost_log,
    }
}
