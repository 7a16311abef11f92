use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use super::p3p::{is_collinear, p3p_solve};
use super::{Correspondence, CorrespondenceSet, PoseError, RansacConfig, ScoredPose};
use crate::geometry::{project_with, PinholeCamera, Se3Pose, WorldToCamera};
use crate::rng;

/// Error assigned to a candidate that lands behind the camera.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e6;

/// Smallest pixel distance over the entry's candidates.
pub fn reproj_error(pose: &Se3Pose, entry: &Correspondence, camera: &PinholeCamera) -> f64 {
    reproj_error_with(&pose.world_to_camera(), entry, camera).0
}

/// Error and index of the best candidate under a precomputed world-to-camera
/// transform. Ties keep the first candidate.
pub fn reproj_error_with(w2c: &WorldToCamera, entry: &Correspondence, camera: &PinholeCamera) -> (f64, usize) {
    let mut best = (BEHIND_CAMERA_PENALTY, 0);
    for (k, x) in entry.candidates.iter().enumerate() {
        let e = match project_with(w2c, camera, x) {
            Some(p) => (p - entry.pixel).norm(),
            None => BEHIND_CAMERA_PENALTY,
        };
        if e < best.0 {
            best = (e, k);
        }
    }
    best
}

fn kernel(e: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (-0.5 * (e - tau)).exp())
}

/// Sum of sigmoid-kernelled reprojection errors. Lower is better.
pub fn consensus_score(pose: &Se3Pose, set: &CorrespondenceSet, tau: f64) -> f64 {
    let w2c = pose.world_to_camera();
    set.entries
        .iter()
        .map(|e| kernel(reproj_error_with(&w2c, e, &set.camera).0, tau))
        .sum()
}

fn score_and_inliers(pose: &Se3Pose, set: &CorrespondenceSet, tau: f64) -> (f64, usize) {
    let w2c = pose.world_to_camera();
    let mut score = 0.0;
    let mut inliers = 0;
    for e in &set.entries {
        let err = reproj_error_with(&w2c, e, &set.camera).0;
        score += kernel(err, tau);
        if err < tau {
            inliers += 1;
        }
    }
    (score, inliers)
}

pub(crate) fn scored(pose: Se3Pose, set: &CorrespondenceSet, tau: f64) -> ScoredPose {
    let (score, inliers) = score_and_inliers(&pose, set, tau);
    ScoredPose { pose, score, inliers }
}

/// P3P on the first three matches, disambiguated by the fourth. Returns
/// `None` for degenerate samples or when the fourth match is off by more
/// than `10 * tau` pixels under every solution.
pub fn solve_minimal(
    pixels: &[Vector2<f64>; 4],
    points: &[Vector3<f64>; 4],
    camera: &PinholeCamera,
    tau: f64,
) -> Option<Se3Pose> {
    for i in 0..4 {
        for j in i + 1..4 {
            if (pixels[i] - pixels[j]).norm() < 1e-9 {
                return None;
            }
        }
    }
    let tri = [points[0], points[1], points[2]];
    if is_collinear(&tri) {
        return None;
    }
    let check = Correspondence::single(pixels[3], points[3]);
    p3p_solve(&[pixels[0], pixels[1], pixels[2]], &tri, camera)
        .into_iter()
        .map(|pose| (reproj_error(&pose, &check, camera), pose))
        .filter(|(e, _)| *e <= 10.0 * tau)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, pose)| pose)
}

fn hypothesis(set: &CorrespondenceSet, config: &RansacConfig, idx: usize) -> Option<Se3Pose> {
    let mut r = rng::stream(config.seed, idx as u64);
    let picks = index::sample(&mut r, set.len(), 4);
    let mut pixels = [Vector2::zeros(); 4];
    let mut points = [Vector3::zeros(); 4];
    for (slot, i) in picks.iter().enumerate() {
        let e = &set.entries[i];
        pixels[slot] = e.pixel;
        points[slot] = e.candidates[r.random_range(0..e.candidates.len())];
    }
    solve_minimal(&pixels, &points, &set.camera, config.tau)
}

/// Scores `hypotheses` minimal-sample attempts in parallel and returns the
/// lowest score; ties go to the earliest attempt. Failed attempts still use
/// up the budget.
pub fn ransac(set: &CorrespondenceSet, config: &RansacConfig) -> Result<ScoredPose, PoseError> {
    config.validate()?;
    set.validate()?;
    if set.len() < 4 {
        return Err(PoseError::TooFewCorrespondences {
            needed: 4,
            actual: set.len(),
        });
    }
    (0..config.hypotheses)
        .into_par_iter()
        .filter_map(|idx| hypothesis(set, config, idx).map(|pose| (idx, scored(pose, set, config.tau))))
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
        .map(|(_, s)| s)
        .ok_or(PoseError::NoHypothesis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_over_candidates() {
        let cam = PinholeCamera { fx: 100.0, fy: 100.0, cx: 0.0, cy: 0.0, width: 10, height: 10 };
        let entry = Correspondence::new(Vector2::zeros(), vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0)]);
        assert_eq!(reproj_error(&Se3Pose::identity(), &entry, &cam), 0.0);
        let swapped = Correspondence::new(Vector2::zeros(), vec![Vector3::new(1.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0)]);
        assert_eq!(reproj_error(&Se3Pose::identity(), &swapped, &cam), 0.0);
        let behind = Correspondence::new(Vector2::zeros(), vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(1.0, 0.0, -2.0)]);
        assert_eq!(reproj_error(&Se3Pose::identity(), &behind, &cam), BEHIND_CAMERA_PENALTY);
    }

    #[test]
    fn kernel_values() {
        assert!((kernel(0.0, 10.0) - 0.006692850924284856).abs() < 1e-15);
        assert_eq!(kernel(10.0, 10.0), 0.5);
    }
}
