//! Camera pose from one-to-many 2D-3D correspondences.
//!
//! Every pixel comes with a small set of candidate scene points (the cluster
//! centres of its predicted region). Hypotheses are drawn from minimal
//! samples, ranked by a soft inlier count, and the winner is polished with
//! Levenberg-Marquardt while candidates are re-selected each iteration.

mod io;
mod p3p;
mod ransac;
mod refine;

pub use io::{format_correspondences, parse_correspondences, read_correspondences, write_correspondences};
pub use p3p::p3p_solve;
pub use ransac::{consensus_score, ransac, reproj_error, reproj_error_with, solve_minimal, BEHIND_CAMERA_PENALTY};
pub use refine::{refine, RefineOutcome};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PinholeCamera, Se3Pose};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("need at least {needed} correspondences, got {actual}")]
    TooFewCorrespondences { needed: usize, actual: usize },
    #[error("correspondence {0} has no candidates")]
    EmptyCandidates(usize),
    #[error("correspondence {0} has non-finite values")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no hypothesis survived")]
    NoHypothesis,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A pixel and its candidate scene points.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub candidates: Vec<Vector3<f64>>,
}

impl Correspondence {
    pub fn new(pixel: Vector2<f64>, candidates: Vec<Vector3<f64>>) -> Self {
        Self { pixel, candidates }
    }

    pub fn single(pixel: Vector2<f64>, point: Vector3<f64>) -> Self {
        Self {
            pixel,
            candidates: vec![point],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
    pub camera: PinholeCamera,
}

impl CorrespondenceSet {
    pub fn new(entries: Vec<Correspondence>, camera: PinholeCamera) -> Self {
        Self { entries, camera }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest candidate list size.
    pub fn max_candidates(&self) -> usize {
        self.entries.iter().map(|e| e.candidates.len()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.candidates.is_empty() {
                return Err(PoseError::EmptyCandidates(i));
            }
            let finite = e.pixel.iter().all(|v| v.is_finite())
                && e.candidates.iter().all(|c| c.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(PoseError::NonFinite(i));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub hypotheses: usize,
    /// Kernel threshold and inlier cutoff, in pixels.
    pub tau: f64,
    pub max_refine_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            hypotheses: 256,
            tau: 10.0,
            max_refine_iters: 20,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        if self.hypotheses == 0 {
            return Err(PoseError::InvalidConfig("hypotheses must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(PoseError::InvalidConfig("tau must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPose {
    pub pose: Se3Pose,
    /// Consensus score; lower is better.
    pub score: f64,
    /// Correspondences with reprojection error below tau.
    pub inliers: usize,
}
