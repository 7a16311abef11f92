//! Per-query results and their aggregates.

use regionloc::geometry::{pose_error, Se3Pose};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub name: String,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub translation_error: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub score: Option<f64>,
    pub inliers: usize,
    pub correspondences: usize,
    pub refine_iterations: usize,
    pub refine_flag: bool,
    pub wall_ms: f64,
}

impl QueryRecord {
    pub fn from_errors(index: usize, name: String, translation: f64, rotation_deg: f64) -> Self {
        Self {
            index,
            name,
            status: "ok".into(),
            translation_error: Some(translation),
            rotation_error_deg: Some(rotation_deg),
            score: None,
            inliers: 0,
            correspondences: 0,
            refine_iterations: 0,
            refine_flag: false,
            wall_ms: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub translation: f64,
    pub rotation_deg: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub failures: usize,
    /// Failed queries count as infinitely wrong; `None` when the median
    /// itself is a failure or there are no queries.
    pub median_translation: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    pub success: Vec<SuccessRate>,
    pub queries: Vec<QueryRecord>,
}

/// Median with failures as `+inf`; the mean of the middle pair for even counts.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

impl EvalReport {
    pub fn from_records(queries: Vec<QueryRecord>, thresholds: &[(f64, f64)]) -> Self {
        let t: Vec<Option<f64>> = queries.iter().map(|q| q.translation_error).collect();
        let r: Vec<Option<f64>> = queries.iter().map(|q| q.rotation_error_deg).collect();
        let count = queries.len();
        let success = thresholds
            .iter()
            .map(|&(tt, rt)| {
                let hits = queries
                    .iter()
                    .filter(|q| matches!((q.translation_error, q.rotation_error_deg), (Some(a), Some(b)) if a <= tt && b <= rt))
                    .count();
                SuccessRate {
                    translation: tt,
                    rotation_deg: rt,
                    rate: if count == 0 { 0.0 } else { hits as f64 / count as f64 },
                }
            })
            .collect();
        Self {
            count,
            failures: queries.iter().filter(|q| q.translation_error.is_none()).count(),
            median_translation: median(&t),
            median_rotation_deg: median(&r),
            success,
            queries,
        }
    }

    /// Compares estimated and reference trajectories pose by pose.
    pub fn from_trajectories(
        estimates: &[Se3Pose],
        truth: &[Se3Pose],
        thresholds: &[(f64, f64)],
    ) -> Result<Self, HarnessError> {
        if estimates.len() != truth.len() {
            return Err(HarnessError::Data(format!(
                "{} estimates but {} reference poses",
                estimates.len(),
                truth.len()
            )));
        }
        let records = estimates
            .iter()
            .zip(truth)
            .enumerate()
            .map(|(i, (e, t))| {
                let (dt, dr) = pose_error(e, t);
                QueryRecord::from_errors(i, format!("{i}"), dt, dr)
            })
            .collect();
        Ok(Self::from_records(records, thresholds))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[Some(3.0), Some(1.0), Some(2.0)]), Some(2.0));
        assert_eq!(median(&[Some(4.0), Some(1.0), Some(2.0), Some(3.0)]), Some(2.5));
        assert_eq!(median(&[Some(1.0), None, None]), None);
        assert_eq!(median(&[Some(1.0), Some(2.0), None]), Some(2.0));
    }

    #[test]
    fn trajectory_examples() {
        let a = vec![Se3Pose::identity(), Se3Pose::from_translation(Vector3::new(1.0, 2.0, 3.0))];
        let r = EvalReport::from_trajectories(&a, &a, &[(0.05, 5.0)]).unwrap();
        assert_eq!(r.median_translation, Some(0.0));
        assert_eq!(r.median_rotation_deg, Some(0.0));
        assert_eq!(r.success[0].rate, 1.0);
        let est = [Se3Pose::from_translation(Vector3::new(3.0, 4.0, 0.0))];
        let r = EvalReport::from_trajectories(&est, &[Se3Pose::identity()], &[]).unwrap();
        assert!((r.median_translation.unwrap() - 5.0).abs() < 1e-12);
        assert!(EvalReport::from_trajectories(&est, &a, &[]).is_err());
    }

    #[test]
    fn empty_report() {
        let r = EvalReport::from_records(Vec::new(), &[(0.05, 5.0)]);
        assert_eq!(r.count, 0);
        assert_eq!(r.median_translation, None);
        assert_eq!(r.success[0].rate, 0.0);
    }
}
