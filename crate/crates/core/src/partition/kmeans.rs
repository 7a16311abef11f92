use nalgebra::Vector3;
use rand::Rng as _;
use rayon::prelude::*;

use super::PartitionError;
use crate::rng;

pub const MAX_ITERATIONS: usize = 100;

/// Result of a Lloyd K-Means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vector3<f64>>,
    /// Fewer than `k` clusters were produced: either `k` exceeded the number
    /// of points, or duplicate points left clusters that could not be filled.
    pub capped: bool,
    pub iterations: usize,
}

impl KMeans {
    /// Sum of squared distances of every point to its centroid.
    pub fn objective(&self, points: &[Vector3<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &a)| (p - self.centroids[a]).norm_squared())
            .sum()
    }
}

#[inline]
fn nearest(p: &Vector3<f64>, centroids: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        // strict comparison keeps the lowest index on ties
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(points: &[Vector3<f64>], centroids: &[Vector3<f64>]) -> Vec<usize> {
    if points.len() * centroids.len() > 1 << 15 {
        points.par_iter().map(|p| nearest(p, centroids).0).collect()
    } else {
        points.iter().map(|p| nearest(p, centroids).0).collect()
    }
}

fn seed_plus_plus(points: &[Vector3<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vector3<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            chosen.iter().position(|c| !c).expect("k < n")
        };
        chosen[pick] = true;
        let c = points[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    centroids
}

fn update_centroids(
    points: &[Vector3<f64>],
    assignments: &mut [usize],
    centroids: &mut [Vector3<f64>],
) {
    let k = centroids.len();
    let mut sums = vec![Vector3::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        sums[a] += p;
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c] / counts[c] as f64;
        }
    }
    // Empty clusters take the point farthest from its own centroid, drawn
    // from a cluster that can spare one.
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = (p - centroids[a]).norm_squared();
            if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            let old = assignments[i];
            counts[old] -= 1;
            sums[old] -= points[i];
            centroids[old] = sums[old] / counts[old] as f64;
            assignments[i] = c;
            counts[c] = 1;
            sums[c] = points[i];
            centroids[c] = points[i];
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Deterministic for fixed inputs and seed. Empty clusters are dropped from
/// the result, so `centroids.len()` can be smaller than `k` (see
/// [`KMeans::capped`]).
pub fn kmeans(points: &[Vector3<f64>], k: usize, seed: u64) -> Result<KMeans, PartitionError> {
    if points.is_empty() {
        return Err(PartitionError::EmptyCloud);
    }
    if k == 0 {
        return Err(PartitionError::InvalidParameter("k must be at least 1".into()));
    }
    let n = points.len();
    if k >= n {
        return Ok(KMeans {
            assignments: (0..n).collect(),
            centroids: points.to_vec(),
            capped: k > n,
            iterations: 0,
        });
    }

    let mut rng = rng::seeded(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut assignments = assign(points, &centroids);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        update_centroids(points, &mut assignments, &mut centroids);
        let next = assign(points, &centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a] += p;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    let mut capped = false;
    if counts.contains(&0) {
        capped = true;
        let mut remap = vec![usize::MAX; k];
        let mut kept = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                remap[c] = kept.len();
                kept.push(centroids[c]);
            }
        }
        for a in assignments.iter_mut() {
            *a = remap[*a];
        }
        centroids = kept;
    }
    Ok(KMeans {
        assignments,
        centroids,
        capped,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        let r = kmeans(&[p], 1, 0).unwrap();
        assert_eq!(r.centroids, vec![p]);
        assert!(!r.capped);
    }

    #[test]
    fn separated_pair() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)];
        let r = kmeans(&pts, 2, 5).unwrap();
        let mut xs: Vec<f64> = r.centroids.iter().map(|c| c.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 10.0]);
        assert_ne!(r.assignments[0], r.assignments[1]);
    }

    #[test]
    fn k_above_point_count_is_capped() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let r = kmeans(&pts, 5, 1).unwrap();
        assert!(r.capped);
        assert_eq!(r.centroids.len(), 2);
    }

    #[test]
    fn duplicates_collapse() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 6];
        let r = kmeans(&pts, 3, 9).unwrap();
        assert!(r.capped);
        assert_eq!(r.centroids, vec![Vector3::new(1.0, 1.0, 1.0)]);
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kmeans(&[], 2, 0).is_err());
        assert!(kmeans(&[Vector3::zeros()], 0, 0).is_err());
    }

    #[test]
    fn centroids_are_member_means() {
        let mut rng = rng::seeded(3);
        let pts: Vec<_> = (0..300)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let r = kmeans(&pts, 7, 11).unwrap();
        for (c, centroid) in r.centroids.iter().enumerate() {
            let members: Vec<_> = pts.iter().zip(&r.assignments).filter(|(_, &a)| a == c).map(|(p, _)| *p).collect();
            assert!(!members.is_empty());
            let mean: Vector3<f64> = members.iter().sum::<Vector3<f64>>() / members.len() as f64;
            assert!((mean - centroid).norm() < 1e-9);
        }
        assert_eq!(kmeans(&pts, 7, 11).unwrap(), r);
    }
}
