use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, PartitionError};
use crate::geometry::{backproject, DepthImage, PinholeCamera, PointCloud, Se3Pose};
use crate::rng::derive_seed;

/// Hierarchical region label. `path[i]` is the child slot chosen at level
/// `i + 1`; `composite = sum(path[i] * m^(n-1-i))`. Zero-indexed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionLabel {
    pub path: Vec<u32>,
    pub composite: u64,
}

impl RegionLabel {
    pub fn from_path(path: Vec<u32>, m: u32) -> Self {
        let composite = path.iter().fold(0u64, |acc, &a| acc * m as u64 + a as u64);
        Self { path, composite }
    }

    pub fn from_composite(composite: u64, m: u32, n: u32) -> Option<Self> {
        let m64 = m as u64;
        if composite >= m64.checked_pow(n)? {
            return None;
        }
        let mut path = vec![0u32; n as usize];
        let mut rest = composite;
        for slot in path.iter_mut().rev() {
            *slot = (rest % m64) as u32;
            rest /= m64;
        }
        Some(Self { path, composite })
    }

    pub fn levels(&self) -> usize {
        self.path.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub centroid: Vector3<f64>,
    /// Index of the first child in the next level. Children are contiguous.
    pub first_child: u32,
    pub child_count: u32,
    pub member_count: u32,
}

/// `n`-level, `m`-way partition of a scene point cloud.
///
/// `levels[0]` holds the children of the implicit root; `levels[n - 1]` holds
/// the leaves. Nodes are stored breadth-first so the leaves below any node
/// form a contiguous range.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTree {
    pub(crate) m: u32,
    pub(crate) n: u32,
    pub(crate) levels: Vec<Vec<TreeNode>>,
    /// CSR offsets into `member_ids` / `member_points`, one range per leaf.
    pub(crate) member_offsets: Vec<u32>,
    pub(crate) member_ids: Vec<u32>,
    pub(crate) member_points: Vec<Vector3<f64>>,
    /// Number of representative centers requested per leaf; 0 until
    /// [`PartitionTree::cluster_leaves`] has run.
    pub(crate) q: u32,
    pub(crate) center_offsets: Vec<u32>,
    pub(crate) centers: Vec<Vector3<f64>>,
}

struct Pending {
    members: Vec<u32>,
}

impl PartitionTree {
    /// Recursive K-Means partition. Each level-`l` node is split with a seed
    /// derived from `(seed, l, node index)`; sibling subtrees are split in
    /// parallel.
    pub fn build(cloud: &PointCloud, m: u32, n: u32, seed: u64) -> Result<Self, PartitionError> {
        if cloud.is_empty() {
            return Err(PartitionError::EmptyCloud);
        }
        if m < 2 {
            return Err(PartitionError::InvalidParameter(format!("m must be >= 2, got {m}")));
        }
        if n < 1 {
            return Err(PartitionError::InvalidParameter(format!("n must be >= 1, got {n}")));
        }
        if cloud.points.len() > u32::MAX as usize {
            return Err(PartitionError::InvalidParameter("point cloud too large".into()));
        }
        if let Some(bad) = cloud.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(PartitionError::InvalidParameter(format!("point {bad} is not finite")));
        }
        let pts = &cloud.points;

        let mut levels: Vec<Vec<TreeNode>> = Vec::with_capacity(n as usize);
        let mut frontier = vec![Pending {
            members: (0..pts.len() as u32).collect(),
        }];

        for level in 0..n {
            let splits: Vec<Vec<(Vector3<f64>, Vec<u32>)>> = frontier
                .par_iter()
                .enumerate()
                .map(|(i, node)| split(pts, &node.members, m, derive_seed(seed, ((level as u64) << 32) | i as u64)))
                .collect::<Result<_, _>>()?;

            let mut nodes = Vec::new();
            let mut next = Vec::new();
            if let Some(parent_level) = levels.last_mut() {
                for (parent, children) in parent_level.iter_mut().zip(&splits) {
                    parent.first_child = nodes.len() as u32;
                    parent.child_count = children.len() as u32;
                    for (centroid, members) in children {
                        nodes.push(TreeNode {
                            centroid: *centroid,
                            first_child: 0,
                            child_count: 0,
                            member_count: members.len() as u32,
                        });
                    }
                }
            } else {
                for (centroid, members) in &splits[0] {
                    nodes.push(TreeNode {
                        centroid: *centroid,
                        first_child: 0,
                        child_count: 0,
                        member_count: members.len() as u32,
                    });
                }
            }
            for children in splits {
                next.extend(children.into_iter().map(|(_, members)| Pending { members }));
            }
            levels.push(nodes);
            frontier = next;
        }

        let mut member_offsets = Vec::with_capacity(frontier.len() + 1);
        let mut member_ids = Vec::with_capacity(pts.len());
        member_offsets.push(0u32);
        for leaf in &frontier {
            member_ids.extend_from_slice(&leaf.members);
            member_offsets.push(member_ids.len() as u32);
        }
        let member_points = member_ids.iter().map(|&i| pts[i as usize]).collect();
        Ok(Self {
            m,
            n,
            levels,
            member_offsets,
            member_ids,
            member_points,
            q: 0,
            center_offsets: Vec::new(),
            centers: Vec::new(),
        })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn levels(&self) -> &[Vec<TreeNode>] {
        &self.levels
    }

    pub fn leaf_count(&self) -> usize {
        self.levels.last().map_or(0, Vec::len)
    }

    pub fn leaf(&self, leaf: usize) -> &TreeNode {
        &self.levels[self.n as usize - 1][leaf]
    }

    pub fn leaf_members(&self, leaf: usize) -> &[Vector3<f64>] {
        let (a, b) = (self.member_offsets[leaf] as usize, self.member_offsets[leaf + 1] as usize);
        &self.member_points[a..b]
    }

    /// Indices into the input cloud of the points in a leaf.
    pub fn leaf_member_ids(&self, leaf: usize) -> &[u32] {
        let (a, b) = (self.member_offsets[leaf] as usize, self.member_offsets[leaf + 1] as usize);
        &self.member_ids[a..b]
    }

    /// Representative centers of a leaf (empty before `cluster_leaves`).
    pub fn leaf_centers(&self, leaf: usize) -> &[Vector3<f64>] {
        if self.center_offsets.is_empty() {
            return &[];
        }
        let (a, b) = (self.center_offsets[leaf] as usize, self.center_offsets[leaf + 1] as usize);
        &self.centers[a..b]
    }

    pub fn has_leaf_centers(&self) -> bool {
        !self.center_offsets.is_empty()
    }

    pub fn leaf_center_q(&self) -> u32 {
        self.q
    }

    /// Greedy descent from the root: at each level take the child whose
    /// centroid is nearest (lowest slot on ties).
    pub fn locate(&self, point: &Vector3<f64>) -> (RegionLabel, usize) {
        let mut path = Vec::with_capacity(self.n as usize);
        let (mut start, mut count) = (0usize, self.levels[0].len());
        let mut index = 0;
        for level in &self.levels {
            let mut best = (0usize, f64::INFINITY);
            for slot in 0..count {
                let d = (level[start + slot].centroid - point).norm_squared();
                if d < best.1 {
                    best = (slot, d);
                }
            }
            index = start + best.0;
            path.push(best.0 as u32);
            start = level[index].first_child as usize;
            count = level[index].child_count as usize;
        }
        (RegionLabel::from_path(path, self.m), index)
    }

    pub fn label_point(&self, point: &Vector3<f64>) -> RegionLabel {
        self.locate(point).0
    }

    /// Leaf reached by following a label path, if every slot exists.
    pub fn leaf_for_label(&self, label: &RegionLabel) -> Option<usize> {
        if label.path.len() != self.n as usize {
            return None;
        }
        let (mut start, mut count) = (0usize, self.levels[0].len());
        let mut index = 0;
        for (level, &slot) in self.levels.iter().zip(&label.path) {
            if slot as usize >= count {
                return None;
            }
            index = start + slot as usize;
            start = level[index].first_child as usize;
            count = level[index].child_count as usize;
        }
        Some(index)
    }

    /// Label path of a leaf.
    pub fn leaf_label(&self, leaf: usize) -> RegionLabel {
        let mut path = vec![0u32; self.n as usize];
        let mut index = leaf;
        for l in (0..self.n as usize).rev() {
            if l == 0 {
                path[0] = index as u32;
            } else {
                let parents = &self.levels[l - 1];
                // parents are sorted by first_child
                let p = parents.partition_point(|node| node.first_child as usize + node.child_count as usize <= index);
                path[l] = (index - parents[p].first_child as usize) as u32;
                index = p;
            }
        }
        RegionLabel::from_path(path, self.m)
    }

    /// Range of leaves below node `index` at zero-based `level`.
    pub fn leaf_range(&self, level: usize, index: usize) -> std::ops::Range<usize> {
        let (mut lo, mut hi) = (index, index + 1);
        for l in level..self.n as usize - 1 {
            let nodes = &self.levels[l];
            let first = nodes[lo..hi].iter().find(|n| n.child_count > 0).map(|n| n.first_child as usize);
            let last = nodes[lo..hi]
                .iter()
                .rev()
                .find(|n| n.child_count > 0)
                .map(|n| (n.first_child + n.child_count) as usize);
            match (first, last) {
                (Some(a), Some(b)) => {
                    lo = a;
                    hi = b;
                }
                _ => return 0..0,
            }
        }
        lo..hi
    }

    /// Member points of any node.
    pub fn node_members(&self, level: usize, index: usize) -> &[Vector3<f64>] {
        let r = self.leaf_range(level, index);
        if r.is_empty() {
            return &[];
        }
        &self.member_points[self.member_offsets[r.start] as usize..self.member_offsets[r.end] as usize]
    }

    /// Mean over the nodes of a level of the mean member-to-centroid distance.
    pub fn mean_radius_at_level(&self, level: usize) -> f64 {
        let nodes = &self.levels[level];
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, node) in nodes.iter().enumerate() {
            let members = self.node_members(level, i);
            if members.is_empty() {
                continue;
            }
            total += members.iter().map(|p| (p - node.centroid).norm()).sum::<f64>() / members.len() as f64;
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Mean leaf radius: the resolution limit of region-level matches.
    pub fn mean_leaf_radius(&self) -> f64 {
        self.mean_radius_at_level(self.n as usize - 1)
    }

    /// Splits each leaf into up to `q` K-Means centers. Leaves with at most
    /// `q` members keep their members as centers.
    pub fn cluster_leaves(mut self, q: u32, seed: u64) -> Result<Self, PartitionError> {
        if q == 0 {
            return Err(PartitionError::InvalidParameter("q must be >= 1".into()));
        }
        let per_leaf: Vec<Vec<Vector3<f64>>> = (0..self.leaf_count())
            .into_par_iter()
            .map(|leaf| {
                let members = self.leaf_members(leaf);
                if members.len() <= q as usize {
                    Ok(members.to_vec())
                } else {
                    Ok(kmeans(members, q as usize, derive_seed(seed, leaf as u64))?.centroids)
                }
            })
            .collect::<Result<_, PartitionError>>()?;
        self.q = q;
        self.center_offsets = Vec::with_capacity(per_leaf.len() + 1);
        self.center_offsets.push(0);
        self.centers = Vec::new();
        for c in per_leaf {
            self.centers.extend(c);
            self.center_offsets.push(self.centers.len() as u32);
        }
        Ok(self)
    }

    /// Labels every `stride`-th valid pixel of a view by back-projecting it.
    pub fn label_view(
        &self,
        depth: &DepthImage,
        pose: &Se3Pose,
        camera: &PinholeCamera,
        stride: u32,
    ) -> Vec<(Vector2<f64>, RegionLabel)> {
        depth
            .sample_grid(stride)
            .filter_map(|(px, d)| backproject(pose, camera, &px, d).ok().map(|p| (px, self.label_point(&p))))
            .collect()
    }
}

/// Splits a node's members into at most `m` children. Children come back in
/// K-Means cluster order.
fn split(
    pts: &[Vector3<f64>],
    members: &[u32],
    m: u32,
    seed: u64,
) -> Result<Vec<(Vector3<f64>, Vec<u32>)>, PartitionError> {
    if members.is_empty() {
        return Ok(Vec::new());
    }
    let local: Vec<Vector3<f64>> = members.iter().map(|&i| pts[i as usize]).collect();
    let km = kmeans(&local, m as usize, seed)?;
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); km.centroids.len()];
    for (&id, &a) in members.iter().zip(&km.assignments) {
        groups[a].push(id);
    }
    Ok(km.centroids.into_iter().zip(groups).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng::seeded(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 4.0)
                .collect(),
        )
    }

    #[test]
    fn two_point_tree() {
        let cloud = PointCloud::from_points(vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)]);
        let tree = PartitionTree::build(&cloud, 2, 1, 0).unwrap();
        assert_eq!(tree.leaf_count(), 2);
        let mut xs: Vec<f64> = tree.levels[0].iter().map(|n| n.centroid.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0, 1.0]);
    }

    #[test]
    fn composite_formula() {
        let l = RegionLabel::from_path(vec![3, 5], 64);
        assert_eq!(l.composite, 197);
        assert_eq!(RegionLabel::from_composite(197, 64, 2).unwrap(), l);
        assert!(RegionLabel::from_composite(4096, 64, 2).is_none());
    }

    #[test]
    fn leaf_centroid_labels_itself() {
        let cloud = random_cloud(300, 1);
        let tree = PartitionTree::build(&cloud, 3, 2, 7).unwrap();
        for leaf in 0..tree.leaf_count() {
            let (label, idx) = tree.locate(&tree.leaf(leaf).centroid);
            // greedy descent may route a centroid elsewhere only if a closer
            // sibling exists at level 1, which cannot hold for its own branch
            if idx == leaf {
                assert_eq!(label, tree.leaf_label(leaf));
            }
            assert_eq!(tree.leaf_for_label(&tree.leaf_label(leaf)), Some(leaf));
        }
    }

    #[test]
    fn small_nodes_get_singleton_children() {
        let cloud = PointCloud::from_points(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
        ]);
        let tree = PartitionTree::build(&cloud, 2, 3, 3).unwrap();
        assert_eq!(tree.leaf_count(), 3);
        for leaf in 0..3 {
            assert_eq!(tree.leaf_members(leaf).len(), 1);
            assert_eq!(tree.leaf_label(leaf).levels(), 3);
        }
    }

    #[test]
    fn cluster_leaves_caps_and_means() {
        let cloud = random_cloud(200, 2);
        let tree = PartitionTree::build(&cloud, 4, 2, 1).unwrap();
        let q1 = tree.clone().cluster_leaves(1, 5).unwrap();
        for leaf in 0..q1.leaf_count() {
            let c = q1.leaf_centers(leaf);
            assert_eq!(c.len(), 1);
            assert!((c[0] - q1.leaf(leaf).centroid).norm() < 1e-9);
        }
        let q10 = tree.cluster_leaves(10, 5).unwrap();
        for leaf in 0..q10.leaf_count() {
            let members = q10.leaf_members(leaf);
            let centers = q10.leaf_centers(leaf);
            assert_eq!(centers.len(), members.len().min(10));
            if members.len() <= 10 {
                assert_eq!(centers, members);
            }
        }
    }

    #[test]
    fn leaf_range_covers_children() {
        let cloud = random_cloud(500, 4);
        let tree = PartitionTree::build(&cloud, 3, 3, 2).unwrap();
        let total: usize = (0..tree.levels[0].len()).map(|i| tree.leaf_range(0, i).len()).sum();
        assert_eq!(total, tree.leaf_count());
        for i in 0..tree.levels[0].len() {
            assert_eq!(tree.node_members(0, i).len(), tree.levels[0][i].member_count as usize);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let cloud = random_cloud(10, 0);
        assert!(PartitionTree::build(&cloud, 1, 2, 0).is_err());
        assert!(PartitionTree::build(&cloud, 2, 0, 0).is_err());
        assert!(PartitionTree::build(&PointCloud::default(), 2, 2, 0).is_err());
    }
}
