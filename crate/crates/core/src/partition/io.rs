//! Tree persistence.
//!
//! Binary layout (little-endian), version 1:
//!
//! ```text
//! "SRCT" | version u32 | label_base u32 | m u32 | n u32
//! level node counts: n x u32
//! nodes, level by level: centroid 3 x f64 | first_child u32 | child_count u32 | member_count u32
//! leaf member offsets: (leaves + 1) x u32
//! member ids: total x u32
//! member points: total x (3 x f64)
//! q u32 | has_centers u8
//! if has_centers: center offsets (leaves + 1) x u32 | centers: count x (3 x f64)
//! ```
//!
//! `label_base` records the class-id convention; only zero-based labels are
//! written.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PartitionError, PartitionTree, TreeNode};

pub const TREE_MAGIC: [u8; 4] = *b"SRCT";
pub const TREE_FORMAT_VERSION: u32 = 1;
const LABEL_BASE: u32 = 0;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PartitionError> {
        if self.pos + n > self.bytes.len() {
            return Err(PartitionError::Format("truncated tree file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PartitionError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PartitionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, PartitionError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, PartitionError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, PartitionError> {
        (0..n).map(|_| self.u32()).collect()
    }

    fn vec3s(&mut self, n: usize) -> Result<Vec<Vector3<f64>>, PartitionError> {
        (0..n).map(|_| self.vec3()).collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

impl PartitionTree {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&TREE_MAGIC);
        put_u32(&mut out, TREE_FORMAT_VERSION);
        put_u32(&mut out, LABEL_BASE);
        put_u32(&mut out, self.m);
        put_u32(&mut out, self.n);
        for level in &self.levels {
            put_u32(&mut out, level.len() as u32);
        }
        for node in self.levels.iter().flatten() {
            put_vec3(&mut out, &node.centroid);
            put_u32(&mut out, node.first_child);
            put_u32(&mut out, node.child_count);
            put_u32(&mut out, node.member_count);
        }
        for &o in &self.member_offsets {
            put_u32(&mut out, o);
        }
        for &i in &self.member_ids {
            put_u32(&mut out, i);
        }
        for p in &self.member_points {
            put_vec3(&mut out, p);
        }
        put_u32(&mut out, self.q);
        out.push(u8::from(self.has_leaf_centers()));
        if self.has_leaf_centers() {
            for &o in &self.center_offsets {
                put_u32(&mut out, o);
            }
            for c in &self.centers {
                put_vec3(&mut out, c);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PartitionError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != TREE_MAGIC {
            return Err(PartitionError::Format("missing SRCT magic".into()));
        }
        let version = r.u32()?;
        if version != TREE_FORMAT_VERSION {
            return Err(PartitionError::UnsupportedVersion(version));
        }
        let base = r.u32()?;
        if base != LABEL_BASE {
            return Err(PartitionError::Format(format!("unsupported label base {base}")));
        }
        let m = r.u32()?;
        let n = r.u32()?;
        if m < 2 || n < 1 || n > 16 {
            return Err(PartitionError::Format(format!("implausible tree shape m={m} n={n}")));
        }
        let counts = r.u32s(n as usize)?;
        let mut levels = Vec::with_capacity(n as usize);
        for &c in &counts {
            let mut nodes = Vec::with_capacity(c as usize);
            for _ in 0..c {
                nodes.push(TreeNode {
                    centroid: r.vec3()?,
                    first_child: r.u32()?,
                    child_count: r.u32()?,
                    member_count: r.u32()?,
                });
            }
            levels.push(nodes);
        }
        let leaves = *counts.last().expect("n >= 1") as usize;
        let member_offsets = r.u32s(leaves + 1)?;
        let total = *member_offsets.last().expect("non-empty") as usize;
        let member_ids = r.u32s(total)?;
        let member_points = r.vec3s(total)?;
        let q = r.u32()?;
        let (center_offsets, centers) = if r.u8()? != 0 {
            let offsets = r.u32s(leaves + 1)?;
            let count = *offsets.last().expect("non-empty") as usize;
            let centers = r.vec3s(count)?;
            (offsets, centers)
        } else {
            (Vec::new(), Vec::new())
        };
        if r.pos != bytes.len() {
            return Err(PartitionError::Format("trailing bytes after tree".into()));
        }
        let tree = Self {
            m,
            n,
            levels,
            member_offsets,
            member_ids,
            member_points,
            q,
            center_offsets,
            centers,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<(), PartitionError> {
        let bad = |msg: &str| Err(PartitionError::Format(msg.into()));
        if self.levels[0].len() > self.m as usize {
            return bad("too many root children");
        }
        for l in 0..self.levels.len() {
            let next_len = self.levels.get(l + 1).map_or(0, Vec::len);
            let mut expected_first = 0u32;
            for node in &self.levels[l] {
                if node.child_count > self.m {
                    return bad("node has more than m children");
                }
                if l + 1 < self.levels.len() {
                    if node.first_child != expected_first || (node.first_child + node.child_count) as usize > next_len {
                        return bad("inconsistent child ranges");
                    }
                    expected_first += node.child_count;
                }
            }
            if l + 1 < self.levels.len() && expected_first as usize != next_len {
                return bad("orphan nodes");
            }
        }
        if self.member_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("decreasing member offsets");
        }
        if !self.center_offsets.is_empty() && self.center_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("decreasing center offsets");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PartitionError> {
        fs::write(path, self.to_bytes()).map_err(|e| PartitionError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PartitionError> {
        let bytes = fs::read(path).map_err(|e| PartitionError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_json(&self) -> String {
        let dump = TreeDump {
            format_version: TREE_FORMAT_VERSION,
            label_base: LABEL_BASE,
            m: self.m,
            n: self.n,
            q: self.q,
            levels: self.levels.clone(),
            leaves: (0..self.leaf_count())
                .map(|leaf| LeafDump {
                    member_ids: self.leaf_member_ids(leaf).to_vec(),
                    members: self.leaf_members(leaf).iter().map(|p| [p.x, p.y, p.z]).collect(),
                    centers: self
                        .has_leaf_centers()
                        .then(|| self.leaf_centers(leaf).iter().map(|p| [p.x, p.y, p.z]).collect()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PartitionError> {
        let dump: TreeDump = serde_json::from_str(text).map_err(|e| PartitionError::Format(e.to_string()))?;
        if dump.format_version != TREE_FORMAT_VERSION {
            return Err(PartitionError::UnsupportedVersion(dump.format_version));
        }
        if dump.label_base != LABEL_BASE {
            return Err(PartitionError::Format(format!("unsupported label base {}", dump.label_base)));
        }
        if dump.n == 0 || dump.levels.len() != dump.n as usize || dump.m < 2 {
            return Err(PartitionError::Format("inconsistent tree shape".into()));
        }
        let leaves = dump.levels.last().map_or(0, Vec::len);
        if dump.leaves.len() != leaves {
            return Err(PartitionError::Format("leaf table does not match last level".into()));
        }
        let has_centers = dump.leaves.iter().all(|l| l.centers.is_some()) && !dump.leaves.is_empty();
        let mut member_offsets = vec![0u32];
        let mut member_ids = Vec::new();
        let mut member_points = Vec::new();
        let mut center_offsets = if has_centers { vec![0u32] } else { Vec::new() };
        let mut centers = Vec::new();
        for leaf in dump.leaves {
            if leaf.member_ids.len() != leaf.members.len() {
                return Err(PartitionError::Format("member ids and points differ in length".into()));
            }
            member_ids.extend(leaf.member_ids);
            member_points.extend(leaf.members.iter().map(|p| Vector3::from(*p)));
            member_offsets.push(member_ids.len() as u32);
            if has_centers {
                centers.extend(leaf.centers.unwrap_or_default().iter().map(|p| Vector3::from(*p)));
                center_offsets.push(centers.len() as u32);
            }
        }
        let tree = Self {
            m: dump.m,
            n: dump.n,
            levels: dump.levels,
            member_offsets,
            member_ids,
            member_points,
            q: dump.q,
            center_offsets,
            centers,
        };
        tree.check_structure()?;
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize)]
struct TreeDump {
    format_version: u32,
    label_base: u32,
    m: u32,
    n: u32,
    q: u32,
    levels: Vec<Vec<TreeNode>>,
    leaves: Vec<LeafDump>,
}

#[derive(Serialize, Deserialize)]
struct LeafDump {
    member_ids: Vec<u32>,
    members: Vec<[f64; 3]>,
    #[serde(default)]
    centers: Option<Vec<[f64; 3]>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use rand::Rng as _;

    fn tree() -> PartitionTree {
        let mut rng = crate::rng::seeded(8);
        let cloud = PointCloud::from_points(
            (0..400)
                .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
                .collect(),
        );
        PartitionTree::build(&cloud, 4, 2, 3).unwrap().cluster_leaves(3, 1).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let t = tree();
        let back = PartitionTree::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn json_round_trip() {
        let t = tree();
        let back = PartitionTree::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn unknown_versions_rejected() {
        let t = tree();
        let mut bytes = t.to_bytes();
        bytes[4] = 9;
        assert!(matches!(PartitionTree::from_bytes(&bytes), Err(PartitionError::UnsupportedVersion(9))));
        let json = t.to_json().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(PartitionTree::from_json(&json), Err(PartitionError::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = tree().to_bytes();
        assert!(PartitionTree::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(PartitionTree::from_bytes(b"SRCX").is_err());
    }
}
