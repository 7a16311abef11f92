//! Correspondence dump: a header line `N q`, then one line per entry
//! `u v k x1 y1 z1 ... xk yk zk`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{Correspondence, CorrespondenceSet, PoseError};
use crate::geometry::PinholeCamera;

pub fn format_correspondences(set: &CorrespondenceSet) -> String {
    let mut out = format!("{} {}\n", set.len(), set.max_candidates());
    for e in &set.entries {
        write!(out, "{:?} {:?} {}", e.pixel.x, e.pixel.y, e.candidates.len()).unwrap();
        for c in &e.candidates {
            write!(out, " {:?} {:?} {:?}", c.x, c.y, c.z).unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> PoseError {
    PoseError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_correspondences(text: &str, camera: PinholeCamera) -> Result<CorrespondenceSet, PoseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
    let [n, q] = head[..] else {
        return Err(parse_err(hline, "header must be `N q`"));
    };
    let mut entries = Vec::with_capacity(n);
    for (line, text) in lines {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(line, format!("{e}")))?;
        if nums.len() < 3 {
            return Err(parse_err(line, "expected `u v k ...`"));
        }
        let k = nums[2];
        if k.fract() != 0.0 || k < 1.0 || k as usize > q {
            return Err(parse_err(line, format!("candidate count {k} not in 1..={q}")));
        }
        let k = k as usize;
        if nums.len() != 3 + 3 * k {
            return Err(parse_err(line, format!("expected {} values, found {}", 3 + 3 * k, nums.len())));
        }
        let candidates = nums[3..].chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        entries.push(Correspondence::new(Vector2::new(nums[0], nums[1]), candidates));
    }
    if entries.len() != n {
        return Err(parse_err(hline, format!("header declares {n} entries, found {}", entries.len())));
    }
    let set = CorrespondenceSet::new(entries, camera);
    set.validate()?;
    Ok(set)
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<(), PoseError> {
    fs::write(path, format_correspondences(set)).map_err(|source| PoseError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_correspondences(path: &Path, camera: PinholeCamera) -> Result<CorrespondenceSet, PoseError> {
    let text = fs::read_to_string(path).map_err(|source| PoseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_correspondences(&text, camera)
}
