//! Plain file formats for poses, depth rasters and point clouds.
//!
//! * Trajectory: one camera-to-world pose per line, `tx ty tz qx qy qz qw`.
//! * Depth raster: 16-byte header (`SRDM`, width `u32`, height `u32`, scale
//!   `f32`, all little-endian) followed by row-major `u16` samples. A stored
//!   value `v` decodes to `v * scale` meters; `0` marks a missing pixel.
//! * Depth text matrix: one image row per line, whitespace separated meters.
//! * Point cloud: `x y z` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{is_valid_depth, DepthImage, GeometryError, PointCloud, Se3Pose};

pub const DEPTH_MAGIC: [u8; 4] = *b"SRDM";
const DEPTH_HEADER_LEN: usize = 16;

fn io_err(path: &Path, source: std::io::Error) -> GeometryError {
    GeometryError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>, GeometryError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| GeometryError::Parse {
                line: lineno,
                message: format!("{tok:?}: {e}"),
            })
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_trajectory(poses: &[Se3Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let t = p.translation();
        let q = p.rotation().quaternion();
        writeln!(
            out,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .expect("write to string");
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Vec<Se3Pose>, GeometryError> {
    content_lines(text)
        .map(|(lineno, line)| {
            let v = parse_floats(line, lineno)?;
            if v.len() != 7 {
                return Err(GeometryError::Parse {
                    line: lineno,
                    message: format!("expected 7 values, found {}", v.len()),
                });
            }
            Se3Pose::from_components(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]]).ok_or(
                GeometryError::Parse {
                    line: lineno,
                    message: "degenerate quaternion".into(),
                },
            )
        })
        .collect()
}

pub fn write_trajectory(path: &Path, poses: &[Se3Pose]) -> Result<(), GeometryError> {
    fs::write(path, format_trajectory(poses)).map_err(|e| io_err(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Se3Pose>, GeometryError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_trajectory(&text)
}

/// Scale that fits the largest valid depth into the `u16` range, never finer
/// than 0.1 mm.
pub fn auto_depth_scale(depth: &DepthImage) -> f32 {
    let max = depth
        .data()
        .iter()
        .copied()
        .filter(|d| is_valid_depth(*d))
        .fold(0.0f64, f64::max);
    (max / 65_000.0).max(1e-4) as f32
}

pub fn encode_depth_raster(depth: &DepthImage, scale: f32) -> Result<Vec<u8>, GeometryError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeometryError::Format(format!("invalid depth scale {scale}")));
    }
    let mut out = Vec::with_capacity(DEPTH_HEADER_LEN + depth.data().len() * 2);
    out.extend_from_slice(&DEPTH_MAGIC);
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    for &d in depth.data() {
        let v = if is_valid_depth(d) {
            let q = (d / scale as f64).round();
            if q > u16::MAX as f64 {
                return Err(GeometryError::Format(format!("depth {d} overflows scale {scale}")));
            }
            (q as u16).max(1)
        } else {
            0
        };
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_depth_raster(bytes: &[u8]) -> Result<DepthImage, GeometryError> {
    if bytes.len() < DEPTH_HEADER_LEN || bytes[..4] != DEPTH_MAGIC {
        return Err(GeometryError::Format("missing depth raster magic".into()));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let width = u32::from_le_bytes(word(4));
    let height = u32::from_le_bytes(word(8));
    let scale = f32::from_le_bytes(word(12)) as f64;
    let n = width as usize * height as usize;
    let body = &bytes[DEPTH_HEADER_LEN..];
    if body.len() != n * 2 {
        return Err(GeometryError::Format(format!(
            "depth raster body has {} bytes, expected {}",
            body.len(),
            n * 2
        )));
    }
    let data = body
        .chunks_exact(2)
        .map(|c| {
            let v = u16::from_le_bytes([c[0], c[1]]);
            if v == 0 {
                0.0
            } else {
                v as f64 * scale
            }
        })
        .collect();
    DepthImage::new(width, height, data)
}

pub fn write_depth_raster(path: &Path, depth: &DepthImage) -> Result<(), GeometryError> {
    let bytes = encode_depth_raster(depth, auto_depth_scale(depth))?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Reads either a binary raster or, when the magic is absent, a text matrix.
pub fn read_depth(path: &Path) -> Result<DepthImage, GeometryError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(&DEPTH_MAGIC) {
        decode_depth_raster(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| GeometryError::Format("depth file is neither raster nor text".into()))?;
        parse_depth_text(&text)
    }
}

pub fn parse_depth_text(text: &str) -> Result<DepthImage, GeometryError> {
    let mut width = None;
    let mut data = Vec::new();
    let mut height = 0u32;
    for (lineno, line) in content_lines(text) {
        let row = parse_floats(line, lineno)?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(GeometryError::Parse {
                    line: lineno,
                    message: format!("row has {} values, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        data.extend(row);
        height += 1;
    }
    DepthImage::new(width.unwrap_or(0) as u32, height, data)
}

pub fn format_point_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for p in &cloud.points {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).expect("write to string");
    }
    out
}

pub fn parse_point_cloud(text: &str) -> Result<PointCloud, GeometryError> {
    let points = content_lines(text)
        .map(|(lineno, line)| {
            let v = parse_floats(line, lineno)?;
            if v.len() != 3 || !v.iter().all(|x| x.is_finite()) {
                return Err(GeometryError::Parse {
                    line: lineno,
                    message: "expected 3 finite values".into(),
                });
            }
            Ok(Vector3::new(v[0], v[1], v[2]))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PointCloud::from_points(points))
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), GeometryError> {
    fs::write(path, format_point_cloud(cloud)).map_err(|e| io_err(path, e))
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud, GeometryError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_point_cloud(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let poses = vec![
            Se3Pose::identity(),
            Se3Pose::from_axis_angle(Vector3::new(0.1, 0.2, -0.3), Vector3::new(1.5, -2.0, 0.25)),
        ];
        let text = format_trajectory(&poses);
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.translation(), b.translation());
            assert!((a.rotation().quaternion() - b.rotation().quaternion()).norm() < 1e-15);
        }
    }

    #[test]
    fn trajectory_rejects_short_lines() {
        assert!(parse_trajectory("1 2 3 0 0 0\n").is_err());
        assert!(parse_trajectory("1 2 3 0 0 0 0\n").is_err());
    }

    #[test]
    fn raster_round_trip_within_quantization() {
        let depth = DepthImage::new(3, 2, vec![1.0, 0.0, 2.5, f64::NAN, 0.1234, 6.0]).unwrap();
        let bytes = encode_depth_raster(&depth, 1e-4).unwrap();
        assert_eq!(bytes.len(), 16 + 12);
        let back = decode_depth_raster(&bytes).unwrap();
        assert_eq!(back.width(), 3);
        for (a, b) in depth.data().iter().zip(back.data()) {
            if is_valid_depth(*a) {
                assert!((a - b).abs() < 1e-4);
            } else {
                assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn raster_rejects_bad_magic_and_truncation() {
        assert!(decode_depth_raster(b"XXXX000000000000").is_err());
        let depth = DepthImage::new(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_depth_raster(&depth, 1e-3).unwrap();
        assert!(decode_depth_raster(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn text_matrix() {
        let d = parse_depth_text("1 2 0\n# comment\n0.5 -1 3\n").unwrap();
        assert_eq!((d.width(), d.height()), (3, 2));
        assert_eq!(d.valid(0, 1), Some(0.5));
        assert_eq!(d.valid(1, 1), None);
        assert!(parse_depth_text("1 2\n3\n").is_err());
    }

    #[test]
    fn cloud_round_trip() {
        let cloud = PointCloud::from_points(vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 1e-9, 7.0)]);
        let back = parse_point_cloud(&format_point_cloud(&cloud)).unwrap();
        assert_eq!(back.points, cloud.points);
    }
}
