//! `SRCD` descriptor files: `"SRCD" | version u32 | dim u32 | count u32`
//! followed by `count` records of little-endian `f32`: `u v d[0] .. d[dim-1]`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use super::{DescriptorError, DescriptorMap, DescriptorProvider, ViewInput};

pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"SRCD";
const VERSION: u32 = 1;

pub fn encode_descriptor_file(map: &DescriptorMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.len() * (2 + map.dim()) * 4);
    out.extend_from_slice(&DESCRIPTOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(map.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for i in 0..map.len() {
        let p = map.pixels()[i];
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        for v in map.descriptor(i) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_descriptor_file(bytes: &[u8]) -> Result<DescriptorMap, DescriptorError> {
    if bytes.len() < 16 || bytes[..4] != DESCRIPTOR_MAGIC {
        return Err(DescriptorError::Format("missing SRCD magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(DescriptorError::UnsupportedVersion(version));
    }
    let dim = word(8) as usize;
    let count = word(12) as usize;
    if dim == 0 {
        return Err(DescriptorError::Format("zero descriptor dimension".into()));
    }
    let record = (2 + dim) * 4;
    let body = &bytes[16..];
    if Some(body.len()) != count.checked_mul(record) {
        return Err(DescriptorError::Format(format!(
            "expected {count} records of {record} bytes, found {} bytes",
            body.len()
        )));
    }
    let mut map = DescriptorMap::new(dim);
    let mut desc = vec![0.0; dim];
    for rec in body.chunks_exact(record) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64;
        for (d, slot) in desc.iter_mut().enumerate() {
            *slot = f(2 + d);
        }
        map.push(Vector2::new(f(0), f(1)), &desc)?;
    }
    Ok(map)
}

/// Reads precomputed descriptors from `<dir>/<view name>.srcd`.
#[derive(Clone, Debug)]
pub struct FileDescriptors {
    dir: PathBuf,
    dim: usize,
}

impl FileDescriptors {
    pub fn new(dir: impl Into<PathBuf>, dim: usize) -> Self {
        Self { dir: dir.into(), dim }
    }

    pub fn path_for(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.srcd"))
    }

    pub fn write(&self, name: &str, map: &DescriptorMap) -> Result<(), DescriptorError> {
        let path = self.path_for(name);
        fs::write(&path, encode_descriptor_file(map)).map_err(|e| DescriptorError::io(&path, e))
    }
}

fn read(path: &Path) -> Result<DescriptorMap, DescriptorError> {
    let bytes = fs::read(path).map_err(|e| DescriptorError::io(path, e))?;
    decode_descriptor_file(&bytes)
}

impl DescriptorProvider for FileDescriptors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn describe_view(&self, view: &ViewInput<'_>) -> Result<DescriptorMap, DescriptorError> {
        let map = read(&self.path_for(view.name))?;
        if map.dim() != self.dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.dim,
                actual: map.dim(),
            });
        }
        map.validate(view.camera)?;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthImage, PinholeCamera, Se3Pose};

    fn sample_map() -> DescriptorMap {
        let mut map = DescriptorMap::new(3);
        map.push(Vector2::new(1.0, 2.0), &[0.5, -0.25, 1.0]).unwrap();
        map.push(Vector2::new(3.0, 0.0), &[0.0, 2.0, -8.0]).unwrap();
        map
    }

    #[test]
    fn file_round_trip() {
        let map = sample_map();
        let bytes = encode_descriptor_file(&map);
        assert_eq!(bytes.len(), 16 + 2 * 5 * 4);
        assert_eq!(decode_descriptor_file(&bytes).unwrap(), map);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode_descriptor_file(&sample_map());
        bytes[4] = 2;
        assert!(matches!(decode_descriptor_file(&bytes), Err(DescriptorError::UnsupportedVersion(2))));
        let bytes = encode_descriptor_file(&sample_map());
        assert!(decode_descriptor_file(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn provider_reads_named_view() {
        let dir = tempfile::tempdir().unwrap();
        let provider = FileDescriptors::new(dir.path(), 3);
        provider.write("train_0000", &sample_map()).unwrap();
        let cam = PinholeCamera::centered(10.0, 4, 4).unwrap();
        let depth = DepthImage::empty(4, 4);
        let pose = Se3Pose::identity();
        let view = ViewInput { name: "train_0000", stream: 0, depth: &depth, pose: &pose, camera: &cam, stride: 1 };
        assert_eq!(provider.describe_view(&view).unwrap(), sample_map());
        let missing = ViewInput { name: "nope", ..view };
        assert!(provider.describe_view(&missing).is_err());
        let wrong_dim = FileDescriptors::new(dir.path(), 4);
        assert!(wrong_dim.describe_view(&view).is_err());
    }
}
