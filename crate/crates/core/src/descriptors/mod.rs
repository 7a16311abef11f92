//! Per-pixel descriptor providers.
//!
//! The classifier only sees descriptor vectors, so the source of those
//! vectors is pluggable: [`OracleDescriptors`] synthesizes them from the
//! ground-truth 3D point behind each pixel, and [`FileDescriptors`] reads
//! descriptors computed offline by any external extractor (`SRCD` files).

mod file;
mod oracle;

pub use file::{decode_descriptor_file, encode_descriptor_file, FileDescriptors, DESCRIPTOR_MAGIC};
pub use oracle::{oracle_describe, OracleConfig, OracleDescriptors};

use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{DepthImage, PinholeCamera, Se3Pose};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite descriptor value in sample {0}")]
    NonFinite(usize),
    #[error("sample {index} pixel ({u}, {v}) outside the image")]
    OutOfBounds { index: usize, u: f64, v: f64 },
    #[error("unsupported descriptor file version {0}")]
    UnsupportedVersion(u32),
    #[error("bad descriptor file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DescriptorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Descriptor samples of one view. Values are stored row-major, one row of
/// `dim` entries per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    dim: usize,
    pixels: Vec<Vector2<f64>>,
    values: Vec<f64>,
    /// `(rows, cols)` when the samples form a complete regular grid.
    pub grid: Option<(u32, u32)>,
}

impl DescriptorMap {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            pixels: Vec::new(),
            values: Vec::new(),
            grid: None,
        }
    }

    pub fn from_parts(dim: usize, pixels: Vec<Vector2<f64>>, values: Vec<f64>) -> Result<Self, DescriptorError> {
        if dim == 0 || values.len() != pixels.len() * dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: pixels.len() * dim,
                actual: values.len(),
            });
        }
        let map = Self {
            dim,
            pixels,
            values,
            grid: None,
        };
        if let Some(i) = map.first_non_finite() {
            return Err(DescriptorError::NonFinite(i));
        }
        Ok(map)
    }

    pub fn push(&mut self, pixel: Vector2<f64>, descriptor: &[f64]) -> Result<(), DescriptorError> {
        if descriptor.len() != self.dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.dim,
                actual: descriptor.len(),
            });
        }
        if !descriptor.iter().all(|v| v.is_finite()) {
            return Err(DescriptorError::NonFinite(self.pixels.len()));
        }
        self.pixels.push(pixel);
        self.values.extend_from_slice(descriptor);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Vector2<f64>] {
        &self.pixels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Keeps only the samples at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in indices {
            out.pixels.push(self.pixels[i]);
            out.values.extend_from_slice(self.descriptor(i));
        }
        out
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite()).map(|i| i / self.dim)
    }

    /// Checks finiteness and that every pixel lies inside the image.
    pub fn validate(&self, camera: &PinholeCamera) -> Result<(), DescriptorError> {
        if let Some(i) = self.first_non_finite() {
            return Err(DescriptorError::NonFinite(i));
        }
        for (index, p) in self.pixels.iter().enumerate() {
            if !camera.contains(p) {
                return Err(DescriptorError::OutOfBounds { index, u: p.x, v: p.y });
            }
        }
        Ok(())
    }
}

/// One posed view to describe. `name` identifies the view for file-backed
/// providers; `stream` seeds per-view randomness.
#[derive(Clone, Copy, Debug)]
pub struct ViewInput<'a> {
    pub name: &'a str,
    pub stream: u64,
    pub depth: &'a DepthImage,
    pub pose: &'a Se3Pose,
    pub camera: &'a PinholeCamera,
    pub stride: u32,
}

pub trait DescriptorProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn describe_view(&self, view: &ViewInput<'_>) -> Result<DescriptorMap, DescriptorError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_checks_dimension_and_finiteness() {
        let mut map = DescriptorMap::new(2);
        map.push(Vector2::new(0.0, 0.0), &[1.0, 2.0]).unwrap();
        assert!(map.push(Vector2::new(0.0, 0.0), &[1.0]).is_err());
        assert!(map.push(Vector2::new(0.0, 0.0), &[1.0, f64::NAN]).is_err());
        assert_eq!(map.len(), 1);
        assert_eq!(map.descriptor(0), &[1.0, 2.0]);
    }

    #[test]
    fn validate_bounds() {
        let cam = PinholeCamera::centered(10.0, 4, 4).unwrap();
        let mut map = DescriptorMap::new(1);
        map.push(Vector2::new(3.0, 3.0), &[0.0]).unwrap();
        assert!(map.validate(&cam).is_ok());
        map.push(Vector2::new(4.0, 0.0), &[0.0]).unwrap();
        assert!(matches!(map.validate(&cam), Err(DescriptorError::OutOfBounds { index: 1, .. })));
    }
}
