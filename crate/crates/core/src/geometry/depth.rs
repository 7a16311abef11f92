use nalgebra::Vector2;

use super::GeometryError;

/// Single-channel z-depth image in meters. Values that are non-positive or
/// non-finite mark missing measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(GeometryError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// All pixels invalid.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = depth;
    }

    /// Valid depth at a pixel, if any.
    #[inline]
    pub fn valid(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.get(x, y);
        is_valid_depth(d).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| is_valid_depth(**d)).count()
    }

    /// Valid pixels on a `stride` grid, row-major.
    pub fn sample_grid(&self, stride: u32) -> impl Iterator<Item = (Vector2<f64>, f64)> + '_ {
        let stride = stride.max(1) as usize;
        (0..self.height).step_by(stride).flat_map(move |y| {
            (0..self.width)
                .step_by(stride)
                .filter_map(move |x| self.valid(x, y).map(|d| (Vector2::new(x as f64, y as f64), d)))
        })
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(DepthImage::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn grid_skips_invalid() {
        let img = DepthImage::new(2, 2, vec![1.0, 0.0, f64::NAN, -2.0]).unwrap();
        let samples: Vec<_> = img.sample_grid(1).collect();
        assert_eq!(samples, vec![(Vector2::new(0.0, 0.0), 1.0)]);
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn stride_doubling_quarters_samples() {
        let img = DepthImage::new(16, 16, vec![1.0; 256]).unwrap();
        assert_eq!(img.sample_grid(1).count(), 256);
        assert_eq!(img.sample_grid(2).count(), 64);
        assert_eq!(img.sample_grid(4).count(), 16);
    }
}
