use nalgebra::Vector3;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DescriptorError, DescriptorMap, DescriptorProvider, ViewInput};
use crate::geometry::backproject;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Seeds the base embedding (the "extractor").
    pub seed: u64,
    pub dim: usize,
    /// Std of the per-observation Gaussian noise.
    pub noise_sigma: f64,
    /// Longest wavelength of the sinusoid bank, in scene units.
    pub scale: f64,
    /// Number of octaves the sinusoid wavelengths span below `scale`.
    pub octaves: u32,
    /// Strength of a fixed affine distortion of the base embedding, seeded by
    /// `domain_seed`. Emulates the domain gap between scenes.
    pub cross_scene_shift: f64,
    pub domain_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 128,
            noise_sigma: 0.0,
            scale: 4.0,
            octaves: 5,
            cross_scene_shift: 0.0,
            domain_seed: 0,
        }
    }
}

/// Synthetic descriptor extractor.
///
/// The base embedding of a 3D point is a fixed random linear projection
/// (a quarter of the channels) concatenated with a bank of sinusoids of random
/// directions, phases and multi-octave wavelengths. It depends only on the
/// point and the configuration, never on the camera, so repeated observations
/// of a point differ only by the injected noise.
#[derive(Clone, Debug)]
pub struct OracleDescriptors {
    config: OracleConfig,
    directions: Vec<Vector3<f64>>,
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    linear: usize,
    gain: Vec<f64>,
    offset: Vec<f64>,
}

impl OracleDescriptors {
    pub fn new(config: OracleConfig) -> Self {
        assert!(config.dim > 0, "descriptor dimension must be positive");
        assert!(config.noise_sigma >= 0.0, "noise must be non-negative");
        let mut r = rng::stream(config.seed, 0x0DE5);
        let dim = config.dim;
        let linear = dim / 4;
        let octaves = config.octaves.max(1);
        let mut directions = Vec::with_capacity(dim);
        let mut frequencies = Vec::with_capacity(dim);
        let mut phases = Vec::with_capacity(dim);
        for d in 0..dim {
            let v = loop {
                let v = Vector3::new(
                    StandardNormal.sample(&mut r),
                    StandardNormal.sample(&mut r),
                    StandardNormal.sample(&mut r),
                );
                let n: f64 = v.norm();
                if n > 1e-6 {
                    break v / n;
                }
            };
            directions.push(v);
            if d < linear {
                frequencies.push(1.0 / config.scale);
                phases.push(0.0);
            } else {
                let octave = ((d - linear) as u32) % octaves;
                let jitter = 1.0 + 0.5 * r.random::<f64>();
                frequencies.push(std::f64::consts::TAU * jitter * 2f64.powi(octave as i32) / config.scale);
                phases.push(r.random::<f64>() * std::f64::consts::TAU);
            }
        }
        let mut dr = rng::stream(config.domain_seed, 0xD0A1);
        let (gain, offset) = (0..dim)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut dr);
                let b: f64 = StandardNormal.sample(&mut dr);
                (1.0 + config.cross_scene_shift * a, config.cross_scene_shift * b)
            })
            .unzip();
        Self {
            config,
            directions,
            frequencies,
            phases,
            linear,
            gain,
            offset,
        }
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Noise-free embedding of a point.
    pub fn base(&self, point: &Vector3<f64>, out: &mut [f64]) {
        for d in 0..self.config.dim {
            let proj = self.directions[d].dot(point) * self.frequencies[d];
            let v = if d < self.linear { proj } else { (proj + self.phases[d]).sin() };
            out[d] = self.gain[d] * v + self.offset[d];
        }
    }

    /// Base embedding plus Gaussian noise drawn from `rng_stream`.
    pub fn describe(&self, point: &Vector3<f64>, noise_sigma: f64, rng_stream: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.config.dim];
        self.base(point, &mut out);
        if noise_sigma > 0.0 {
            let mut r = rng::stream(self.config.seed, rng_stream);
            for v in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += noise_sigma * z;
            }
        }
        out
    }
}

/// Free-function form of the oracle with default shape parameters.
pub fn oracle_describe(scene_seed: u64, dim: usize, point: &Vector3<f64>, noise_sigma: f64, rng_stream: u64) -> Vec<f64> {
    OracleDescriptors::new(OracleConfig {
        seed: scene_seed,
        dim,
        ..OracleConfig::default()
    })
    .describe(point, noise_sigma, rng_stream)
}

impl DescriptorProvider for OracleDescriptors {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn describe_view(&self, view: &ViewInput<'_>) -> Result<DescriptorMap, DescriptorError> {
        let stride = view.stride.max(1);
        let mut map = DescriptorMap::new(self.config.dim);
        let mut buf = vec![0.0; self.config.dim];
        let mut all_valid = true;
        for y in (0..view.depth.height()).step_by(stride as usize) {
            for x in (0..view.depth.width()).step_by(stride as usize) {
                let Some(d) = view.depth.valid(x, y) else {
                    all_valid = false;
                    continue;
                };
                let px = nalgebra::Vector2::new(x as f64, y as f64);
                let Ok(point) = backproject(view.pose, view.camera, &px, d) else {
                    all_valid = false;
                    continue;
                };
                self.base(&point, &mut buf);
                if self.config.noise_sigma > 0.0 {
                    let pixel_id = y as u64 * view.depth.width() as u64 + x as u64;
                    let mut r = rng::stream(self.config.seed, rng::derive_seed(view.stream, pixel_id));
                    for v in buf.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut r);
                        *v += self.config.noise_sigma * z;
                    }
                }
                map.push(px, &buf)?;
            }
        }
        if all_valid && !map.is_empty() {
            let rows = view.depth.height().div_ceil(stride);
            let cols = view.depth.width().div_ceil(stride);
            map.grid = Some((rows, cols));
        }
        Ok(map)
    }
}
