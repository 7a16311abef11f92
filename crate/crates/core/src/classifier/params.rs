use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Network dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassifierShape {
    /// Descriptor dimension D.
    pub dim: usize,
    /// Hidden width of every base head.
    pub hidden: usize,
    /// Classes per level (the tree branching factor m).
    pub classes: usize,
    /// Number of levels n.
    pub levels: usize,
    /// Hidden width of the gamma / beta hyper networks.
    pub hyper_hidden: usize,
}

impl ClassifierShape {
    pub fn new(dim: usize, hidden: usize, classes: usize, levels: usize) -> Self {
        Self {
            dim,
            hidden,
            classes,
            levels,
            hyper_hidden: dim,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.dim > 0 && self.hidden > 0 && self.classes >= 2 && self.levels >= 1 && self.hyper_hidden > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    /// Hidden-layer weight, Glorot-uniform init.
    HiddenWeight,
    /// Output-layer weight or bias, zero init.
    Output,
    Bias,
    NormGain,
    NormBias,
}

/// One named block of the flat parameter vector. Weights are `rows x cols`
/// row-major with `rows = fan_out`, `cols = fan_in`; vectors have `cols = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub role: TensorRole,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one two-layer block `in -> hidden -> out`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MlpLayout {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: usize,
    pub b1: usize,
    pub gain: usize,
    pub bias: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LevelLayout {
    pub base: MlpLayout,
    pub gamma: Option<MlpLayout>,
    pub beta: Option<MlpLayout>,
}

fn push_mlp(specs: &mut Vec<TensorSpec>, prefix: &str, input: usize, hidden: usize, output: usize) -> MlpLayout {
    let mut add = |name: &str, rows: usize, cols: usize, role: TensorRole| {
        let offset = specs.last().map_or(0, |s| s.offset + s.len());
        specs.push(TensorSpec {
            name: format!("{prefix}.{name}"),
            offset,
            rows,
            cols,
            role,
        });
        offset
    };
    let w1 = add("w1", hidden, input, TensorRole::HiddenWeight);
    let b1 = add("b1", hidden, 1, TensorRole::Bias);
    let gain = add("norm_gain", hidden, 1, TensorRole::NormGain);
    let bias = add("norm_bias", hidden, 1, TensorRole::NormBias);
    let w2 = add("w2", output, hidden, TensorRole::Output);
    let b2 = add("b2", output, 1, TensorRole::Output);
    MlpLayout {
        input,
        hidden,
        output,
        w1,
        b1,
        gain,
        bias,
        w2,
        b2,
    }
}

/// Declared tensor order: for each level, the base head, then (levels >= 2)
/// the gamma network, then the beta network.
pub(crate) fn layout(shape: &ClassifierShape) -> (Vec<TensorSpec>, Vec<LevelLayout>) {
    let mut specs = Vec::new();
    let mut levels = Vec::with_capacity(shape.levels);
    for l in 0..shape.levels {
        let base = push_mlp(&mut specs, &format!("level{l}.base"), shape.dim, shape.hidden, shape.classes);
        let (gamma, beta) = if l == 0 {
            (None, None)
        } else {
            let input = l * shape.classes;
            (
                Some(push_mlp(&mut specs, &format!("level{l}.gamma"), input, shape.hyper_hidden, shape.dim)),
                Some(push_mlp(&mut specs, &format!("level{l}.beta"), input, shape.hyper_hidden, shape.dim)),
            )
        };
        levels.push(LevelLayout { base, gamma, beta });
    }
    (specs, levels)
}

/// All classifier weights in one flat vector, laid out by [`ClassifierParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    shape: ClassifierShape,
    data: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(shape: ClassifierShape) -> Self {
        let (specs, _) = layout(&shape);
        let len = specs.last().map_or(0, |s| s.offset + s.len());
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Glorot-uniform hidden weights, unit norm gains, zero biases and zero
    /// output layers. Zero outputs make every level start uniform and every
    /// hyper network start at the identity modulation.
    pub fn init(shape: ClassifierShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let mut r = rng::seeded(seed);
        for spec in p.tensors() {
            let slice = &mut p.data[spec.range()];
            match spec.role {
                TensorRole::HiddenWeight => {
                    let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                    for v in slice.iter_mut() {
                        *v = r.random_range(-limit..limit);
                    }
                }
                TensorRole::NormGain => slice.fill(1.0),
                TensorRole::Output | TensorRole::Bias | TensorRole::NormBias => slice.fill(0.0),
            }
        }
        p
    }

    pub fn from_data(shape: ClassifierShape, data: Vec<f64>) -> Option<Self> {
        (Self::zeros(shape).data.len() == data.len()).then_some(Self { shape, data })
    }

    pub fn shape(&self) -> &ClassifierShape {
        &self.shape
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        layout(&self.shape).0
    }

    pub(crate) fn level_layouts(&self) -> Vec<LevelLayout> {
        layout(&self.shape).1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors().into_iter().find(|s| s.name == name).map(|s| &self.data[s.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            data: vec![0.0; self.data.len()],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ClassifierParams, scale: f64) {
        assert_eq!(self.shape, other.shape, "parameter shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &ClassifierParams) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
