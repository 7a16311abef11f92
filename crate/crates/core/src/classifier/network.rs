use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use super::params::{ClassifierParams, LevelLayout, MlpLayout};
use super::ClassifierError;
use crate::descriptors::DescriptorMap;
use crate::partition::RegionLabel;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Descriptors of one view as a `samples x dim` matrix, with per-level class
/// targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub(crate) x: DMatrix<f64>,
    /// `targets[level][sample]`.
    pub(crate) targets: Vec<Vec<u32>>,
}

impl LabeledBatch {
    pub fn new(map: &DescriptorMap, labels: &[RegionLabel]) -> Result<Self, ClassifierError> {
        if map.len() != labels.len() {
            return Err(ClassifierError::LabelCount {
                samples: map.len(),
                labels: labels.len(),
            });
        }
        let levels = labels.first().map_or(0, RegionLabel::levels);
        let mut targets = vec![Vec::with_capacity(labels.len()); levels];
        for label in labels {
            if label.levels() != levels {
                return Err(ClassifierError::LabelDepth {
                    expected: levels,
                    actual: label.levels(),
                });
            }
            for (t, &a) in targets.iter_mut().zip(&label.path) {
                t.push(a);
            }
        }
        Ok(Self {
            x: descriptor_matrix(map),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn levels(&self) -> usize {
        self.targets.len()
    }

    pub fn labels(&self, m: u32) -> Vec<RegionLabel> {
        (0..self.len())
            .map(|i| RegionLabel::from_path(self.targets.iter().map(|t| t[i]).collect(), m))
            .collect()
    }
}

pub(crate) fn descriptor_matrix(map: &DescriptorMap) -> DMatrix<f64> {
    DMatrix::from_row_slice(map.len(), map.dim(), map.values())
}

/// Per-level class probabilities for a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelProbs {
    /// `levels[l]` is `samples x classes`.
    pub levels: Vec<DMatrix<f64>>,
}

impl LevelProbs {
    pub fn samples(&self) -> usize {
        self.levels.first().map_or(0, DMatrix::nrows)
    }

    pub fn row(&self, level: usize, sample: usize) -> Vec<f64> {
        self.levels[level].row(sample).iter().copied().collect()
    }

    /// Hard label of one sample.
    pub fn compose(&self, sample: usize, m: u32) -> RegionLabel {
        let rows: Vec<Vec<f64>> = (0..self.levels.len()).map(|l| self.row(l, sample)).collect();
        compose_label(&rows, m)
    }

    pub fn compose_all(&self, m: u32) -> Vec<RegionLabel> {
        (0..self.samples()).map(|i| self.compose(i, m)).collect()
    }
}

/// Per-level argmax (lowest index on ties) folded into a region label.
pub fn compose_label<P: AsRef<[f64]>>(levels: &[P], m: u32) -> RegionLabel {
    let path = levels.iter().map(|p| argmax(p.as_ref()) as u32).collect();
    RegionLabel::from_path(path, m)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Elementwise feature modulation `gamma * features + beta`, applied row-wise.
pub fn modulate(features: &DMatrix<f64>, gamma: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(features.shape(), gamma.shape(), "gamma shape");
    assert_eq!(features.shape(), beta.shape(), "beta shape");
    features.component_mul(gamma) + beta
}

fn transposed_weight(p: &[f64], offset: usize, fan_in: usize, fan_out: usize) -> DMatrixView<'_, f64> {
    // a row-major (fan_out x fan_in) block is a column-major (fan_in x fan_out) matrix
    DMatrixView::from_slice(&p[offset..offset + fan_in * fan_out], fan_in, fan_out)
}

fn transposed_weight_mut(p: &mut [f64], offset: usize, fan_in: usize, fan_out: usize) -> DMatrixViewMut<'_, f64> {
    DMatrixViewMut::from_slice(&mut p[offset..offset + fan_in * fan_out], fan_in, fan_out)
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &[f64]) {
    for (j, &b) in bias.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(b);
    }
}

pub(crate) struct MlpCache {
    input: DMatrix<f64>,
    zhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    pre_relu: DMatrix<f64>,
    act: DMatrix<f64>,
}

/// `affine -> layer norm -> ReLU -> affine`.
pub(crate) fn mlp_forward(p: &[f64], l: &MlpLayout, input: DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
    let rows = input.nrows();
    let mut z = &input * transposed_weight(p, l.w1, l.input, l.hidden);
    add_row_bias(&mut z, &p[l.b1..l.b1 + l.hidden]);
    let gain = &p[l.gain..l.gain + l.hidden];
    let bias = &p[l.bias..l.bias + l.hidden];
    let h = l.hidden as f64;
    let mut zhat = DMatrix::zeros(rows, l.hidden);
    let mut pre_relu = DMatrix::zeros(rows, l.hidden);
    let mut inv_std = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = z.row(i);
        let mean = row.sum() / h;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(s);
        for j in 0..l.hidden {
            let zh = (z[(i, j)] - mean) * s;
            zhat[(i, j)] = zh;
            pre_relu[(i, j)] = gain[j] * zh + bias[j];
        }
    }
    let act = pre_relu.map(|v| v.max(0.0));
    let mut out = &act * transposed_weight(p, l.w2, l.hidden, l.output);
    add_row_bias(&mut out, &p[l.b2..l.b2 + l.output]);
    (
        out,
        MlpCache {
            input,
            zhat,
            inv_std,
            pre_relu,
            act,
        },
    )
}

/// Accumulates parameter gradients into `g` and returns the input gradient
/// when requested.
pub(crate) fn mlp_backward(
    p: &[f64],
    l: &MlpLayout,
    cache: &MlpCache,
    dout: &DMatrix<f64>,
    g: &mut [f64],
    want_input: bool,
) -> Option<DMatrix<f64>> {
    let rows = dout.nrows();
    for k in 0..l.output {
        g[l.b2 + k] += dout.column(k).sum();
    }
    transposed_weight_mut(g, l.w2, l.hidden, l.output).gemm_tr(1.0, &cache.act, dout, 1.0);
    let dact = dout * transposed_weight(p, l.w2, l.hidden, l.output).transpose();

    let gain = &p[l.gain..l.gain + l.hidden];
    let h = l.hidden as f64;
    let mut dz = DMatrix::zeros(rows, l.hidden);
    let mut dgain = vec![0.0; l.hidden];
    let mut dbias = vec![0.0; l.hidden];
    let mut dzhat = vec![0.0; l.hidden];
    for i in 0..rows {
        let mut mean_d = 0.0;
        let mut mean_dz = 0.0;
        for j in 0..l.hidden {
            let dy = if cache.pre_relu[(i, j)] > 0.0 { dact[(i, j)] } else { 0.0 };
            let zh = cache.zhat[(i, j)];
            dgain[j] += dy * zh;
            dbias[j] += dy;
            dzhat[j] = dy * gain[j];
            mean_d += dzhat[j];
            mean_dz += dzhat[j] * zh;
        }
        mean_d /= h;
        mean_dz /= h;
        let s = cache.inv_std[i];
        for j in 0..l.hidden {
            dz[(i, j)] = s * (dzhat[j] - mean_d - cache.zhat[(i, j)] * mean_dz);
        }
    }
    for j in 0..l.hidden {
        g[l.gain + j] += dgain[j];
        g[l.bias + j] += dbias[j];
        g[l.b1 + j] += dz.column(j).sum();
    }
    transposed_weight_mut(g, l.w1, l.input, l.hidden).gemm_tr(1.0, &cache.input, &dz, 1.0);
    want_input.then(|| &dz * transposed_weight(p, l.w1, l.input, l.hidden).transpose())
}

/// Row-wise softmax; also returns row-wise log-sum-exp.
pub(crate) fn softmax_rows(logits: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut probs = logits.clone();
    let mut lse = Vec::with_capacity(logits.nrows());
    for i in 0..logits.nrows() {
        let max = logits.row(i).max();
        let sum: f64 = logits.row(i).iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        lse.push(log_z);
        for j in 0..logits.ncols() {
            probs[(i, j)] = (logits[(i, j)] - log_z).exp();
        }
    }
    (probs, lse)
}

fn one_hot_inputs(targets: &[Vec<u32>], level: usize, rows: usize, m: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(rows, level * m);
    for (k, t) in targets.iter().take(level).enumerate() {
        for (i, &a) in t.iter().enumerate() {
            h[(i, k * m + a as usize)] = 1.0;
        }
    }
    h
}

fn soft_inputs(probs: &[DMatrix<f64>], rows: usize, m: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(rows, probs.len() * m);
    for (k, p) in probs.iter().enumerate() {
        h.columns_mut(k * m, m).copy_from(p);
    }
    h
}

struct LevelForward {
    logits: DMatrix<f64>,
    base: MlpCache,
    hyper: Option<(MlpCache, MlpCache, DMatrix<f64>)>,
}

fn level_forward(p: &[f64], layout: &LevelLayout, x: &DMatrix<f64>, hyper_input: Option<DMatrix<f64>>) -> LevelForward {
    match (hyper_input, layout.gamma.as_ref(), layout.beta.as_ref()) {
        (Some(hin), Some(gl), Some(bl)) => {
            let (gamma_out, gcache) = mlp_forward(p, gl, hin.clone());
            let (beta, bcache) = mlp_forward(p, bl, hin);
            let gamma = gamma_out.add_scalar(1.0);
            let xm = modulate(x, &gamma, &beta);
            let (logits, base) = mlp_forward(p, &layout.base, xm);
            LevelForward {
                logits,
                base,
                hyper: Some((gcache, bcache, x.clone())),
            }
        }
        _ => {
            let (logits, base) = mlp_forward(p, &layout.base, x.clone());
            LevelForward { logits, base, hyper: None }
        }
    }
}

fn check_dim(params: &ClassifierParams, dim: usize) -> Result<(), ClassifierError> {
    if params.shape().dim != dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: params.shape().dim,
            actual: dim,
        });
    }
    Ok(())
}

/// Class probabilities of every level. With `teacher` labels the hyper
/// networks see ground-truth one-hot vectors; otherwise they see the
/// predicted distributions of all previous levels.
pub fn forward(
    params: &ClassifierParams,
    desc: &DescriptorMap,
    teacher: Option<&[RegionLabel]>,
) -> Result<LevelProbs, ClassifierError> {
    check_dim(params, desc.dim())?;
    let x = descriptor_matrix(desc);
    let targets = match teacher {
        Some(labels) => Some(LabeledBatch::new(desc, labels)?.targets),
        None => None,
    };
    Ok(forward_matrix(params, &x, targets.as_deref()))
}

pub(crate) fn forward_matrix(params: &ClassifierParams, x: &DMatrix<f64>, targets: Option<&[Vec<u32>]>) -> LevelProbs {
    let shape = params.shape();
    let p = params.data();
    let rows = x.nrows();
    let mut levels: Vec<DMatrix<f64>> = Vec::with_capacity(shape.levels);
    for (l, layout) in params.level_layouts().iter().enumerate() {
        let hin = (l > 0).then(|| match targets {
            Some(t) => one_hot_inputs(t, l, rows, shape.classes),
            None => soft_inputs(&levels, rows, shape.classes),
        });
        let out = level_forward(p, layout, x, hin);
        levels.push(softmax_rows(&out.logits).0);
    }
    LevelProbs { levels }
}

/// Loss, gradient and teacher-forced diagnostics for one batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean over samples of the summed per-level cross-entropy.
    pub loss: f64,
    pub level_loss: Vec<f64>,
    pub level_accuracy: Vec<f64>,
    pub grad: ClassifierParams,
}

/// Teacher-forced cross-entropy and its exact gradient. Levels are
/// independent under teacher forcing, so they are evaluated in parallel and
/// reduced in level order.
pub fn loss_and_grad(params: &ClassifierParams, batch: &LabeledBatch) -> Result<LossOutput, ClassifierError> {
    let shape = *params.shape();
    check_dim(params, batch.dim())?;
    if batch.levels() != shape.levels {
        return Err(ClassifierError::LabelDepth {
            expected: shape.levels,
            actual: batch.levels(),
        });
    }
    if batch.is_empty() {
        return Err(ClassifierError::EmptyBatch);
    }
    if let Some(bad) = batch.targets.iter().flatten().find(|&&a| a as usize >= shape.classes) {
        return Err(ClassifierError::ClassOutOfRange(*bad));
    }
    let p = params.data();
    let rows = batch.len();
    let inv_rows = 1.0 / rows as f64;
    let layouts = params.level_layouts();

    let per_level: Vec<(f64, f64, Vec<f64>)> = layouts
        .par_iter()
        .enumerate()
        .map(|(l, layout)| {
            let hin = (l > 0).then(|| one_hot_inputs(&batch.targets, l, rows, shape.classes));
            let fwd = level_forward(p, layout, &batch.x, hin);
            let (probs, lse) = softmax_rows(&fwd.logits);
            let targets = &batch.targets[l];
            let mut loss = 0.0;
            let mut correct = 0usize;
            let mut dlogits = probs.clone();
            for i in 0..rows {
                let t = targets[i] as usize;
                loss += lse[i] - fwd.logits[(i, t)];
                if argmax(probs.row(i).transpose().as_slice()) == t {
                    correct += 1;
                }
                dlogits[(i, t)] -= 1.0;
            }
            dlogits *= inv_rows;
            let mut g = vec![0.0; p.len()];
            let dxm = mlp_backward(p, &layout.base, &fwd.base, &dlogits, &mut g, fwd.hyper.is_some());
            if let (Some((gcache, bcache, x)), Some(dxm), Some(gl), Some(bl)) =
                (fwd.hyper.as_ref(), dxm, layout.gamma.as_ref(), layout.beta.as_ref())
            {
                let dgamma = dxm.component_mul(x);
                mlp_backward(p, gl, gcache, &dgamma, &mut g, false);
                mlp_backward(p, bl, bcache, &dxm, &mut g, false);
            }
            (loss * inv_rows, correct as f64 * inv_rows, g)
        })
        .collect();

    let mut grad = params.zeros_like();
    let mut level_loss = Vec::with_capacity(shape.levels);
    let mut level_accuracy = Vec::with_capacity(shape.levels);
    for (loss, acc, g) in per_level {
        level_loss.push(loss);
        level_accuracy.push(acc);
        for (a, b) in grad.data_mut().iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(LossOutput {
        loss: level_loss.iter().sum(),
        level_loss,
        level_accuracy,
        grad,
    })
}

/// Fraction of samples whose full predicted label (no teacher forcing)
/// matches the target.
pub fn region_accuracy(params: &ClassifierParams, batches: &[LabeledBatch]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for b in batches {
        let probs = forward_matrix(params, &b.x, None);
        for i in 0..b.len() {
            total += 1;
            if (0..b.levels()).all(|l| argmax(probs.levels[l].row(i).transpose().as_slice()) == b.targets[l][i] as usize) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
