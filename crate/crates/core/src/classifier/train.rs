use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_grad, LabeledBatch, LossOutput};
use super::params::ClassifierParams;
use super::ClassifierError;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Shuffles the view order of every pass over the dataset.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 9000,
            learning_rate: 5e-4,
            seed: 0,
        }
    }
}

/// Adam with the usual constants.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grad: &ClassifierParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.data_mut().iter_mut().zip(grad.data()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// What a training observer sees after each step.
#[derive(Debug)]
pub struct TrainStep<'a> {
    /// 1-based count of completed steps.
    pub iteration: usize,
    pub view: usize,
    /// Loss of the batch before the update.
    pub output: &'a LossOutput,
    pub params: &'a ClassifierParams,
}

fn view_order(len: usize, seed: u64, iterations: usize) -> impl Iterator<Item = usize> {
    let mut r = rng::stream(seed, 0x7EA1);
    let mut order: Vec<usize> = Vec::new();
    (0..iterations).map(move |i| {
        if i % len == 0 {
            order = (0..len).collect();
            order.shuffle(&mut r);
        }
        order[i % len]
    })
}

fn check_loss(output: &LossOutput, iteration: usize) -> Result<(), ClassifierError> {
    if !output.loss.is_finite() || !output.grad.is_finite() {
        return Err(ClassifierError::NonFiniteLoss {
            iteration,
            loss: output.loss,
        });
    }
    Ok(())
}

/// Adam on one view per step. The observer runs after every update and can
/// stop training early by returning `false`.
pub fn train_fast_observed<F>(
    mut params: ClassifierParams,
    data: &[LabeledBatch],
    config: &TrainConfig,
    mut observe: F,
) -> Result<ClassifierParams, ClassifierError>
where
    F: FnMut(&TrainStep<'_>) -> bool,
{
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if !(config.learning_rate >= 0.0) {
        return Err(ClassifierError::InvalidConfig("learning rate must be non-negative".into()));
    }
    let mut adam = Adam::new(params.len(), config.learning_rate);
    for (i, view) in view_order(data.len(), config.seed, config.iterations).enumerate() {
        let output = loss_and_grad(&params, &data[view])?;
        check_loss(&output, i + 1)?;
        adam.step(&mut params, &output.grad);
        let step = TrainStep {
            iteration: i + 1,
            view,
            output: &output,
            params: &params,
        };
        if !observe(&step) {
            break;
        }
    }
    Ok(params)
}

pub fn train_fast(params: ClassifierParams, data: &[LabeledBatch], config: &TrainConfig) -> Result<ClassifierParams, ClassifierError> {
    train_fast_observed(params, data, config, |_| true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Meta-iterations; each samples one task.
    pub iterations: usize,
    /// Plain SGD steps per task (k).
    pub inner_steps: usize,
    pub inner_learning_rate: f64,
    /// Interpolation step towards the adapted parameters (epsilon).
    pub outer_step: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inner_steps: 2,
            inner_learning_rate: 5e-4,
            outer_step: 5e-4,
        }
    }
}

impl MetaConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if self.inner_steps == 0 {
            return Err(ClassifierError::InvalidConfig("inner_steps must be at least 1".into()));
        }
        if !(self.outer_step >= 0.0) || !(self.inner_learning_rate >= 0.0) {
            return Err(ClassifierError::InvalidConfig("meta step sizes must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn sgd_step(params: &mut ClassifierParams, batch: &LabeledBatch, learning_rate: f64) -> Result<f64, ClassifierError> {
    let out = loss_and_grad(params, batch)?;
    params.add_scaled(&out.grad, -learning_rate);
    Ok(out.loss)
}

/// One meta-update given the task views to use for the inner SGD steps:
/// adapt a copy with plain SGD, then move towards it by `outer_step`.
pub fn reptile_step(
    params: &mut ClassifierParams,
    inner_batches: &[&LabeledBatch],
    inner_learning_rate: f64,
    outer_step: f64,
) -> Result<(), ClassifierError> {
    let mut adapted = params.clone();
    for (i, batch) in inner_batches.iter().enumerate() {
        let loss = sgd_step(&mut adapted, batch, inner_learning_rate)?;
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { iteration: i + 1, loss });
        }
    }
    let mut g = adapted;
    g.add_scaled(params, -1.0);
    params.add_scaled(&g, outer_step);
    Ok(())
}

/// Reptile over a set of tasks, each a list of labeled views. Every inner
/// step draws one view of the sampled task.
pub fn reptile_pretrain(
    init: ClassifierParams,
    tasks: &[Vec<LabeledBatch>],
    meta: &MetaConfig,
    seed: u64,
) -> Result<ClassifierParams, ClassifierError> {
    meta.validate()?;
    if tasks.is_empty() || tasks.iter().any(Vec::is_empty) {
        return Err(ClassifierError::EmptyDataset);
    }
    let mut r = rng::stream(seed, 0x4E97);
    let mut params = init;
    for _ in 0..meta.iterations {
        let task = &tasks[r.random_range(0..tasks.len())];
        let views: Vec<&LabeledBatch> = (0..meta.inner_steps).map(|_| &task[r.random_range(0..task.len())]).collect();
        reptile_step(&mut params, &views, meta.inner_learning_rate, meta.outer_step)?;
    }
    Ok(params)
}
