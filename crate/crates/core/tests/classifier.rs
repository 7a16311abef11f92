use nalgebra::Vector2;
use proptest::prelude::*;
use rand::Rng;
use regionloc::classifier::{
    compose_label, forward, loss_and_grad, reptile_step, sgd_step, ClassifierParams, ClassifierShape, LabeledBatch,
};
use regionloc::descriptors::DescriptorMap;
use regionloc::partition::RegionLabel;
use regionloc::rng;

fn random_params(shape: ClassifierShape, seed: u64, scale: f64) -> ClassifierParams {
    let mut r = rng::seeded(seed);
    let mut p = ClassifierParams::zeros(shape);
    for v in p.data_mut() {
        *v = scale * (2.0 * r.random::<f64>() - 1.0);
    }
    p
}

fn random_batch(shape: &ClassifierShape, samples: usize, seed: u64) -> (DescriptorMap, Vec<RegionLabel>) {
    let mut r = rng::seeded(seed);
    let mut map = DescriptorMap::new(shape.dim);
    let mut labels = Vec::new();
    for _ in 0..samples {
        let d: Vec<f64> = (0..shape.dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        map.push(Vector2::new(r.random_range(0.0..10.0), r.random_range(0.0..10.0)), &d).unwrap();
        let path = (0..shape.levels).map(|_| r.random_range(0..shape.classes as u32)).collect();
        labels.push(RegionLabel::from_path(path, shape.classes as u32));
    }
    (map, labels)
}

/// Row-major `fan_out x fan_in` weight applied to one vector.
fn affine(p: &ClassifierParams, prefix: &str, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let weight = p.tensor(&format!("{prefix}.{w}")).unwrap();
    let bias = p.tensor(&format!("{prefix}.{b}")).unwrap();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + x.iter().enumerate().map(|(i, xi)| weight[o * x.len() + i] * xi).sum::<f64>())
        .collect()
}

fn mlp(p: &ClassifierParams, prefix: &str, x: &[f64]) -> Vec<f64> {
    let z = affine(p, prefix, "w1", "b1", x);
    let h = z.len() as f64;
    let mean = z.iter().sum::<f64>() / h;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h;
    let gain = p.tensor(&format!("{prefix}.norm_gain")).unwrap();
    let shift = p.tensor(&format!("{prefix}.norm_bias")).unwrap();
    let a: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, v)| (gain[j] * (v - mean) / (var + 1e-5).sqrt() + shift[j]).max(0.0))
        .collect();
    affine(p, prefix, "w2", "b2", &a)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Plain per-sample evaluation of the whole hierarchy.
fn reference_forward(p: &ClassifierParams, x: &[f64], teacher: Option<&RegionLabel>) -> Vec<Vec<f64>> {
    let m = p.shape().classes;
    let mut levels: Vec<Vec<f64>> = Vec::new();
    for l in 0..p.shape().levels {
        let input = if l == 0 {
            x.to_vec()
        } else {
            let mut h = Vec::new();
            for (k, probs) in levels.iter().enumerate() {
                match teacher {
                    Some(t) => h.extend((0..m).map(|c| if c as u32 == t.path[k] { 1.0 } else { 0.0 })),
                    None => h.extend_from_slice(probs),
                }
            }
            let gamma = mlp(p, &format!("level{l}.gamma"), &h);
            let beta = mlp(p, &format!("level{l}.beta"), &h);
            x.iter().enumerate().map(|(i, xi)| (1.0 + gamma[i]) * xi + beta[i]).collect()
        };
        levels.push(softmax(&mlp(p, &format!("level{l}.base"), &input)));
    }
    levels
}

#[test]
fn forward_matches_reference() {
    let shape = ClassifierShape::new(6, 5, 4, 2);
    let params = random_params(shape, 1, 0.8);
    let (map, labels) = random_batch(&shape, 5, 2);
    for teacher in [false, true] {
        let probs = forward(&params, &map, teacher.then_some(&labels[..])).unwrap();
        for i in 0..5 {
            let expected = reference_forward(&params, map.descriptor(i), teacher.then(|| &labels[i]));
            for (l, row) in expected.iter().enumerate() {
                for (a, b) in probs.row(l, i).iter().zip(row) {
                    assert!((a - b).abs() < 1e-9, "level {l} sample {i}");
                }
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for (k, shape) in [ClassifierShape::new(4, 6, 3, 1), ClassifierShape::new(5, 4, 3, 2), ClassifierShape::new(3, 5, 2, 3)]
        .into_iter()
        .enumerate()
    {
        let params = random_params(shape, 10 + k as u64, 0.6);
        let (map, labels) = random_batch(&shape, 7, 20 + k as u64);
        let batch = LabeledBatch::new(&map, &labels).unwrap();
        let grad = loss_and_grad(&params, &batch).unwrap().grad;
        let h = 1e-6;
        for spec in params.tensors() {
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for idx in spec.range() {
                let mut plus = params.clone();
                plus.data_mut()[idx] += h;
                let mut minus = params.clone();
                minus.data_mut()[idx] -= h;
                let fd = (loss_and_grad(&plus, &batch).unwrap().loss - loss_and_grad(&minus, &batch).unwrap().loss) / (2.0 * h);
                num.push(fd);
                ana.push(grad.data()[idx]);
            }
            let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff <= 1e-5 * norm.max(1e-3), "{}: {diff} vs {norm}", spec.name);
        }
    }
}

#[test]
fn teacher_forced_levels_are_decoupled() {
    let shape = ClassifierShape::new(5, 6, 3, 3);
    let params = random_params(shape, 3, 0.7);
    let (map, labels) = random_batch(&shape, 9, 4);
    let batch = LabeledBatch::new(&map, &labels).unwrap();
    let base = loss_and_grad(&params, &batch).unwrap();
    for l in 0..3 {
        let mut other = params.clone();
        for spec in params.tensors().iter().filter(|s| !s.name.starts_with(&format!("level{l}."))) {
            for idx in spec.range() {
                other.data_mut()[idx] += 0.3;
            }
        }
        let out = loss_and_grad(&other, &batch).unwrap();
        assert_eq!(out.level_loss[l], base.level_loss[l]);
    }
    // and the gradient of one level's own loss stays inside that level
    let level_of = |name: &str| name[5..name.find('.').unwrap()].parse::<usize>().unwrap();
    for spec in params.tensors() {
        let l = level_of(&spec.name);
        let mut bumped = params.clone();
        bumped.data_mut()[spec.offset] += 1e-3;
        let out = loss_and_grad(&bumped, &batch).unwrap();
        for (k, (a, b)) in out.level_loss.iter().zip(&base.level_loss).enumerate() {
            if k != l {
                assert_eq!(a, b, "{} moved level {k}", spec.name);
            }
        }
    }
}

#[test]
fn single_step_reptile_is_scaled_sgd() {
    let shape = ClassifierShape::new(4, 5, 3, 2);
    let params = random_params(shape, 8, 0.5);
    let (map, labels) = random_batch(&shape, 6, 9);
    let batch = LabeledBatch::new(&map, &labels).unwrap();
    let (alpha, eps) = (0.05, 0.3);
    let mut meta = params.clone();
    reptile_step(&mut meta, &[&batch], alpha, eps).unwrap();
    let mut expected = params.clone();
    expected.add_scaled(&loss_and_grad(&params, &batch).unwrap().grad, -alpha * eps);
    assert!(meta.max_abs_diff(&expected) < 1e-12);

    let mut full = params.clone();
    reptile_step(&mut full, &[&batch], alpha, 1.0).unwrap();
    let mut sgd = params.clone();
    sgd_step(&mut sgd, &batch, alpha).unwrap();
    assert!(full.max_abs_diff(&sgd) < 1e-12);
}

#[test]
fn one_hot_predictions_make_teacher_forcing_irrelevant() {
    let shape = ClassifierShape::new(4, 5, 3, 3);
    let mut params = random_params(shape, 5, 0.5);
    let target = [2u32, 0, 1];
    for spec in params.tensors() {
        if spec.name.ends_with("base.w2") {
            params.data_mut()[spec.range()].fill(0.0);
        }
        if spec.name.ends_with("base.b2") {
            let l = spec.name[5..6].parse::<usize>().unwrap();
            for (c, v) in params.data_mut()[spec.range()].iter_mut().enumerate() {
                *v = if c as u32 == target[l] { 1000.0 } else { -1000.0 };
            }
        }
    }
    let (map, _) = random_batch(&shape, 8, 6);
    let labels = vec![RegionLabel::from_path(target.to_vec(), 3); 8];
    let soft = forward(&params, &map, None).unwrap();
    let teacher = forward(&params, &map, Some(&labels)).unwrap();
    assert_eq!(soft, teacher);
    assert_eq!(soft.compose_all(3), labels);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..10_000, scale in 0.1..5.0f64) {
        let shape = ClassifierShape::new(4, 6, 5, 2);
        let params = random_params(shape, seed, scale);
        let (map, _) = random_batch(&shape, 4, seed ^ 1);
        let probs = forward(&params, &map, None).unwrap();
        for l in 0..2 {
            for i in 0..4 {
                let row = probs.row(l, i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn composition_ignores_monotone_rescaling(
        levels in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 1..4),
        a in 0.1..10.0f64,
        b in -5.0..5.0f64,
    ) {
        let mapped: Vec<Vec<f64>> = levels.iter().map(|r| r.iter().map(|p| (a * p + b).exp()).collect()).collect();
        prop_assert_eq!(compose_label(&levels, 4), compose_label(&mapped, 4));
    }
}
