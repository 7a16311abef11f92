//! Subcommand implementations. Every command reads its inputs from the
//! configuration and the output directory, writes its artifacts there, and
//! leaves a resolved copy of the configuration beside them.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use regionloc::classifier::{
    load_checkpoint, region_accuracy, reptile_pretrain, save_checkpoint, train_fast_observed, ClassifierParams,
    LabeledBatch, TrainConfig,
};
use regionloc::descriptors::{DescriptorProvider, FileDescriptors};
use regionloc::geometry::io::{read_depth, read_trajectory, write_depth_raster, write_trajectory};
use regionloc::geometry::Se3Pose;
use regionloc::partition::PartitionTree;
use regionloc::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, LabelSource, ProviderKind, SceneSource};
use crate::layout::{create_dir, read_text, view_name, write_text, RunLayout};
use crate::pipeline::{self, streams, QueryLabels, SceneViews, ViewData};
use crate::report::EvalReport;
use crate::HarnessError;

fn prepare(config: &ExperimentConfig) -> Result<RunLayout, HarnessError> {
    let layout = RunLayout::new(&config.out_dir);
    create_dir(&layout.root)?;
    write_text(&layout.resolved_config(), &config.to_toml())?;
    Ok(layout)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub points: usize,
    pub train_views: usize,
    pub query_views: usize,
}

/// Generates the synthetic scene and writes its manifest, depth rasters and
/// the train / query trajectories.
pub fn gen_scene(config: &ExperimentConfig) -> Result<SceneSummary, HarnessError> {
    if config.scene.source != SceneSource::Synthetic {
        return Err(HarnessError::Config("gen-scene needs scene.source = \"synthetic\"".into()));
    }
    let layout = prepare(config)?;
    let (scene, views) = pipeline::synthesize(config, config.seed)?;
    create_dir(&layout.depth_dir())?;
    let mut manifest = serde_json::to_value(scene.manifest()).expect("manifest serializes");
    manifest["camera"] = serde_json::to_value(views.camera).expect("camera serializes");
    manifest["train_views"] = views.train.len().into();
    manifest["query_views"] = views.query.len().into();
    write_json(&layout.manifest(), &manifest)?;
    for v in views.train.iter().chain(&views.query) {
        write_depth_raster(&layout.depth_dir().join(format!("{}.srdm", v.name)), &v.depth)?;
    }
    let poses = |vs: &[ViewData]| vs.iter().map(|v| v.pose).collect::<Vec<_>>();
    write_trajectory(&layout.train_trajectory(), &poses(&views.train))?;
    write_trajectory(&layout.query_trajectory(), &poses(&views.query))?;
    info!(
        "scene: {} points, {} train views, {} query views",
        scene.cloud.len(),
        views.train.len(),
        views.query.len()
    );
    Ok(SceneSummary {
        points: scene.cloud.len(),
        train_views: views.train.len(),
        query_views: views.query.len(),
    })
}

fn load_role(dir: &Path, trajectory: &Path, role: &str) -> Result<Vec<ViewData>, HarnessError> {
    let poses = read_trajectory(trajectory)?;
    poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let name = view_name(role, i);
            let raster = dir.join(format!("{name}.srdm"));
            let path = if raster.exists() { raster } else { dir.join(format!("{name}.txt")) };
            Ok(ViewData {
                name,
                pose,
                depth: read_depth(&path)?,
            })
        })
        .collect()
}

/// Train and query views from the generated scene or the configured files.
pub fn load_views(config: &ExperimentConfig) -> Result<SceneViews, HarnessError> {
    let layout = RunLayout::new(&config.out_dir);
    let (dir, train, query) = match config.scene.source {
        SceneSource::Synthetic => (layout.depth_dir(), layout.train_trajectory(), layout.query_trajectory()),
        SceneSource::Files => (
            config.scene.depth_dir.clone().expect("validated"),
            config.scene.train_trajectory.clone().expect("validated"),
            config.scene.query_trajectory.clone().expect("validated"),
        ),
    };
    let camera = config.scene.camera()?;
    let views = SceneViews {
        camera,
        train: load_role(&dir, &train, "train")?,
        query: load_role(&dir, &query, "query")?,
    };
    for v in views.train.iter().chain(&views.query) {
        if v.depth.width() != camera.width || v.depth.height() != camera.height {
            return Err(HarnessError::Data(format!("{}: depth size does not match the camera", v.name)));
        }
    }
    Ok(views)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub cloud_points: usize,
    pub m: u32,
    pub n: u32,
    pub q: u32,
    pub leaves: usize,
    pub mean_leaf_radius: f64,
}

/// Fuses the training views and writes the partition tree.
pub fn build_tree(config: &ExperimentConfig) -> Result<TreeSummary, HarnessError> {
    let layout = prepare(config)?;
    let views = load_views(config)?;
    let cloud = pipeline::fuse_views(&views.train, &views.camera, config.tree.fuse_stride)?;
    let tree = pipeline::build_tree(&cloud, &config.tree, config.seed)?;
    tree.save(&layout.tree())?;
    let summary = TreeSummary {
        cloud_points: cloud.len(),
        m: tree.m(),
        n: tree.n(),
        q: tree.leaf_center_q(),
        leaves: tree.leaf_count(),
        mean_leaf_radius: tree.mean_leaf_radius(),
    };
    write_json(&layout.tree_summary(), &summary)?;
    info!(
        "tree: {} leaves over {} points, mean leaf radius {:.4}",
        summary.leaves, summary.cloud_points, summary.mean_leaf_radius
    );
    Ok(summary)
}

fn scene_provider(config: &ExperimentConfig) -> Box<dyn DescriptorProvider> {
    match config.descriptors.provider {
        ProviderKind::Oracle => Box::new(pipeline::oracle_provider(config, config.seed)),
        ProviderKind::File => Box::new(FileDescriptors::new(
            config.descriptors.dir.clone().expect("validated"),
            config.descriptors.dim,
        )),
    }
}

fn initial_params(config: &ExperimentConfig) -> ClassifierParams {
    ClassifierParams::init(config.classifier_shape(), derive_seed(config.seed, streams::CLASSIFIER_INIT))
}

/// Labeled descriptor batches of one synthetic pretraining scene.
pub fn task_batches(config: &ExperimentConfig, task_seed: u64) -> Result<Vec<LabeledBatch>, HarnessError> {
    let mut task_config = config.clone();
    task_config.scene.query_views = 0;
    let (_, views) = pipeline::synthesize(&task_config, task_seed)?;
    let cloud = pipeline::fuse_views(&views.train, &views.camera, config.tree.fuse_stride)?;
    let tree = pipeline::build_tree(&cloud, &config.tree, task_seed)?;
    let provider = pipeline::oracle_provider(config, task_seed);
    pipeline::labeled_batches(&provider, &tree, &views.train, &views.camera, config.scene.stride, task_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub tasks: Vec<u64>,
    pub iterations: usize,
    pub parameters: usize,
}

/// Reptile over freshly generated synthetic scenes.
pub fn pretrain(config: &ExperimentConfig) -> Result<PretrainSummary, HarnessError> {
    if config.meta.tasks < 2 {
        return Err(HarnessError::Config("meta.tasks must be at least 2".into()));
    }
    if config.descriptors.provider != ProviderKind::Oracle {
        return Err(HarnessError::Config("pretraining generates scenes and needs the oracle provider".into()));
    }
    let layout = prepare(config)?;
    let task_seeds: Vec<u64> = (0..config.meta.tasks as u64)
        .map(|t| derive_seed(derive_seed(config.seed, streams::TASKS), t))
        .collect();
    let tasks = task_seeds
        .iter()
        .map(|&s| task_batches(config, s))
        .collect::<Result<Vec<_>, _>>()?;
    let init = initial_params(config);
    let params = reptile_pretrain(init, &tasks, &config.meta.to_config(), derive_seed(config.seed, streams::META))?;
    if !params.is_finite() {
        return Err(HarnessError::Numerical("pretrained parameters are not finite".into()));
    }
    let meta = serde_json::json!({ "stage": "pretrain", "tasks": task_seeds, "config": config });
    save_checkpoint(&layout.pretrained(), &params, config.seed, meta)?;
    info!("pretrained on {} tasks for {} meta-iterations", tasks.len(), config.meta.iterations);
    Ok(PretrainSummary {
        tasks: task_seeds,
        iterations: config.meta.iterations,
        parameters: params.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Region accuracy on the training views without teacher forcing.
    pub train_accuracy: f64,
    pub samples: usize,
}

fn curve_header(levels: usize) -> String {
    let mut h = String::from("iteration,loss");
    for l in 1..=levels {
        write!(h, ",loss_level{l}").unwrap();
    }
    for l in 1..=levels {
        write!(h, ",accuracy_level{l}").unwrap();
    }
    h.push('\n');
    h
}

/// Fast memorization with Adam on the training views. Writes the checkpoint,
/// a CSV loss curve (row `i` is the batch loss before update `i + 1`) and a
/// JSON summary.
pub fn train(config: &ExperimentConfig) -> Result<TrainSummary, HarnessError> {
    let layout = prepare(config)?;
    let views = load_views(config)?;
    let tree = PartitionTree::load(&layout.tree())?;
    if tree.m() != config.tree.m || tree.n() != config.tree.n {
        return Err(HarnessError::Config("tree on disk does not match tree.m / tree.n".into()));
    }
    let provider = scene_provider(config);
    let batches = pipeline::labeled_batches(
        provider.as_ref(),
        &tree,
        &views.train,
        &views.camera,
        config.scene.stride,
        config.seed,
    )?;
    let init = if config.meta.enabled {
        let path = config.classifier.pretrained.clone().unwrap_or_else(|| layout.pretrained());
        let p = load_checkpoint(&path)?;
        if *p.shape() != config.classifier_shape() {
            return Err(HarnessError::Config(format!("{}: network shape does not match", path.display())));
        }
        p
    } else {
        initial_params(config)
    };
    let train_config = TrainConfig {
        iterations: config.classifier.iterations,
        learning_rate: config.classifier.learning_rate,
        seed: derive_seed(config.seed, streams::TRAIN_ORDER),
    };
    let mut csv = curve_header(config.tree.n as usize);
    let mut losses = Vec::with_capacity(train_config.iterations);
    let params = train_fast_observed(init, &batches, &train_config, |step| {
        let o = step.output;
        write!(csv, "{},{}", step.iteration - 1, o.loss).unwrap();
        for v in o.level_loss.iter().chain(&o.level_accuracy) {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
        losses.push(o.loss);
        true
    })?;
    write_text(&layout.train_curve(), &csv)?;
    let accuracy = region_accuracy(&params, &batches);
    let meta = serde_json::json!({ "stage": "train", "config": config });
    save_checkpoint(&layout.model(), &params, config.seed, meta)?;
    let summary = TrainSummary {
        iterations: losses.len(),
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        train_accuracy: accuracy,
        samples: batches.iter().map(LabeledBatch::len).sum(),
    };
    write_json(&layout.train_summary(), &summary)?;
    info!("trained {} iterations, training accuracy {:.4}", summary.iterations, accuracy);
    Ok(summary)
}

/// Localizes the query views, writes the estimated trajectory and the
/// report. Failed queries are written as identity poses and flagged in the
/// report.
pub fn localize(config: &ExperimentConfig) -> Result<EvalReport, HarnessError> {
    let layout = prepare(config)?;
    let views = load_views(config)?;
    let tree = PartitionTree::load(&layout.tree())?;
    let provider = scene_provider(config);
    let params;
    let labels = match config.localize.labels {
        LabelSource::Oracle => QueryLabels::Oracle,
        LabelSource::Classifier => {
            let path = config.localize.checkpoint.clone().unwrap_or_else(|| layout.model());
            params = load_checkpoint(&path)?;
            if params.shape().classes != tree.m() as usize || params.shape().levels != tree.n() as usize {
                return Err(HarnessError::Config(format!("{}: classifier does not match the tree", path.display())));
            }
            QueryLabels::Classifier(&params)
        }
    };
    let results = pipeline::localize_queries(config, provider.as_ref(), &tree, &views.query, &views.camera, &labels)?;
    let estimates: Vec<Se3Pose> = results.iter().map(|(p, _)| p.unwrap_or_default()).collect();
    write_trajectory(&layout.estimates(), &estimates)?;
    let report = EvalReport::from_records(results.into_iter().map(|(_, r)| r).collect(), &config.eval.thresholds);
    write_text(&layout.localize_report(), &report.to_json())?;
    info!(
        "localized {} queries ({} failed), median errors {:?} / {:?} deg",
        report.count, report.failures, report.median_translation, report.median_rotation_deg
    );
    Ok(report)
}

/// Compares an estimated trajectory with a reference one.
pub fn eval(config: &ExperimentConfig, estimates: &Path, truth: &Path) -> Result<EvalReport, HarnessError> {
    let layout = prepare(config)?;
    let est = read_trajectory(estimates)?;
    let gt = read_trajectory(truth)?;
    let report = EvalReport::from_trajectories(&est, &gt, &config.eval.thresholds)?;
    write_text(&layout.eval_report(), &report.to_json())?;
    Ok(report)
}

/// Reads a JSON artifact written by one of the commands.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(&read_text(path)?).map_err(HarnessError::data)
}
