//! In-memory pipeline stages shared by the subcommands and the tests.

use std::time::Instant;

use rayon::prelude::*;
use regionloc::classifier::{forward, ClassifierParams, LabeledBatch};
use regionloc::descriptors::{DescriptorMap, DescriptorProvider, OracleDescriptors, ViewInput};
use regionloc::geometry::{backproject, fuse_point_cloud, pose_error, DepthImage, PinholeCamera, PointCloud, Se3Pose};
use regionloc::partition::{PartitionTree, RegionLabel};
use regionloc::pose::{ransac, refine, Correspondence, CorrespondenceSet, PoseError, RansacConfig, ScoredPose};
use regionloc::rng::derive_seed;
use regionloc::synth::{generate_scene, render_views, sample_views, SyntheticScene, ViewRole, ViewSet};

use crate::config::{ExperimentConfig, TreeConfig};
use crate::layout::view_name;
use crate::report::QueryRecord;
use crate::HarnessError;

/// Seed streams derived from the experiment seed.
pub mod streams {
    pub const SCENE: u64 = 1;
    pub const TRAIN_VIEWS: u64 = 2;
    pub const QUERY_VIEWS: u64 = 3;
    pub const TREE: u64 = 4;
    pub const LEAF_CENTERS: u64 = 5;
    pub const CLASSIFIER_INIT: u64 = 6;
    pub const TRAIN_ORDER: u64 = 7;
    pub const META: u64 = 8;
    pub const TASKS: u64 = 9;
    pub const DESCRIPTOR_NOISE: u64 = 10;
    pub const RANSAC: u64 = 11;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewData {
    pub name: String,
    pub pose: Se3Pose,
    pub depth: DepthImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneViews {
    pub camera: PinholeCamera,
    pub train: Vec<ViewData>,
    pub query: Vec<ViewData>,
}

fn views_from(set: &ViewSet, depths: Vec<DepthImage>) -> Vec<ViewData> {
    set.poses
        .iter()
        .zip(depths)
        .enumerate()
        .map(|(i, (pose, depth))| ViewData {
            name: view_name(set.role.as_str(), i),
            pose: *pose,
            depth,
        })
        .collect()
}

fn render_role(
    scene: &SyntheticScene,
    count: usize,
    seed: u64,
    camera: &PinholeCamera,
    role: ViewRole,
) -> Result<Vec<ViewData>, HarnessError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let set = sample_views(scene, count, seed, camera, role)?;
    let depths = render_views(scene, &set);
    Ok(views_from(&set, depths))
}

/// Synthetic scene plus rendered train and query views for a scene seed.
pub fn synthesize(config: &ExperimentConfig, scene_seed: u64) -> Result<(SyntheticScene, SceneViews), HarnessError> {
    let sc = &config.scene;
    let camera = sc.camera()?;
    let scene = generate_scene(derive_seed(scene_seed, streams::SCENE), sc.n_points, sc.diameter)?;
    let train = render_role(
        &scene,
        sc.train_views,
        derive_seed(scene_seed, streams::TRAIN_VIEWS),
        &camera,
        ViewRole::Train,
    )?;
    let query = render_role(
        &scene,
        sc.query_views,
        derive_seed(scene_seed, streams::QUERY_VIEWS),
        &camera,
        ViewRole::Query,
    )?;
    Ok((scene, SceneViews { camera, train, query }))
}

pub fn fuse_views(views: &[ViewData], camera: &PinholeCamera, stride: u32) -> Result<PointCloud, HarnessError> {
    let pairs: Vec<(DepthImage, Se3Pose)> = views.iter().map(|v| (v.depth.clone(), v.pose)).collect();
    Ok(fuse_point_cloud(&pairs, camera, stride)?)
}

/// Partition tree without leaf centres.
pub fn partition(cloud: &PointCloud, tree: &TreeConfig, seed: u64) -> Result<PartitionTree, HarnessError> {
    Ok(PartitionTree::build(cloud, tree.m, tree.n, derive_seed(seed, streams::TREE))?)
}

pub fn with_leaf_centers(tree: PartitionTree, q: u32, seed: u64) -> Result<PartitionTree, HarnessError> {
    Ok(tree.cluster_leaves(q, derive_seed(seed, streams::LEAF_CENTERS))?)
}

/// Partition tree with `q` cluster centres per leaf.
pub fn build_tree(cloud: &PointCloud, tree: &TreeConfig, seed: u64) -> Result<PartitionTree, HarnessError> {
    with_leaf_centers(partition(cloud, tree, seed)?, tree.q, seed)
}

pub fn oracle_provider(config: &ExperimentConfig, scene_seed: u64) -> OracleDescriptors {
    OracleDescriptors::new(config.descriptors.oracle(scene_seed))
}

fn view_stream(seed: u64, role: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, streams::DESCRIPTOR_NOISE), (role << 32) | index as u64)
}

pub fn describe(
    provider: &dyn DescriptorProvider,
    view: &ViewData,
    camera: &PinholeCamera,
    stride: u32,
    stream: u64,
) -> Result<DescriptorMap, HarnessError> {
    let input = ViewInput {
        name: &view.name,
        stream,
        depth: &view.depth,
        pose: &view.pose,
        camera,
        stride,
    };
    Ok(provider.describe_view(&input)?)
}

/// Tree labels of the depth behind each descriptor sample. Samples without
/// valid depth are dropped from both the map and the labels.
pub fn label_samples(
    tree: &PartitionTree,
    view: &ViewData,
    camera: &PinholeCamera,
    map: &DescriptorMap,
) -> (DescriptorMap, Vec<RegionLabel>) {
    let mut keep = Vec::with_capacity(map.len());
    let mut labels = Vec::with_capacity(map.len());
    for (i, px) in map.pixels().iter().enumerate() {
        let (u, v) = (px.x.round(), px.y.round());
        if u < 0.0 || v < 0.0 {
            continue;
        }
        let Some(d) = view.depth.valid(u as u32, v as u32) else {
            continue;
        };
        let Ok(point) = backproject(&view.pose, camera, &nalgebra::Vector2::new(u, v), d) else {
            continue;
        };
        keep.push(i);
        labels.push(tree.label_point(&point));
    }
    if keep.len() == map.len() {
        (map.clone(), labels)
    } else {
        (map.select(&keep), labels)
    }
}

/// Descriptor batches with ground-truth region labels, one per view.
pub fn labeled_batches(
    provider: &dyn DescriptorProvider,
    tree: &PartitionTree,
    views: &[ViewData],
    camera: &PinholeCamera,
    stride: u32,
    seed: u64,
) -> Result<Vec<LabeledBatch>, HarnessError> {
    views
        .par_iter()
        .enumerate()
        .map(|(i, view)| {
            let map = describe(provider, view, camera, stride, view_stream(seed, 0, i))?;
            let (map, labels) = label_samples(tree, view, camera, &map);
            Ok(LabeledBatch::new(&map, &labels)?)
        })
        .collect()
}

/// One-to-many correspondences: every pixel with a label that names an
/// existing leaf gets that leaf's cluster centres as candidates.
pub fn correspondences(
    tree: &PartitionTree,
    pixels: &[nalgebra::Vector2<f64>],
    labels: &[RegionLabel],
    camera: &PinholeCamera,
) -> CorrespondenceSet {
    let entries = pixels
        .iter()
        .zip(labels)
        .filter_map(|(px, label)| {
            let leaf = tree.leaf_for_label(label)?;
            let centers = tree.leaf_centers(leaf);
            (!centers.is_empty()).then(|| Correspondence::new(*px, centers.to_vec()))
        })
        .collect();
    CorrespondenceSet::new(entries, *camera)
}

/// RANSAC, then optionally refinement.
pub fn solve_pose(set: &CorrespondenceSet, config: &RansacConfig, with_refine: bool) -> Result<PoseSolution, PoseError> {
    let coarse = ransac(set, config)?;
    if !with_refine {
        return Ok(PoseSolution {
            scored: coarse,
            refine_iterations: 0,
            refine_flag: false,
        });
    }
    let out = refine(&coarse.pose, set, config);
    Ok(PoseSolution {
        scored: out.scored,
        refine_iterations: out.iterations,
        refine_flag: out.insufficient_inliers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSolution {
    pub scored: ScoredPose,
    pub refine_iterations: usize,
    pub refine_flag: bool,
}

/// Where query labels come from.
pub enum QueryLabels<'a> {
    Classifier(&'a ClassifierParams),
    Oracle,
}

/// Localizes every query view in parallel; records come back in query order.
/// Failed queries are recorded, not raised.
pub fn localize_queries(
    config: &ExperimentConfig,
    provider: &dyn DescriptorProvider,
    tree: &PartitionTree,
    views: &[ViewData],
    camera: &PinholeCamera,
    labels: &QueryLabels<'_>,
) -> Result<Vec<(Option<Se3Pose>, QueryRecord)>, HarnessError> {
    if !tree.has_leaf_centers() {
        return Err(HarnessError::Data("tree has no leaf cluster centres".into()));
    }
    views
        .par_iter()
        .enumerate()
        .map(|(i, view)| {
            let start = Instant::now();
            let map = describe(provider, view, camera, config.localize.stride, view_stream(config.seed, 1, i))?;
            let (map, truth_labels) = label_samples(tree, view, camera, &map);
            let labels = match labels {
                QueryLabels::Oracle => truth_labels,
                QueryLabels::Classifier(params) => forward(params, &map, None)?.compose_all(tree.m()),
            };
            let set = correspondences(tree, map.pixels(), &labels, camera);
            let rc = config.ransac.to_config(derive_seed(derive_seed(config.seed, streams::RANSAC), i as u64));
            let solved = if set.len() >= 4 {
                solve_pose(&set, &rc, config.ransac.refine)
            } else {
                Err(PoseError::TooFewCorrespondences { needed: 4, actual: set.len() })
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let record = match &solved {
                Ok(sol) => {
                    let (dt, dr) = pose_error(&sol.scored.pose, &view.pose);
                    QueryRecord {
                        index: i,
                        name: view.name.clone(),
                        status: "ok".into(),
                        translation_error: Some(dt),
                        rotation_error_deg: Some(dr),
                        score: Some(sol.scored.score),
                        inliers: sol.scored.inliers,
                        correspondences: set.len(),
                        refine_iterations: sol.refine_iterations,
                        refine_flag: sol.refine_flag,
                        wall_ms,
                    }
                }
                Err(e) => QueryRecord {
                    index: i,
                    name: view.name.clone(),
                    status: format!("failed: {e}"),
                    translation_error: None,
                    rotation_error_deg: None,
                    score: None,
                    inliers: 0,
                    correspondences: set.len(),
                    refine_iterations: 0,
                    refine_flag: false,
                    wall_ms,
                },
            };
            Ok((solved.ok().map(|s| s.scored.pose), record))
        })
        .collect()
}
