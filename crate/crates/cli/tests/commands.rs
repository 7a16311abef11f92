use std::path::{Path, PathBuf};
use std::process::Command;

use regionloc::classifier::{load_checkpoint, ClassifierParams};
use regionloc::geometry::io::{read_trajectory, write_trajectory};
use regionloc::geometry::{pose_error, Se3Pose};
use regionloc::partition::PartitionTree;
use regionloc::pose::{ransac, refine};
use regionloc::rng::derive_seed;
use regionloc_cli::commands;
use regionloc_cli::config::LabelSource;
use regionloc_cli::layout::RunLayout;
use regionloc_cli::pipeline::{self, streams};
use regionloc_cli::report::median;
use regionloc_cli::ExperimentConfig;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.out_dir = out.to_path_buf();
    c.seed = 3;
    c.scene.n_points = 3000;
    c.scene.train_views = 4;
    c.scene.query_views = 3;
    c.scene.stride = 8;
    c.tree.m = 8;
    c.tree.q = 4;
    c.tree.fuse_stride = 4;
    c.descriptors.dim = 16;
    c.classifier.hidden = 16;
    c.classifier.iterations = 30;
    c.meta.tasks = 2;
    c.meta.iterations = 4;
    c.localize.stride = 4;
    c.ransac.hypotheses = 64;
    c
}

fn hash(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Sha256::digest(&bytes).to_vec()
}

fn hash_dir(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), hash(&p)));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_scene_writes_artifacts_deterministically() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ca = small_config(a.path());
    let summary = commands::gen_scene(&ca).unwrap();
    assert_eq!((summary.train_views, summary.query_views), (4, 3));
    let layout = RunLayout::new(a.path());
    assert!(layout.manifest().exists() && layout.train_trajectory().exists() && layout.query_trajectory().exists());
    assert!(layout.resolved_config().exists());
    assert_eq!(std::fs::read_dir(layout.depth_dir()).unwrap().count(), 7);
    commands::gen_scene(&small_config(b.path())).unwrap();
    assert_eq!(hash_dir(&layout.scene_dir()), hash_dir(&RunLayout::new(b.path()).scene_dir()));
}

#[test]
fn tree_summary_and_rerun_hash() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    commands::gen_scene(&c).unwrap();
    let s = commands::build_tree(&c).unwrap();
    assert!(s.leaves <= 64 && s.leaves > 8);
    let layout = RunLayout::new(dir.path());
    let first = hash(&layout.tree());
    commands::build_tree(&c).unwrap();
    assert_eq!(first, hash(&layout.tree()));
    let logged: commands::TreeSummary = commands::read_json(&layout.tree_summary()).unwrap();
    assert_eq!(logged, s);

    let mut flat = c.clone();
    flat.tree.n = 1;
    let s1 = commands::build_tree(&flat).unwrap();
    assert!(s1.leaves <= 8);
}

#[test]
fn training_starts_at_uniform_loss_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    commands::gen_scene(&c).unwrap();
    commands::build_tree(&c).unwrap();
    let s = commands::train(&c).unwrap();
    let expected = c.tree.n as f64 * (c.tree.m as f64).ln();
    assert!((s.initial_loss - expected).abs() < 1e-6, "{} vs {expected}", s.initial_loss);
    let layout = RunLayout::new(dir.path());
    let csv = std::fs::read_to_string(layout.train_curve()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iteration,loss,loss_level1,loss_level2,accuracy_level1,accuracy_level2");
    let row0: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row0[0], 0.0);
    assert!((row0[1] - expected).abs() < 1e-6);
    assert!((row0[2] - (c.tree.m as f64).ln()).abs() < 1e-6);
    assert_eq!(csv.lines().count(), c.classifier.iterations + 1);
    let model = hash(&layout.model());
    commands::train(&c).unwrap();
    assert_eq!(model, hash(&layout.model()));
}

#[test]
fn pretrain_with_zero_outer_step_keeps_init() {
    let dir = TempDir::new().unwrap();
    let mut c = small_config(dir.path());
    c.meta.outer_step = 0.0;
    let s = commands::pretrain(&c).unwrap();
    assert_eq!(s.tasks.len(), 2);
    let layout = RunLayout::new(dir.path());
    let saved = load_checkpoint(&layout.pretrained()).unwrap();
    let init = ClassifierParams::init(c.classifier_shape(), derive_seed(c.seed, streams::CLASSIFIER_INIT));
    assert_eq!(saved, init);

    c.meta.outer_step = 0.5;
    commands::pretrain(&c).unwrap();
    let first = hash(&layout.pretrained());
    assert_ne!(load_checkpoint(&layout.pretrained()).unwrap(), init);
    commands::pretrain(&c).unwrap();
    assert_eq!(first, hash(&layout.pretrained()));

    // training from the meta-learned start reads that checkpoint
    c.meta.enabled = true;
    commands::gen_scene(&c).unwrap();
    commands::build_tree(&c).unwrap();
    commands::train(&c).unwrap();
}

#[test]
fn oracle_bypass_equals_direct_composition() {
    let dir = TempDir::new().unwrap();
    let mut c = small_config(dir.path());
    c.localize.labels = LabelSource::Oracle;
    commands::gen_scene(&c).unwrap();
    commands::build_tree(&c).unwrap();
    let report = commands::localize(&c).unwrap();
    assert_eq!(report.count, 3);

    // straight from the tree labels of the query depth into the pose solver
    let views = commands::load_views(&c).unwrap();
    let tree = PartitionTree::load(&RunLayout::new(dir.path()).tree()).unwrap();
    let estimates = read_trajectory(&RunLayout::new(dir.path()).estimates()).unwrap();
    for (i, view) in views.query.iter().enumerate() {
        let labeled = tree.label_view(&view.depth, &view.pose, &views.camera, c.localize.stride);
        let pixels: Vec<_> = labeled.iter().map(|(px, _)| *px).collect();
        let labels: Vec<_> = labeled.into_iter().map(|(_, l)| l).collect();
        let set = pipeline::correspondences(&tree, &pixels, &labels, &views.camera);
        assert_eq!(set.len(), report.queries[i].correspondences);
        let rc = c.ransac.to_config(derive_seed(derive_seed(c.seed, streams::RANSAC), i as u64));
        let coarse = ransac(&set, &rc).unwrap();
        let refined = refine(&coarse.pose, &set, &rc).scored;
        let (dt, dr) = pose_error(&refined.pose, &view.pose);
        let q = &report.queries[i];
        assert_eq!(q.translation_error, Some(dt));
        assert_eq!(q.rotation_error_deg, Some(dr));
        assert_eq!(q.score, Some(refined.score));
        assert_eq!(q.inliers, refined.inliers);
        let (et, er) = pose_error(&estimates[i], &refined.pose);
        assert!(et < 1e-12 && er < 1e-6);
    }
}

#[test]
fn localize_with_trained_classifier() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    commands::gen_scene(&c).unwrap();
    commands::build_tree(&c).unwrap();
    commands::train(&c).unwrap();
    let report = commands::localize(&c).unwrap();
    assert_eq!(report.count, 3);
    assert_eq!(report.queries.len(), 3);
    let estimates = read_trajectory(&RunLayout::new(dir.path()).estimates()).unwrap();
    assert_eq!(estimates.len(), 3);
}

#[test]
fn eval_examples() {
    let dir = TempDir::new().unwrap();
    let c = small_config(dir.path());
    let a = dir.path().join("a.txt");
    let poses = vec![
        Se3Pose::identity(),
        Se3Pose::from_axis_angle(nalgebra::Vector3::new(0.1, 0.2, 0.3), nalgebra::Vector3::new(1.0, -2.0, 0.5)),
    ];
    write_trajectory(&a, &poses).unwrap();
    let same = commands::eval(&c, &a, &a).unwrap();
    assert_eq!(same.median_translation, Some(0.0));
    assert!(same.median_rotation_deg.unwrap() < 1e-6);

    let b = dir.path().join("b.txt");
    write_trajectory(&b, &[Se3Pose::from_translation(nalgebra::Vector3::new(3.0, 4.0, 0.0))]).unwrap();
    let origin = dir.path().join("o.txt");
    write_trajectory(&origin, &[Se3Pose::identity()]).unwrap();
    let r = commands::eval(&c, &b, &origin).unwrap();
    assert!((r.median_translation.unwrap() - 5.0).abs() < 1e-12);
    assert!(commands::eval(&c, &a, &origin).is_err());

    // aggregates recomputed from the per-query rows
    let mut shifted: Vec<Se3Pose> = (0..5)
        .map(|i| Se3Pose::from_translation(nalgebra::Vector3::new(0.01 * (i * i) as f64, 0.0, 0.0)))
        .collect();
    shifted[2] = Se3Pose::from_axis_angle(nalgebra::Vector3::new(0.0, 0.3, 0.0), nalgebra::Vector3::zeros());
    let s = dir.path().join("s.txt");
    write_trajectory(&s, &shifted).unwrap();
    let z = dir.path().join("z.txt");
    write_trajectory(&z, &vec![Se3Pose::identity(); 5]).unwrap();
    let r = commands::eval(&c, &s, &z).unwrap();
    let mut t: Vec<f64> = r.queries.iter().map(|q| q.translation_error.unwrap()).collect();
    t.sort_by(f64::total_cmp);
    assert_eq!(r.median_translation, Some(t[2]));
    let rot: Vec<Option<f64>> = r.queries.iter().map(|q| q.rotation_error_deg).collect();
    assert_eq!(r.median_rotation_deg, median(&rot));
    let hits = r.queries.iter().filter(|q| q.translation_error.unwrap() <= 0.05 && q.rotation_error_deg.unwrap() <= 5.0).count();
    assert_eq!(r.success[0].rate, hits as f64 / 5.0);
    assert!(RunLayout::new(dir.path()).eval_report().exists());
}

fn run_binary(config: &ExperimentConfig, dir: &Path, args: &[&str]) -> std::process::Output {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_regionloc"))
        .arg("--config")
        .arg(&path)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = TempDir::new().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.scene.query_views = 0;
    c.localize.labels = LabelSource::Oracle;

    // missing inputs are data errors
    let out = run_binary(&c, dir.path(), &["localize"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // zero queries localize to an empty report
    for cmd in ["gen-scene", "build-tree", "localize"] {
        let out = run_binary(&c, dir.path(), &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let report: regionloc_cli::EvalReport = commands::read_json(&RunLayout::new(&c.out_dir).localize_report()).unwrap();
    assert_eq!(report.count, 0);
    assert!(report.queries.is_empty());

    // overrides on the command line are range-checked too
    let out = run_binary(&c, dir.path(), &["build-tree", "--tau", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let mut bad = c.clone();
    bad.tree.m = 1;
    let out = run_binary(&bad, dir.path(), &["build-tree"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("broken.toml"), "[tree]\nm = \"many\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regionloc"))
        .args(["--config", dir.path().join("broken.toml").to_str().unwrap(), "gen-scene"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let c = small_config(&blocker.join("run"));
    let err = commands::gen_scene(&c).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
    assert_ne!(err.exit_code(), 0);
}

/// Full default configuration: 20 views, m = 64, 9000 Adam steps.
#[test]
fn default_config_memorizes_training_views() {
    let dir = TempDir::new().unwrap();
    let mut c = ExperimentConfig::default();
    c.out_dir = dir.path().to_path_buf();
    commands::gen_scene(&c).unwrap();
    let tree = commands::build_tree(&c).unwrap();
    assert!(tree.leaves <= 4096);
    let s = commands::train(&c).unwrap();
    assert!(s.train_accuracy >= 0.95, "training accuracy {}", s.train_accuracy);
}
