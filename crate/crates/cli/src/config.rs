//! Experiment configuration: a versioned TOML file, environment overrides and
//! range checks.
//!
//! Environment variables named `REGIONLOC_<SECTION>__<KEY>` (or
//! `REGIONLOC_<KEY>` for top-level keys) replace the corresponding entry.
//! Values are parsed as TOML scalars when possible and as strings otherwise.

use std::path::{Path, PathBuf};

use regionloc::classifier::{ClassifierShape, MetaConfig};
use regionloc::descriptors::OracleConfig;
use regionloc::geometry::PinholeCamera;
use regionloc::pose::RansacConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const CONFIG_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "REGIONLOC_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub tree: TreeConfig,
    pub descriptors: DescriptorConfig,
    pub classifier: ClassifierConfig,
    pub ransac: RansacSection,
    pub meta: MetaSection,
    pub localize: LocalizeConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            scene: SceneConfig::default(),
            tree: TreeConfig::default(),
            descriptors: DescriptorConfig::default(),
            classifier: ClassifierConfig::default(),
            ransac: RansacSection::default(),
            meta: MetaSection::default(),
            localize: LocalizeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    /// Generated by `gen-scene` into `<out_dir>/scene`.
    Synthetic,
    /// Depth rasters and trajectories produced elsewhere.
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub source: SceneSource,
    pub n_points: usize,
    pub diameter: f64,
    pub train_views: usize,
    pub query_views: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Principal point; defaults to the image centre.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    /// Pixel stride for fusion, descriptors and queries.
    pub stride: u32,
    /// For `source = "files"`: directory holding `train_NNNN` / `query_NNNN`
    /// depth files, and the two trajectories.
    pub depth_dir: Option<PathBuf>,
    pub train_trajectory: Option<PathBuf>,
    pub query_trajectory: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            source: SceneSource::Synthetic,
            n_points: 20_000,
            diameter: 4.0,
            train_views: 20,
            query_views: 10,
            width: 160,
            height: 120,
            focal: 120.0,
            cx: None,
            cy: None,
            stride: 4,
            depth_dir: None,
            train_trajectory: None,
            query_trajectory: None,
        }
    }
}

impl SceneConfig {
    pub fn camera(&self) -> Result<PinholeCamera, HarnessError> {
        PinholeCamera::new(
            self.focal,
            self.focal,
            self.cx.unwrap_or(self.width as f64 / 2.0),
            self.cy.unwrap_or(self.height as f64 / 2.0),
            self.width,
            self.height,
        )
        .map_err(|e| HarnessError::Config(format!("scene camera: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub m: u32,
    pub n: u32,
    pub q: u32,
    /// Pixel stride when fusing the training views into the tree's cloud.
    pub fuse_stride: u32,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            m: 64,
            n: 2,
            q: 10,
            fuse_stride: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Oracle,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub provider: ProviderKind,
    pub dim: usize,
    pub noise: f64,
    /// Seed of the synthetic extractor, shared by every scene.
    pub extractor_seed: u64,
    pub scale: f64,
    pub octaves: u32,
    pub cross_scene_shift: f64,
    /// For `provider = "file"`: directory of `<view>.srcd` files.
    pub dir: Option<PathBuf>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Oracle,
            dim: 128,
            noise: 0.0,
            extractor_seed: 0,
            scale: 4.0,
            octaves: 5,
            cross_scene_shift: 0.0,
            dir: None,
        }
    }
}

impl DescriptorConfig {
    pub fn oracle(&self, domain_seed: u64) -> OracleConfig {
        OracleConfig {
            seed: self.extractor_seed,
            dim: self.dim,
            noise_sigma: self.noise,
            scale: self.scale,
            octaves: self.octaves,
            cross_scene_shift: self.cross_scene_shift,
            domain_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    /// Hidden width of the hyper networks; defaults to the descriptor dimension.
    pub hyper_hidden: Option<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Initialization used when `meta.enabled`; defaults to the pretrain output.
    pub pretrained: Option<PathBuf>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            hyper_hidden: None,
            iterations: 9000,
            learning_rate: 5e-4,
            pretrained: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSection {
    pub hypotheses: usize,
    pub tau: f64,
    pub max_refine_iters: usize,
    pub refine: bool,
}

impl Default for RansacSection {
    fn default() -> Self {
        Self {
            hypotheses: 256,
            tau: 10.0,
            max_refine_iters: 20,
            refine: true,
        }
    }
}

impl RansacSection {
    pub fn to_config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            hypotheses: self.hypotheses,
            tau: self.tau,
            max_refine_iters: self.max_refine_iters,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    /// Train from the meta-learned initialization instead of a random one.
    pub enabled: bool,
    pub tasks: usize,
    pub iterations: usize,
    pub inner_steps: usize,
    pub inner_learning_rate: f64,
    pub outer_step: f64,
}

impl Default for MetaSection {
    fn default() -> Self {
        let m = MetaConfig::default();
        Self {
            enabled: false,
            tasks: 3,
            iterations: m.iterations,
            inner_steps: m.inner_steps,
            inner_learning_rate: m.inner_learning_rate,
            outer_step: m.outer_step,
        }
    }
}

impl MetaSection {
    pub fn to_config(&self) -> MetaConfig {
        MetaConfig {
            iterations: self.iterations,
            inner_steps: self.inner_steps,
            inner_learning_rate: self.inner_learning_rate,
            outer_step: self.outer_step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Classifier,
    /// Skip the classifier and use the tree labels of the ground-truth depth.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub labels: LabelSource,
    /// Checkpoint to localize with; defaults to the train output.
    pub checkpoint: Option<PathBuf>,
    /// Pixel stride of the query descriptor grid. Independent of the
    /// training stride.
    pub stride: u32,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            labels: LabelSource::Classifier,
            checkpoint: None,
            stride: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `(translation, rotation in degrees)` success thresholds.
    pub thresholds: Vec<(f64, f64)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![(0.05, 5.0), (0.10, 10.0), (0.25, 25.0)],
        }
    }
}

impl ExperimentConfig {
    pub fn classifier_shape(&self) -> ClassifierShape {
        ClassifierShape {
            dim: self.descriptors.dim,
            hidden: self.classifier.hidden,
            classes: self.tree.m as usize,
            levels: self.tree.n as usize,
            hyper_hidden: self.classifier.hyper_hidden.unwrap_or(self.descriptors.dim),
        }
    }

    /// Parses TOML text, applies overrides from `env`, and validates.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self, HarnessError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        apply_env(&mut table, env)?;
        let version = table.get("version").and_then(toml::Value::as_integer);
        if let Some(v) = version {
            if v != CONFIG_VERSION as i64 {
                return Err(HarnessError::Config(format!("unsupported config version {v}")));
            }
        }
        let config: Self = table.try_into().map_err(|e| HarnessError::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return fail("unsupported config version");
        }
        if self.tree.m < 2 {
            return fail("tree.m must be at least 2");
        }
        if self.tree.n < 1 {
            return fail("tree.n must be at least 1");
        }
        if self.tree.q < 1 {
            return fail("tree.q must be at least 1");
        }
        if self.tree.fuse_stride < 1 {
            return fail("tree.fuse_stride must be at least 1");
        }
        if self.localize.stride < 1 {
            return fail("localize.stride must be at least 1");
        }
        if self.classifier.hidden < 1 || self.classifier.hyper_hidden == Some(0) {
            return fail("classifier widths must be at least 1");
        }
        if !(self.classifier.learning_rate >= 0.0) {
            return fail("classifier.learning_rate must be non-negative");
        }
        if self.descriptors.dim < 1 {
            return fail("descriptors.dim must be at least 1");
        }
        if !(self.descriptors.noise >= 0.0) || !(self.descriptors.scale > 0.0) {
            return fail("descriptor noise must be non-negative and scale positive");
        }
        if !(self.ransac.tau > 0.0) {
            return fail("ransac.tau must be positive");
        }
        if self.ransac.hypotheses < 1 {
            return fail("ransac.hypotheses must be at least 1");
        }
        if self.meta.inner_steps < 1 || !(self.meta.outer_step >= 0.0) || !(self.meta.inner_learning_rate >= 0.0) {
            return fail("meta.inner_steps must be at least 1 and step sizes non-negative");
        }
        if self.scene.stride < 1 {
            return fail("scene.stride must be at least 1");
        }
        if self.scene.source == SceneSource::Synthetic {
            if self.scene.n_points < 1 || !(self.scene.diameter > 0.0) {
                return fail("scene.n_points and scene.diameter must be positive");
            }
            if self.scene.train_views < 1 {
                return fail("scene.train_views must be at least 1");
            }
        }
        self.scene.camera()?;
        let mut must_exist: Vec<(&str, &Option<PathBuf>)> = Vec::new();
        if self.scene.source == SceneSource::Files {
            must_exist.push(("scene.depth_dir", &self.scene.depth_dir));
            must_exist.push(("scene.train_trajectory", &self.scene.train_trajectory));
            must_exist.push(("scene.query_trajectory", &self.scene.query_trajectory));
        }
        if self.descriptors.provider == ProviderKind::File {
            must_exist.push(("descriptors.dir", &self.descriptors.dir));
        }
        for (name, path) in must_exist {
            match path {
                None => return Err(HarnessError::Config(format!("{name} is required"))),
                Some(p) if !p.exists() => {
                    return Err(HarnessError::Config(format!("{name}: {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        for (t, r) in &self.eval.thresholds {
            if !(*t > 0.0 && *r > 0.0) {
                return fail("eval thresholds must be positive");
            }
        }
        Ok(())
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_env<I>(table: &mut toml::Table, env: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        let value = parse_env_value(&raw);
        match path.as_slice() {
            [top] => {
                table.insert(top.clone(), value);
            }
            [section, field] => {
                let entry = table
                    .entry(section.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let Some(sub) = entry.as_table_mut() else {
                    return Err(HarnessError::Config(format!("{key}: {section} is not a section")));
                };
                sub.insert(field.clone(), value);
            }
            _ => return Err(HarnessError::Config(format!("{key}: expected SECTION__KEY"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = ExperimentConfig::from_toml_with_env("", no_env()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.tree.m, c.tree.n, c.tree.q), (64, 2, 10));
        assert_eq!(c.ransac.hypotheses, 256);
    }

    #[test]
    fn resolved_copy_round_trips() {
        let mut c = ExperimentConfig::default();
        c.tree.m = 8;
        c.classifier.hyper_hidden = Some(5);
        let back = ExperimentConfig::from_toml_with_env(&c.to_toml(), no_env()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_overrides_win() {
        let env = vec![
            ("REGIONLOC_TREE__M".to_string(), "16".to_string()),
            ("REGIONLOC_SEED".to_string(), "9".to_string()),
            ("REGIONLOC_OUT_DIR".to_string(), "/tmp/x".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let c = ExperimentConfig::from_toml_with_env("[tree]\nm = 4\n", env).unwrap();
        assert_eq!(c.tree.m, 16);
        assert_eq!(c.seed, 9);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[tree]\nm = 1\n",
            "[tree]\nq = 0\n",
            "[ransac]\ntau = 0.0\n",
            "[classifier]\nhidden = 0\n",
            "version = 2\n",
            "[tree]\nbogus = 1\n",
            "[scene]\nsource = \"files\"\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_with_env(text, no_env()), Err(HarnessError::Config(_))),
                "{text}"
            );
        }
    }
}
