//! File names inside an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::HarnessError;

#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("resolved_config.toml")
    }

    pub fn scene_dir(&self) -> PathBuf {
        self.root.join("scene")
    }

    pub fn manifest(&self) -> PathBuf {
        self.scene_dir().join("manifest.json")
    }

    pub fn depth_dir(&self) -> PathBuf {
        self.scene_dir().join("depth")
    }

    pub fn train_trajectory(&self) -> PathBuf {
        self.scene_dir().join("train.txt")
    }

    pub fn query_trajectory(&self) -> PathBuf {
        self.scene_dir().join("query.txt")
    }

    pub fn tree(&self) -> PathBuf {
        self.root.join("tree.srct")
    }

    pub fn tree_summary(&self) -> PathBuf {
        self.root.join("tree.json")
    }

    pub fn pretrained(&self) -> PathBuf {
        self.root.join("pretrain.srcc")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.srcc")
    }

    pub fn train_curve(&self) -> PathBuf {
        self.root.join("train_curve.csv")
    }

    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.json")
    }

    pub fn estimates(&self) -> PathBuf {
        self.root.join("estimates.txt")
    }

    pub fn localize_report(&self) -> PathBuf {
        self.root.join("localize_report.json")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }
}

/// Name of the i-th depth view of a role, without extension.
pub fn view_name(role: &str, index: usize) -> String {
    format!("{role}_{index:04}")
}

pub fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}
