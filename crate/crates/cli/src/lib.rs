//! Experiment harness: configuration, the scene / tree / training /
//! localization pipelines, and their on-disk artifacts.

pub mod commands;
pub mod config;
pub mod layout;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use report::{EvalReport, QueryRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Numerical(_) => 4,
        }
    }

    pub(crate) fn data(e: impl std::fmt::Display) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<regionloc::classifier::ClassifierError> for HarnessError {
    fn from(e: regionloc::classifier::ClassifierError) -> Self {
        use regionloc::classifier::ClassifierError as E;
        match e {
            E::NonFiniteLoss { .. } => HarnessError::Numerical(e.to_string()),
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    regionloc::geometry::GeometryError,
    regionloc::partition::PartitionError,
    regionloc::descriptors::DescriptorError,
    regionloc::pose::PoseError,
    regionloc::synth::SynthError
);
