//! Experiment orchestration: matching, pooling, optional PCA, nested
//! cross-validated probing per model, layer and contrast, plus report and
//! synthetic-data generation.

mod config;
mod experiment;
mod report;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::dimselect::{DimError, ProjectStoreError};
use crate::phonepatterns::{PatternError, Place};
use crate::reprstore::StoreError;
use crate::xval::XvalError;

pub use config::{
    BuiltinSet, ContrastsConfig, CustomContrast, CvConfig, ExperimentConfig, ModelConfig, PcaConfig, PcaMode,
    PcaPopulation,
};
pub use experiment::{
    match_targets, pool_layers, run_experiment, select_dimensionality, write_outputs, ControlRow, MatchedContrast,
    PartitionCheck, RunOutput, SelectionRow,
};
pub use report::{emit_report, render_svg, ResultRow, ResultsTable, RESULTS_COLUMNS};
pub use synth::{generate_synthetic, SynthOutput, SynthSpec};

#[derive(Debug, Error)]
pub enum TaskFailure {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Xval(#[from] XvalError),
    #[error(transparent)]
    Dim(#[from] DimError),
    #[error(transparent)]
    Project(#[from] ProjectStoreError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("contrast {contrast}: {source}")]
    Pattern {
        contrast: String,
        #[source]
        source: PatternError,
    },
    #[error("{}: {source}", path.display())]
    Store {
        path: PathBuf,
        #[source]
        source: StoreError,
    },
    #[error("token partition violated at {place:?}: {message}")]
    Partition { place: Place, message: String },
    #[error("model {model}, layer {layer}, contrast {contrast}: {source}")]
    Task {
        model: String,
        layer: i32,
        contrast: String,
        #[source]
        source: TaskFailure,
    },
    #[error("model {model}: dimensionality selection failed: {source}")]
    Selection {
        model: String,
        #[source]
        source: DimError,
    },
    #[error("report: {0}")]
    Report(String),
}

impl RunError {
    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io { .. } | RunError::Store { .. } | RunError::Report(_) => 3,
            RunError::Corpus(_) | RunError::Pattern { .. } | RunError::Partition { .. } => 4,
            RunError::Task { .. } | RunError::Selection { .. } => 5,
        }
    }
}

/// Stable 64-bit seed for a named task, independent of scheduling.
pub fn task_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the base seed and the task name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
