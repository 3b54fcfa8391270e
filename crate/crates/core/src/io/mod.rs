//! Datasets, configuration, checkpoint bundles, evaluation reports and SVG
//! export.

pub mod bundle;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod svg;
pub mod workflow;

pub use bundle::{Bundle, BundleManifest, ModelKind};
pub use config::{DataConfig, ExperimentConfig};
pub use dataset::{format_dataset as format_dataset_text, load_dataset, load_sequences, parse_dataset, save_dataset, DatasetRecord, FrameRecord, PredictionRecord};
pub use eval::{evaluate, EvalReport, Method};
pub use svg::{render_svg, write_svg};

use std::path::Path;

use thiserror::Error;

use crate::completion::CompletionError;
use crate::forecast::ForecastError;
use crate::numerics::NumericsError;
use crate::pose::PoseError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("invalid record: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Forecast(Box<ForecastError>),
    #[error(transparent)]
    Completion(#[from] CompletionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl From<ForecastError> for IoError {
    fn from(e: ForecastError) -> Self {
        IoError::Forecast(Box::new(e))
    }
}

impl IoError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
        move |source| IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
