//! Experiment orchestration: feature extraction, PCA, SVM training,
//! evaluation, the three parameter sweeps, and report output.

mod config;
mod experiment;
mod features;
mod fixtures;
mod report;

use std::path::PathBuf;

use thiserror::Error;

use crate::cnn::CnnError;
use crate::dataset::DatasetError;
use crate::pca::PcaError;
use crate::scattering::ScatteringError;
use crate::svm::SvmError;

pub use config::{
    CnnConfig, FeatureKind, FitScope, PcaConfig, PreprocessConfig, RunConfig, ScatteringConfig,
    Standardize, SvmConfig, TapSide, VGG_MEAN,
};
pub use experiment::{
    accuracy, evaluate, run_experiment, sweep_layers, sweep_pca, sweep_train_count, train,
    Accuracy, TrainedModels, LAYER_FEATURE_CAP,
};
pub use features::{extract_features, extract_layer_features, FEATURE_MAGIC};
pub use fixtures::{
    make_fixtures, tiny_network, FixtureSet, FIXTURE_IMAGES, FIXTURE_SIZE, FIXTURE_SUBJECTS,
};
pub use report::{Record, Report};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("features: {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("cnn: {0}")]
    Cnn(#[from] CnnError),
    #[error("scattering: {0}")]
    Scattering(#[from] ScatteringError),
    #[error("pca: {0}")]
    Pca(#[from] PcaError),
    #[error("svm: {0}")]
    Svm(#[from] SvmError),
    #[error("accuracy: {predictions} predictions for {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("accuracy: no predictions to score")]
    Empty,
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}
