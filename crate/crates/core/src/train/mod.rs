//! Dataset manifests, feature extraction, the training loop, evaluation
//! and metrics.

pub mod features;
pub mod manifest;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod trainer;

use std::path::PathBuf;

use thiserror::Error;

use crate::dsp::DspError;
use crate::model::{CheckpointError, ModelError};
use crate::tensor::TensorError;
use crate::wav::WavError;

pub use features::{FeatureError, FeatureExtractor};
pub use manifest::{load_manifest, Label, Manifest, ManifestEntry, ManifestError, Split};
pub use metrics::{confusion, metrics_from_confusion, ConfusionMatrix, Metrics, MetricsError};
pub use optim::Adam;
pub use pipeline::{run_evaluation, run_inference, run_training, Inference, TrainReport};
pub use synth::{write_synthetic_corpus, SynthSpec};
pub use trainer::{evaluate, train, EpochRecord, Evaluation, ScoreRow, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("{path}: {source}")]
    Dsp {
        path: PathBuf,
        #[source]
        source: DspError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("epoch {epoch}, batch {batch} (first clip {first_path}): {source}", first_path = first_path.display())]
    NumericalFault {
        epoch: usize,
        batch: usize,
        first_path: PathBuf,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
