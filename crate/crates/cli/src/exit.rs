//! Failure classes and their process exit codes.

use std::fmt;

use mfcm_core::dsp::DspError;
use mfcm_core::model::CheckpointError;
use mfcm_core::train::{FeatureError, TrainError};
use mfcm_core::{ConfigError, ModelError, TensorError, WavError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 1,
    InputParse = 2,
    NumericFault = 3,
    ConfigInvalid = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub class: ExitClass,
    pub message: String,
}

impl Failure {
    pub fn new(class: ExitClass, message: impl fmt::Display) -> Self {
        Self {
            class,
            message: message.to_string(),
        }
    }

    pub fn code(&self) -> u8 {
        self.class as u8
    }
}

impl From<WavError> for Failure {
    fn from(e: WavError) -> Self {
        Failure::new(ExitClass::InputParse, e)
    }
}

impl From<DspError> for Failure {
    fn from(e: DspError) -> Self {
        Failure::new(ExitClass::NumericFault, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let class = match e {
            ConfigError::Io { .. } => ExitClass::InputParse,
            ConfigError::Parse(_) | ConfigError::Invalid(_) => ExitClass::ConfigInvalid,
        };
        Failure::new(class, e)
    }
}

fn tensor_class(e: &TensorError) -> ExitClass {
    match e {
        TensorError::NumericalFault { .. } => ExitClass::NumericFault,
        TensorError::ShapeMismatch { .. } | TensorError::NonScalarLoss(_) => ExitClass::ConfigInvalid,
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Failure::new(tensor_class(&e), e)
    }
}

fn model_class(e: &ModelError) -> ExitClass {
    match e {
        ModelError::Tensor(t) => tensor_class(t),
        ModelError::InvalidConfig(_) | ModelError::BandTooThin { .. } => ExitClass::ConfigInvalid,
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(model_class(&e), e)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let class = match &e {
            CheckpointError::Model(m) => model_class(m),
            CheckpointError::Mismatch(_) => ExitClass::ConfigInvalid,
            _ => ExitClass::InputParse,
        };
        Failure::new(class, e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let class = match &e {
            TrainError::Manifest(_) | TrainError::Wav { .. } | TrainError::Io { .. } | TrainError::EmptySplit(_) => {
                ExitClass::InputParse
            }
            TrainError::Features(f) => match f {
                FeatureError::Wav { .. } | FeatureError::Cache { .. } => ExitClass::InputParse,
                FeatureError::Dsp { .. } => ExitClass::NumericFault,
            },
            TrainError::Dsp { .. } | TrainError::NumericalFault { .. } => ExitClass::NumericFault,
            TrainError::Model(m) => model_class(m),
            TrainError::Tensor(t) => tensor_class(t),
            TrainError::Checkpoint(c) => return Failure::from_checkpoint_ref(c, &e),
            TrainError::Metrics(_) => ExitClass::InputParse,
            TrainError::CheckpointMismatch(_) | TrainError::Config(_) => ExitClass::ConfigInvalid,
        };
        Failure::new(class, e)
    }
}

impl Failure {
    fn from_checkpoint_ref(c: &CheckpointError, outer: &TrainError) -> Self {
        let class = match c {
            CheckpointError::Model(m) => model_class(m),
            CheckpointError::Mismatch(_) => ExitClass::ConfigInvalid,
            _ => ExitClass::InputParse,
        };
        Failure::new(class, outer)
    }
}

pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::new(ExitClass::InputParse, format!("{}: {e}", path.display()))
}
