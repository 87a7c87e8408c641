//! Audio deepfake detection engine.
//!
//! WAV ingestion ([`wav`]), the mel/MFCC front end ([`dsp`]), a small dense
//! tensor library with reverse-mode gradients ([`tensor`]), the MFCMNet
//! classifier with multi-frequency channel attention ([`model`]) and the
//! training/evaluation harness ([`train`]).

pub mod config;
pub mod dsp;
pub mod model;
pub mod tensor;
pub mod train;
pub mod wav;

pub use config::{ConfigError, RunConfig};
pub use dsp::DspConfig;
pub use model::{MfcmNet, MfcmNetConfig, ModelError};
pub use tensor::{Tape, Tensor, TensorError, Var};
pub use train::{Manifest, Metrics, TrainConfig, TrainError};
pub use wav::{AudioClip, WavError};
