//! Audio front end: framing, windowing, DFT/FFT, mel filter banks,
//! decibel scaling, cepstral coefficients and the model input image.

pub mod export;
pub mod fft;
pub mod frame;
pub mod image;
pub mod mel;
pub mod mfcc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fft::{dft_naive, fft, Spectrum};
pub use frame::{apply_window, frame_signal, FramingConfig, WindowKind};
pub use image::to_model_input;
pub use mel::{build_mel_filterbank, mel_spectrogram, to_db, MelFilterBank, MelScale, MelSpectrogram};
pub use mfcc::{mfcc, LogBase, MfccMatrix};

use crate::tensor::Tensor;
use crate::wav::{resample_linear, AudioClip};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than one frame ({frame_len})")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("invalid framing: frame_len {frame_len}, hop {hop}")]
    InvalidFraming { frame_len: usize, hop: usize },
    #[error("length {0} is not a power of two")]
    NonPowerOfTwoLength(usize),
    #[error("invalid mel range: fmin {fmin}, fmax {fmax}, nyquist {nyquist}, n_mels {n_mels}")]
    InvalidFrequencyRange {
        fmin: f64,
        fmax: f64,
        nyquist: f64,
        n_mels: usize,
    },
    #[error("mel filter {band} covers no FFT bin at n_fft = {n_fft}")]
    EmptyMelFilter { band: usize, n_fft: usize },
    #[error("frame length {frame_len} exceeds FFT size {n_fft}")]
    FrameExceedsFft { frame_len: usize, n_fft: usize },
    #[error("{0}")]
    WrongScale(&'static str),
    #[error("requested {requested} coefficients from {bands} mel bands")]
    TooManyCoefficients { requested: usize, bands: usize },
    #[error("degenerate input: spectrogram is {frames}×{bands}, need at least 2×2")]
    DegenerateInput { frames: usize, bands: usize },
    #[error("expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Front-end parameters, the `dsp` section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub top_db: f64,
    pub n_mfcc: usize,
    pub log_base: LogBase,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_len: 1024,
            hop: 512,
            window: WindowKind::Hann,
            n_mels: 64,
            fmin: 0.0,
            fmax: None,
            top_db: 80.0,
            n_mfcc: 20,
            log_base: LogBase::Natural,
        }
    }
}

/// Everything the front end derives from one clip.
#[derive(Debug, Clone)]
pub struct Features {
    pub power: MelSpectrogram,
    pub decibel: MelSpectrogram,
}

impl DspConfig {
    pub fn framing(&self) -> FramingConfig {
        FramingConfig {
            frame_len: self.frame_len,
            hop: self.hop,
            window: self.window,
        }
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn filterbank(&self) -> Result<MelFilterBank, DspError> {
        build_mel_filterbank(
            self.n_mels,
            self.frame_len,
            self.sample_rate,
            self.fmin,
            self.fmax_hz(),
        )
    }

    /// Checks every constraint that can be checked without audio.
    pub fn validate(&self) -> Result<(), DspError> {
        self.framing().validate()?;
        if !self.frame_len.is_power_of_two() {
            return Err(DspError::NonPowerOfTwoLength(self.frame_len));
        }
        if !(self.top_db > 0.0) {
            return Err(DspError::WrongScale("top_db must be positive"));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(DspError::TooManyCoefficients {
                requested: self.n_mfcc,
                bands: self.n_mels,
            });
        }
        self.filterbank().map(|_| ())
    }

    /// Resamples to the configured rate and computes power and dB mel
    /// spectrograms.
    pub fn analyze(&self, clip: &AudioClip) -> Result<Features, DspError> {
        self.analyze_with(clip, &self.filterbank()?)
    }

    pub fn analyze_with(&self, clip: &AudioClip, bank: &MelFilterBank) -> Result<Features, DspError> {
        let clip = resample_linear(clip, self.sample_rate);
        let power = mel_spectrogram(&clip, &self.framing(), bank)?;
        let decibel = to_db(&power, self.top_db)?;
        Ok(Features { power, decibel })
    }

    /// Clip to `3 × height × width` model input.
    pub fn model_input(
        &self,
        clip: &AudioClip,
        bank: &MelFilterBank,
        height: usize,
        width: usize,
    ) -> Result<Tensor, DspError> {
        let f = self.analyze_with(clip, bank)?;
        to_model_input(&f.decibel, height, width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        DspConfig::default().validate().unwrap();
        assert_eq!(DspConfig::default().fmax_hz(), 8000.0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<DspConfig>(r#"{"n_mels": 40, "bogus": 1}"#);
        assert!(err.is_err());
        let cfg: DspConfig = serde_json::from_str(r#"{"n_mels": 40, "window": "rectangular"}"#).unwrap();
        assert_eq!(cfg.n_mels, 40);
        assert_eq!(cfg.window, WindowKind::Rectangular);
        assert_eq!(cfg.hop, 512);
    }

    #[test]
    fn non_power_of_two_frame_rejected() {
        let cfg = DspConfig {
            frame_len: 1000,
            hop: 500,
            ..DspConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(DspError::NonPowerOfTwoLength(1000))));
    }
}
