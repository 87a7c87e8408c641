use serde::{Deserialize, Serialize};

use super::DspError;
use crate::wav::AudioClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl FramingConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(DspError::InvalidFraming {
                frame_len: self.frame_len,
                hop: self.hop,
            });
        }
        Ok(())
    }

    /// `floor((n - frame_len) / hop) + 1`, or `None` when `n < frame_len`.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        (n >= self.frame_len).then(|| (n - self.frame_len) / self.hop + 1)
    }
}

/// Splits the clip into frames `[i·hop, i·hop + frame_len)`. A trailing
/// partial frame is dropped.
pub fn frame_signal(clip: &AudioClip, cfg: &FramingConfig) -> Result<Vec<Vec<f64>>, DspError> {
    cfg.validate()?;
    let n = clip.samples.len();
    let m = cfg.num_frames(n).ok_or(DspError::SignalTooShort {
        len: n,
        frame_len: cfg.frame_len,
    })?;
    Ok((0..m)
        .map(|i| clip.samples[i * cfg.hop..i * cfg.hop + cfg.frame_len].to_vec())
        .collect())
}

/// Window coefficients of length `len`.
pub fn window(kind: WindowKind, len: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => vec![1.0; len],
        WindowKind::Hann if len < 2 => vec![1.0; len],
        WindowKind::Hann => {
            let denom = (len - 1) as f64;
            (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / denom).cos()))
                .collect()
        }
    }
}

pub fn apply_window(frame: &[f64], kind: WindowKind) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => frame.to_vec(),
        WindowKind::Hann => frame
            .iter()
            .zip(window(kind, frame.len()))
            .map(|(x, w)| x * w)
            .collect(),
    }
}
