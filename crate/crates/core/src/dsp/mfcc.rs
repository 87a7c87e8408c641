//! Cepstral coefficients: an unscaled DCT-II of the log mel spectrum,
//! `c(t, r) = Σ_s log X(t, s) · cos(π·r·(s + 0.5) / S)`.

use serde::{Deserialize, Serialize};

use super::mel::{MelScale, MelSpectrogram, POWER_FLOOR};
use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn log(self, v: f64) -> f64 {
        match self {
            LogBase::Natural => v.ln(),
            LogBase::Ten => v.log10(),
        }
    }
}

/// `T × R` coefficients, row = frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    coeffs: Vec<f64>,
    frames: usize,
    n_coeffs: usize,
}

impl MfccMatrix {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn get(&self, t: usize, r: usize) -> f64 {
        self.coeffs[t * self.n_coeffs + r]
    }

    pub fn values(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.coeffs[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }
}

/// Computes `n_coeffs` cepstral coefficients per frame from a power-scale
/// mel spectrogram. Power values are floored at [`POWER_FLOOR`] before the
/// logarithm. No orthonormal scaling is applied.
pub fn mfcc(ms: &MelSpectrogram, n_coeffs: usize, base: LogBase) -> Result<MfccMatrix, DspError> {
    if ms.scale != MelScale::Power {
        return Err(DspError::WrongScale("mfcc expects a power-scale spectrogram"));
    }
    let s = ms.bands();
    if n_coeffs == 0 || n_coeffs > s {
        return Err(DspError::TooManyCoefficients {
            requested: n_coeffs,
            bands: s,
        });
    }
    let basis: Vec<f64> = (0..n_coeffs)
        .flat_map(|r| {
            (0..s).map(move |j| {
                (std::f64::consts::PI * r as f64 * (j as f64 + 0.5) / s as f64).cos()
            })
        })
        .collect();
    let mut coeffs = Vec::with_capacity(ms.frames() * n_coeffs);
    let mut logs = vec![0.0; s];
    for t in 0..ms.frames() {
        for (l, &v) in logs.iter_mut().zip(ms.row(t)) {
            *l = base.log(v.max(POWER_FLOOR));
        }
        for r in 0..n_coeffs {
            let b = &basis[r * s..(r + 1) * s];
            coeffs.push(b.iter().zip(&logs).map(|(c, l)| c * l).sum());
        }
    }
    Ok(MfccMatrix {
        coeffs,
        frames: ms.frames(),
        n_coeffs,
    })
}
