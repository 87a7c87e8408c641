//! Triangular mel filter banks and (log-)power mel spectrograms.

use rayon::prelude::*;

use super::fft::fft;
use super::frame::{apply_window, frame_signal, FramingConfig};
use super::DspError;
use crate::wav::AudioClip;

/// Floor applied before taking logarithms of power values.
pub const POWER_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    pub fmax: f64,
    /// Row-major `n_mels × (n_fft/2 + 1)`.
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterBank {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let w = self.n_bins();
        &self.weights[m * w..(m + 1) * w]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Center frequency of each filter in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Projects a one-sided power spectrum onto the mel bands.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins());
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Builds `n_mels` triangular filters whose centers are uniformly spaced on
/// the mel scale between `fmin` and `fmax`. Each triangle peaks at 1.
pub fn build_mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterBank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels < 2 || n_fft < 2 || !(0.0..fmax).contains(&fmin) || fmax > nyquist {
        return Err(DspError::InvalidFrequencyRange {
            fmin,
            fmax,
            nyquist,
            n_mels,
        });
    }
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let step = (mhi - mlo) / (n_mels + 1) as f64;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + step * i as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(DspError::EmptyMelFilter { band: m, n_fft });
        }
    }
    Ok(MelFilterBank {
        n_mels,
        n_fft,
        sample_rate,
        fmin,
        fmax,
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MelScale {
    Power,
    Decibel { top_db: f64 },
}

/// `T × S` matrix, row = frame, column = mel band (low to high).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    frames: usize,
    bands: usize,
    pub scale: MelScale,
    pub framing: Option<FramingConfig>,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn from_rows(
        values: Vec<f64>,
        frames: usize,
        bands: usize,
        scale: MelScale,
    ) -> Result<Self, DspError> {
        if values.len() != frames * bands || frames == 0 || bands == 0 {
            return Err(DspError::ShapeMismatch {
                expected: frames * bands,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            frames,
            bands,
            scale,
            framing: None,
            sample_rate: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.bands + s]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.bands..(t + 1) * self.bands]
    }
}

/// Power mel spectrogram: window → FFT → `|X[k]|²` → filter bank, per frame.
///
/// Frames shorter than the filter bank's FFT size are zero-padded.
pub fn mel_spectrogram(
    clip: &AudioClip,
    framing: &FramingConfig,
    bank: &MelFilterBank,
) -> Result<MelSpectrogram, DspError> {
    if framing.frame_len > bank.n_fft {
        return Err(DspError::FrameExceedsFft {
            frame_len: framing.frame_len,
            n_fft: bank.n_fft,
        });
    }
    let frames = frame_signal(clip, framing)?;
    let rows: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|frame| {
            let mut buf = apply_window(frame, framing.window);
            buf.resize(bank.n_fft, 0.0);
            let power = fft(&buf)?.one_sided_power();
            Ok(bank.apply(&power))
        })
        .collect::<Result<_, DspError>>()?;
    let t = rows.len();
    Ok(MelSpectrogram {
        values: rows.into_iter().flatten().collect(),
        frames: t,
        bands: bank.n_mels,
        scale: MelScale::Power,
        framing: Some(*framing),
        sample_rate: clip.sample_rate,
    })
}

/// `10·log10(max(v, ε) / v_max)` clipped below at `-top_db`.
///
/// An all-silent input (`v_max ≤ ε`) has no reference level and maps to the
/// uniform floor `-top_db`.
pub fn to_db(ms: &MelSpectrogram, top_db: f64) -> Result<MelSpectrogram, DspError> {
    if ms.scale != MelScale::Power {
        return Err(DspError::WrongScale("to_db expects a power-scale spectrogram"));
    }
    let vmax = ms.values.iter().cloned().fold(0.0, f64::max);
    let values = if vmax <= POWER_FLOOR {
        vec![-top_db; ms.values.len()]
    } else {
        ms.values
            .iter()
            .map(|&v| (10.0 * (v.max(POWER_FLOOR) / vmax).log10()).max(-top_db))
            .collect()
    };
    Ok(MelSpectrogram {
        values,
        scale: MelScale::Decibel { top_db },
        ..ms.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::frame::WindowKind;
    use proptest::prelude::*;

    #[test]
    fn mel_of_700_hz() {
        let expect = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - expect).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn default_bank_has_no_empty_rows() {
        let bank = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        assert_eq!(bank.weights().len(), 64 * 513);
        for m in 0..64 {
            assert!(bank.row(m).iter().any(|&w| w > 0.0), "row {m} empty");
            assert!(bank.row(m).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        assert!(bank.centers_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_ranges() {
        assert!(build_mel_filterbank(64, 1024, 16000, 0.0, 9000.0).is_err());
        assert!(build_mel_filterbank(64, 1024, 16000, 500.0, 500.0).is_err());
        assert!(build_mel_filterbank(1, 1024, 16000, 0.0, 8000.0).is_err());
        assert!(build_mel_filterbank(8, 1024, 16000, -1.0, 8000.0).is_err());
    }

    #[test]
    fn too_many_mels_for_fft_size() {
        assert!(matches!(
            build_mel_filterbank(128, 64, 16000, 0.0, 8000.0),
            Err(DspError::EmptyMelFilter { .. })
        ));
    }

    fn framing() -> FramingConfig {
        FramingConfig {
            frame_len: 1024,
            hop: 512,
            window: WindowKind::Hann,
        }
    }

    #[test]
    fn silent_clip_is_zero() {
        let bank = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        let ms = mel_spectrogram(&AudioClip::new(vec![0.0; 4096], 16000), &framing(), &bank).unwrap();
        assert!(ms.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape() {
        let bank = build_mel_filterbank(64, 1024, 16000, 0.0, 8000.0).unwrap();
        let clip = AudioClip::new((0..16384).map(|i| (i as f64 * 0.01).sin()).collect(), 16000);
        let ms = mel_spectrogram(&clip, &framing(), &bank).unwrap();
        assert_eq!((ms.frames(), ms.bands()), (31, 64));
    }

    #[test]
    fn tone_at_center_dominates_its_band() {
        let bank = build_mel_filterbank(32, 1024, 16000, 0.0, 8000.0).unwrap();
        for band in [5, 12, 20, 28] {
            let f = bank.centers_hz()[band];
            let clip = AudioClip::new(
                (0..8192)
                    .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
                    .collect(),
                16000,
            );
            let ms = mel_spectrogram(&clip, &framing(), &bank).unwrap();
            for t in 0..ms.frames() {
                let row = ms.row(t);
                let argmax = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                assert_eq!(argmax, band, "frame {t}");
            }
        }
    }

    #[test]
    fn db_examples() {
        let ms = MelSpectrogram::from_rows(vec![1.0, 0.1], 1, 2, MelScale::Power).unwrap();
        let db = to_db(&ms, 80.0).unwrap();
        assert!((db.values()[0] - 0.0).abs() < 1e-12);
        assert!((db.values()[1] + 10.0).abs() < 1e-12);

        let ms = MelSpectrogram::from_rows(vec![3.0; 6], 2, 3, MelScale::Power).unwrap();
        assert!(to_db(&ms, 80.0).unwrap().values().iter().all(|&v| v == 0.0));

        let ms = MelSpectrogram::from_rows(vec![0.0; 6], 2, 3, MelScale::Power).unwrap();
        assert!(to_db(&ms, 80.0).unwrap().values().iter().all(|&v| v == -80.0));
    }

    #[test]
    fn db_rejects_db_input() {
        let ms = MelSpectrogram::from_rows(vec![1.0], 1, 1, MelScale::Power).unwrap();
        let db = to_db(&ms, 80.0).unwrap();
        assert!(to_db(&db, 80.0).is_err());
    }

    proptest! {
        #[test]
        fn db_range(values in proptest::collection::vec(0.0f64..1e6, 1..64), top_db in 1.0f64..120.0) {
            let n = values.len();
            let ms = MelSpectrogram::from_rows(values, 1, n, MelScale::Power).unwrap();
            let db = to_db(&ms, top_db).unwrap();
            prop_assert!(db.values().iter().all(|&v| v <= 0.0 && v >= -top_db));
        }

        #[test]
        fn power_mel_nonnegative(samples in proptest::collection::vec(-1.0f64..1.0, 256..1024)) {
            let bank = build_mel_filterbank(16, 256, 16000, 0.0, 8000.0).unwrap();
            let cfg = FramingConfig { frame_len: 256, hop: 128, window: WindowKind::Hann };
            let ms = mel_spectrogram(&AudioClip::new(samples, 16000), &cfg, &bank).unwrap();
            prop_assert!(ms.values().iter().all(|&v| v >= 0.0));
        }
    }
}
