//! Synthetic corpus for smoke tests: pure tones labelled real and
//! amplitude-modulated white noise labelled fake.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{load_manifest, Label, Manifest, Split};
use super::TrainError;
use crate::wav::{write_wav, AudioClip, WavEncoding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    /// Clips per class in training, validation and testing.
    pub per_class: [usize; 3],
    pub sample_rate: u32,
    pub duration_secs: f64,
}

impl Default for SynthSpec {
    /// 16 + 16 training clips, 4 + 4 for each held-out split, 1 s at 16 kHz.
    fn default() -> Self {
        Self {
            per_class: [16, 4, 4],
            sample_rate: 16000,
            duration_secs: 1.0,
        }
    }
}

/// Sine at 200–2000 Hz with random phase and amplitude 0.3–0.8.
pub fn sine_clip(rng: &mut impl Rng, sample_rate: u32, n: usize) -> AudioClip {
    let f = rng.random_range(200.0..2000.0);
    let a = rng.random_range(0.3..0.8);
    let phase = rng.random_range(0.0..2.0 * PI);
    let sr = f64::from(sample_rate);
    AudioClip::new(
        (0..n).map(|i| a * (2.0 * PI * f * i as f64 / sr + phase).sin()).collect(),
        sample_rate,
    )
}

/// Uniform white noise under a 2–8 Hz sinusoidal envelope.
pub fn am_noise_clip(rng: &mut impl Rng, sample_rate: u32, n: usize) -> AudioClip {
    let fm = rng.random_range(2.0..8.0);
    let a = rng.random_range(0.3..0.8);
    let sr = f64::from(sample_rate);
    AudioClip::new(
        (0..n)
            .map(|i| {
                let env = 0.5 * (1.0 + (2.0 * PI * fm * i as f64 / sr).sin());
                a * env * rng.random_range(-1.0..1.0)
            })
            .collect(),
        sample_rate,
    )
}

/// Writes `root/<split>/<label>/<label>_NNN.wav` (16-bit PCM) and loads the
/// resulting manifest.
pub fn write_synthetic_corpus(root: &Path, seed: u64, spec: &SynthSpec) -> Result<Manifest, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (spec.duration_secs * f64::from(spec.sample_rate)).round() as usize;
    for (split, &count) in Split::ALL.iter().zip(&spec.per_class) {
        for label in Label::ALL {
            let dir = root.join(split.as_str()).join(label.as_str());
            std::fs::create_dir_all(&dir).map_err(|source| TrainError::Io {
                path: dir.clone(),
                source,
            })?;
            for i in 0..count {
                let clip = match label {
                    Label::Real => sine_clip(&mut rng, spec.sample_rate, n),
                    Label::Fake => am_noise_clip(&mut rng, spec.sample_rate, n),
                };
                let path = dir.join(format!("{label}_{i:03}.wav"));
                write_wav(&path, &clip, WavEncoding::Pcm16).map_err(|source| TrainError::Io { path, source })?;
            }
        }
    }
    Ok(load_manifest(root)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_layout_and_determinism() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SynthSpec {
            per_class: [2, 1, 1],
            duration_secs: 0.25,
            ..SynthSpec::default()
        };
        let m = write_synthetic_corpus(a.path(), 9, &spec).unwrap();
        write_synthetic_corpus(b.path(), 9, &spec).unwrap();
        assert_eq!(m.entries().len(), 8);
        assert_eq!(m.count(Split::Training), 4);
        for e in m.entries() {
            let rel = e.path.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&e.path).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn clips_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [sine_clip(&mut rng, 16000, 4000), am_noise_clip(&mut rng, 16000, 4000)] {
            assert_eq!(c.len(), 4000);
            assert!(c.samples.iter().all(|s| s.abs() <= 0.8));
        }
    }
}
