//! Seeded inputs shared by the criterion benches.

use mfcm_core::{AudioClip, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 1337;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// One second of white noise at `sample_rate`.
pub fn noise_clip(sample_rate: u32, seed: u64) -> AudioClip {
    AudioClip::new(random_signal(sample_rate as usize, seed), sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(random_signal(16, 3), random_signal(16, 3));
        assert_eq!(random_tensor(&[2, 3], 3).shape(), &[2, 3]);
        assert_eq!(noise_clip(8000, 1).len(), 8000);
    }
}
