//! Discrete Fourier transform: a direct O(N²) evaluation used as the
//! reference, and an iterative radix-2 Cooley–Tukey FFT.

use num_complex::Complex;
use num_traits::Float;

use super::DspError;

/// Complex spectrum of a length-N frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub bins: Vec<Complex<T>>,
}

impl<T: Float> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// `|X[k]|²` for `k = 0..=N/2`.
    pub fn one_sided_power(&self) -> Vec<T> {
        self.bins[..self.bins.len() / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 is representable in every Float type")
}

/// Twiddle table `e^{-j2πm/N}` for `m = 0..N`, evaluated in f64.
fn twiddles<T: Float>(n: usize) -> Vec<Complex<T>> {
    (0..n)
        .map(|m| {
            let theta = -2.0 * std::f64::consts::PI * m as f64 / n as f64;
            Complex::new(cast(theta.cos()), cast(theta.sin()))
        })
        .collect()
}

/// `X[k] = Σₙ x[n]·e^{-j2πkn/N}` evaluated term by term.
///
/// The phase index `k·n` is reduced modulo N before the table lookup so the
/// angle itself never loses precision.
pub fn dft_naive<T: Float>(frame: &[T]) -> Spectrum<T> {
    let n = frame.len();
    if n == 0 {
        return Spectrum { bins: Vec::new() };
    }
    let table = twiddles::<T>(n);
    let bins = (0..n)
        .map(|k| {
            let mut acc = Complex::new(T::zero(), T::zero());
            let mut idx = 0usize;
            for &x in frame {
                acc = acc + table[idx] * x;
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            acc
        })
        .collect();
    Spectrum { bins }
}

/// Radix-2 decimation-in-time FFT of a real frame.
pub fn fft<T: Float>(frame: &[T]) -> Result<Spectrum<T>, DspError> {
    let mut buf: Vec<Complex<T>> = frame.iter().map(|&x| Complex::new(x, T::zero())).collect();
    fft_in_place(&mut buf)?;
    Ok(Spectrum { bins: buf })
}

/// In-place complex FFT. Length must be a power of two (1 is allowed).
pub fn fft_in_place<T: Float>(buf: &mut [Complex<T>]) -> Result<(), DspError> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::NonPowerOfTwoLength(n));
    }
    if n == 1 {
        return Ok(());
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let table = twiddles::<T>(n);
    let mut half = 1;
    while half < n {
        let stride = n / (2 * half);
        for start in (0..n).step_by(2 * half) {
            for k in 0..half {
                let w = table[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        half *= 2;
    }
    Ok(())
}

/// Norm-wise relative error `‖a − b‖₂ / ‖b‖₂` (absolute when `b` is zero).
pub fn spectrum_relative_error<T: Float>(a: &Spectrum<T>, b: &Spectrum<T>) -> f64 {
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for (x, y) in a.bins.iter().zip(&b.bins) {
        let dr = x.re.to_f64().unwrap() - y.re.to_f64().unwrap();
        let di = x.im.to_f64().unwrap() - y.im.to_f64().unwrap();
        diff += dr * dr + di * di;
        norm += y.norm_sqr().to_f64().unwrap();
    }
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let c = 0.75;
        let s = dft_naive(&[c; 16]);
        assert!((s.bins[0].re - 16.0 * c).abs() < 1e-9);
        assert!(s.bins[0].im.abs() < 1e-9);
        for b in &s.bins[1..] {
            assert!(b.norm() < 1e-9);
        }
    }

    #[test]
    fn cosine_hits_bins_one_and_n_minus_one() {
        let n = 32;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let s = dft_naive(&x);
        for (k, b) in s.bins.iter().enumerate() {
            let expect = if k == 1 || k == n - 1 { n as f64 / 2.0 } else { 0.0 };
            assert!((b.re - expect).abs() < 1e-9, "bin {k}: {b}");
            assert!(b.im.abs() < 1e-9, "bin {k}: {b}");
        }
    }

    #[test]
    fn parseval_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_signal(&mut rng, 100);
        let s = dft_naive(&x);
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = s.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((time - freq).abs() / time < 1e-12);
    }

    #[test]
    fn fft_matches_naive_length_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_signal(&mut rng, 16);
        let a = fft(&x).unwrap();
        let b = dft_naive(&x);
        for (p, q) in a.bins.iter().zip(&b.bins) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn fft_of_zeros_is_zero() {
        let s = fft(&[0.0f64; 64]).unwrap();
        assert!(s.bins.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn fft_rejects_length_12() {
        assert!(matches!(fft(&[0.0f64; 12]), Err(DspError::NonPowerOfTwoLength(12))));
        assert!(matches!(fft::<f64>(&[]), Err(DspError::NonPowerOfTwoLength(0))));
    }

    #[test]
    fn fft_length_one() {
        let s = fft(&[3.5f64]).unwrap();
        assert_eq!(s.bins, vec![Complex::new(3.5, 0.0)]);
    }

    proptest! {
        #[test]
        fn fft_equals_naive(log_n in 0u32..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_signal(&mut rng, 1 << log_n);
            let err = spectrum_relative_error(&fft(&x).unwrap(), &dft_naive(&x));
            prop_assert!(err < 1e-10, "err {err}");
        }

        #[test]
        fn conjugate_symmetry(log_n in 1u32..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1usize << log_n;
            let s = fft(&random_signal(&mut rng, n)).unwrap();
            for k in 1..n {
                prop_assert!((s.bins[k] - s.bins[n - k].conj()).norm() < 1e-9);
            }
        }

        #[test]
        fn dft_is_linear(n in 1usize..40, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_signal(&mut rng, n);
            let y = random_signal(&mut rng, n);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = dft_naive(&mix);
            let (dx, dy) = (dft_naive(&x), dft_naive(&y));
            for k in 0..n {
                let rhs = dx.bins[k] * a + dy.bins[k] * b;
                prop_assert!((lhs.bins[k] - rhs).norm() < 1e-9);
            }
        }

        #[test]
        fn parseval_relative(log_n in 0u32..11, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_signal(&mut rng, 1 << log_n);
            let s = fft(&x).unwrap();
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = s.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
            prop_assert!((time - freq).abs() <= 1e-6 * time.max(1e-300));
        }
    }
}
