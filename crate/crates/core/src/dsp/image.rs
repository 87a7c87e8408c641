//! Spectrogram to model-input conversion.
//!
//! The mel axis becomes the image height (row 0 = lowest band) and time
//! becomes the width, so downstream band splitting along the height axis
//! splits by frequency.

use super::mel::{MelScale, MelSpectrogram};
use super::DspError;
use crate::tensor::Tensor;

/// Bilinear resize of a row-major `rows × cols` grid with corner-aligned
/// sampling.
pub fn bilinear_resize(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let scale = |o: usize, n: usize| -> f64 {
        if o <= 1 {
            0.0
        } else {
            (n - 1) as f64 / (o - 1) as f64
        }
    };
    let (sy, sx) = (scale(out_rows, rows), scale(out_cols, cols));
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for y in 0..out_rows {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(rows - 1);
        let y1 = (y0 + 1).min(rows - 1);
        let wy = fy - y0 as f64;
        for x in 0..out_cols {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(cols - 1);
            let x1 = (x0 + 1).min(cols - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * cols + x0] * (1.0 - wx) + src[y0 * cols + x1] * wx;
            let bottom = src[y1 * cols + x0] * (1.0 - wx) + src[y1 * cols + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

/// Min-max normalization to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

/// Builds the `3 × height × width` network input from a dB spectrogram:
/// transpose to band-major, bilinear resize, min-max normalize, replicate
/// across three channels.
pub fn to_model_input(ms: &MelSpectrogram, height: usize, width: usize) -> Result<Tensor, DspError> {
    if !matches!(ms.scale, MelScale::Decibel { .. }) {
        return Err(DspError::WrongScale("model input expects a decibel-scale spectrogram"));
    }
    let (t, s) = (ms.frames(), ms.bands());
    if t < 2 || s < 2 {
        return Err(DspError::DegenerateInput { frames: t, bands: s });
    }
    let mut band_major = vec![0.0; t * s];
    for ti in 0..t {
        for si in 0..s {
            band_major[si * t + ti] = ms.get(ti, si);
        }
    }
    let mut plane = bilinear_resize(&band_major, s, t, height, width);
    min_max_normalize(&mut plane);
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Ok(Tensor::new(vec![3, height, width], data).expect("shape matches data"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(values: Vec<f64>, frames: usize, bands: usize) -> MelSpectrogram {
        MelSpectrogram::from_rows(values, frames, bands, MelScale::Decibel { top_db: 80.0 }).unwrap()
    }

    #[test]
    fn bilinear_center_of_checkerboard() {
        let out = bilinear_resize(&[0.0, 1.0, 1.0, 0.0], 2, 2, 3, 3);
        assert!((out[4] - 0.5).abs() < 1e-15);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
        assert_eq!(out[1], 0.5);
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let t = to_model_input(&db(vec![-12.0; 20], 4, 5), 7, 9).unwrap();
        assert_eq!(t.shape(), &[3, 7, 9]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_shape_and_range() {
        let vals: Vec<f64> = (0..31 * 64).map(|i| -((i * 37 % 80) as f64)).collect();
        let t = to_model_input(&db(vals, 31, 64), 224, 224).unwrap();
        assert_eq!(t.shape(), &[3, 224, 224]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let plane = 224 * 224;
        assert_eq!(t.data()[..plane], t.data()[plane..2 * plane]);
        assert_eq!(t.data()[..plane], t.data()[2 * plane..]);
    }

    #[test]
    fn frequency_runs_along_height() {
        // Loudest band is the top mel band; after transposition it is the last row.
        let mut vals = vec![-80.0; 3 * 4];
        for ti in 0..3 {
            vals[ti * 4 + 3] = 0.0;
        }
        let t = to_model_input(&db(vals, 3, 4), 4, 3).unwrap();
        let row = |r: usize| &t.data()[r * 3..(r + 1) * 3];
        assert!(row(3).iter().all(|&v| v == 1.0));
        assert!(row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            to_model_input(&db(vec![0.0; 5], 1, 5), 8, 8),
            Err(DspError::DegenerateInput { .. })
        ));
        assert!(matches!(
            to_model_input(&db(vec![0.0; 5], 5, 1), 8, 8),
            Err(DspError::DegenerateInput { .. })
        ));
        let power = MelSpectrogram::from_rows(vec![1.0; 4], 2, 2, MelScale::Power).unwrap();
        assert!(to_model_input(&power, 4, 4).is_err());
    }
}
