//! Multi-frequency channel attention.
//!
//! The feature map is cut into contiguous bands along its frequency
//! (height) axis. Each band is summarized per channel by its lowest-order
//! 2-D DCT coefficients in zigzag order; a bottleneck shared by all bands
//! turns those statistics into per-channel weights in (0, 1), which are
//! broadcast over the band. The band maps stacked back along frequency form
//! the attention tensor that multiplies the features elementwise.

use super::config::{MfcaConfig, MfcaVariant};
use super::params::MfcaParams;
use super::ModelError;
use crate::tensor::{zigzag_order, Tape, Tensor, Var};

/// Rows per band: with `h = q·bands + r`, the first `r` bands get `q + 1`.
pub fn band_rows(h: usize, bands: usize) -> Result<Vec<usize>, ModelError> {
    if bands == 0 || h < bands {
        return Err(ModelError::BandTooThin { height: h, bands });
    }
    let (q, r) = (h / bands, h % bands);
    Ok((0..bands).map(|i| q + usize::from(i < r)).collect())
}

/// Contiguous partition of an N×C×H×W map along H, low band first.
pub fn split_bands(tape: &mut Tape, features: Var, bands: usize) -> Result<Vec<Var>, ModelError> {
    let h = match tape.value(features).shape() {
        [_, _, h, _] => *h,
        s => {
            return Err(ModelError::Tensor(crate::tensor::shape_err(
                "split_bands",
                format!("expected N×C×H×W, got {s:?}"),
            )))
        }
    };
    let mut start = 0;
    let mut out = Vec::with_capacity(bands);
    for rows in band_rows(h, bands)? {
        out.push(tape.narrow(features, 2, start, rows)?);
        start += rows;
    }
    Ok(out)
}

/// Per sample and channel: the first `min(K, h·w)` zigzag coefficients of
/// the orthonormal 2-D DCT of the `h × w` band map. N×C×h×w → N×C×K'.
pub fn mfca_statistics(tape: &mut Tape, band: Var, k: usize) -> Result<Var, ModelError> {
    let s = tape.value(band).shape().to_vec();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let positions: Vec<usize> = zigzag_order(h, w)
        .into_iter()
        .take(k)
        .map(|(i, j)| i * w + j)
        .collect();
    let spectrum = tape.dct2d(band)?;
    Ok(tape.gather_trailing(spectrum, &positions)?)
}

/// Output of [`mfca_attention`].
#[derive(Debug, Clone)]
pub struct Attention {
    /// N×C×H×W attention map.
    pub map: Var,
    /// Per-band N×C channel weights (the sigmoid outputs before
    /// broadcasting). For the inverse-DCT variant these are the pre-fusion
    /// weights.
    pub band_weights: Vec<Var>,
}

/// Builds the attention map for `features` (N×C×H×W).
pub fn mfca_attention(
    tape: &mut Tape,
    features: Var,
    params: &MfcaParams<Var>,
    cfg: &MfcaConfig,
) -> Result<Attention, ModelError> {
    let [n, c, _, w] = match *tape.value(features).shape() {
        [n, c, h, w] => [n, c, h, w],
        ref s => {
            return Err(ModelError::Tensor(crate::tensor::shape_err(
                "mfca_attention",
                format!("expected N×C×H×W, got {s:?}"),
            )))
        }
    };
    let k = cfg.dct_coeffs_per_band;
    let bands = split_bands(tape, features, cfg.num_bands)?;
    let mut maps = Vec::with_capacity(bands.len());
    let mut band_weights = Vec::with_capacity(bands.len());
    for band in bands {
        let h = tape.value(band).shape()[2];
        let mut stats = mfca_statistics(tape, band, k)?;
        let got = tape.value(stats).shape()[2];
        if got < k {
            // Bands with fewer than K coefficients are zero-padded so the
            // shared bottleneck sees a fixed width.
            let pad = tape.constant(Tensor::zeros(&[n, c, k - got]));
            stats = tape.concat(&[stats, pad], 2)?;
        }
        let flat = tape.reshape(stats, &[n, c * k])?;
        let hidden = tape.dense(flat, params.squeeze_weight, Some(params.squeeze_bias))?;
        let hidden = tape.relu6(hidden)?;
        let logits = tape.dense(hidden, params.excite_weight, Some(params.excite_bias))?;
        let weights = tape.sigmoid(logits)?;
        band_weights.push(weights);
        let map = match cfg.variant {
            MfcaVariant::Excitation => tape.broadcast_spatial(weights, h, w)?,
            MfcaVariant::InverseDct => {
                let spread = tape.broadcast_spatial(logits, h, w)?;
                let spectrum = tape.dct2d(band)?;
                let mut mask = Tensor::zeros(&[n, c, h, w]);
                let keep: Vec<usize> = zigzag_order(h, w).into_iter().take(k).map(|(i, j)| i * w + j).collect();
                for block in mask.data_mut().chunks_mut(h * w) {
                    for &p in &keep {
                        block[p] = 1.0;
                    }
                }
                let mask = tape.constant(mask);
                let low = tape.mul(spectrum, mask)?;
                let low = tape.idct2d(low)?;
                let fused = tape.add(spread, low)?;
                tape.sigmoid(fused)?
            }
        };
        maps.push(map);
    }
    let map = tape.concat(&maps, 2)?;
    Ok(Attention { map, band_weights })
}

/// Elementwise reweighting of the features by the attention map.
pub fn mfca_apply(tape: &mut Tape, features: Var, attention: Var) -> Result<Var, ModelError> {
    Ok(tape.mul(features, attention)?)
}
