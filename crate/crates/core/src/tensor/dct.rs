//! Orthonormal 2-D DCT-II over the trailing two axes, its inverse, and
//! zigzag coefficient ordering.

use super::{shape_err, Tensor, TensorError};

/// Row `k` of the orthonormal DCT-II matrix: `α_k cos(π(2n+1)k / 2N)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] =
                alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Applies `Y = A X Bᵀ` (forward) or `Y = Aᵀ X B` (inverse) to every
/// trailing `h × w` block of `data`, where `A`, `B` are the DCT matrices.
pub(crate) fn dct2d_blocks(data: &[f64], h: usize, w: usize, inverse: bool) -> Vec<f64> {
    let a = dct_matrix(h);
    let b = dct_matrix(w);
    let mut out = vec![0.0; data.len()];
    let mut tmp = vec![0.0; h * w];
    for (src, dst) in data.chunks(h * w).zip(out.chunks_mut(h * w)) {
        // tmp = X·Bᵀ (forward) or X·B (inverse), along rows.
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for j in 0..w {
                    let coef = if inverse { b[j * w + c] } else { b[c * w + j] };
                    acc += src[r * w + j] * coef;
                }
                tmp[r * w + c] = acc;
            }
        }
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    let coef = if inverse { a[i * h + r] } else { a[r * h + i] };
                    acc += coef * tmp[i * w + c];
                }
                dst[r * w + c] = acc;
            }
        }
    }
    out
}

fn trailing_hw(t: &Tensor, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [.., h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        s => Err(shape_err(op, format!("need rank >= 2 with non-empty trailing axes, got {s:?}"))),
    }
}

/// Orthonormal 2-D DCT-II of each trailing `H × W` block.
pub fn dct2d_ortho(x: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w) = trailing_hw(x, "dct2d_ortho")?;
    Tensor::new(x.shape().to_vec(), dct2d_blocks(x.data(), h, w, false))
}

/// Inverse of [`dct2d_ortho`].
pub fn idct2d_ortho(x: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w) = trailing_hw(x, "idct2d_ortho")?;
    Tensor::new(x.shape().to_vec(), dct2d_blocks(x.data(), h, w, true))
}

/// Coefficient positions of an `h × w` grid in zigzag order from `(0, 0)`:
/// anti-diagonals of increasing `i + j`, alternating direction as in JPEG.
pub fn zigzag_order(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(h * w);
    if h == 0 || w == 0 {
        return order;
    }
    for d in 0..h + w - 1 {
        let lo = d.saturating_sub(w - 1);
        let hi = d.min(h - 1);
        if d % 2 == 1 {
            order.extend((lo..=hi).map(|i| (i, d - i)));
        } else {
            order.extend((lo..=hi).rev().map(|i| (i, d - i)));
        }
    }
    order
}
