//! Direct convolution kernels (cross-correlation, no kernel flip).
//!
//! Samples in a batch are processed in parallel. Reductions across the
//! batch (weight and bias gradients) are summed in sample order so the
//! result does not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{shape_err, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            groups: channels,
            ..Self::new(channels, channels, kernel, stride, padding)
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
            || self.stride == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
        {
            return Err(shape_err("conv2d", format!("invalid spec {self:?}")));
        }
        Ok(())
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let out = |len: usize, k: usize| -> Option<usize> {
            let padded = len + 2 * self.padding;
            (padded >= k).then(|| (padded - k) / self.stride + 1)
        };
        match (out(h, self.kernel.0), out(w, self.kernel.1)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(shape_err(
                "conv2d",
                format!("kernel {:?} larger than padded input {h}×{w}", self.kernel),
            )),
        }
    }
}

/// Dimensions of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output positions `o` in `[start, end)` with `o·stride + k − pad ∈ [0, len)`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let start = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if len + pad < k + 1 {
        return (0, 0);
    }
    let end = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (start.min(end), end)
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    spec: &ConvSpec,
    g: ConvGeometry,
) -> Vec<f64> {
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = c_in / spec.groups;
    let cout_g = c_out / spec.groups;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * c_out * out_plane];
    out.par_chunks_mut(c_out * out_plane)
        .zip(x.par_chunks(c_in * in_plane))
        .for_each(|(out_n, x_n)| {
            for oc in 0..c_out {
                let grp = oc / cout_g;
                let o = &mut out_n[oc * out_plane..(oc + 1) * out_plane];
                if let Some(b) = bias {
                    o.fill(b[oc]);
                }
                for icl in 0..cin_g {
                    let ic = grp * cin_g + icl;
                    let xp = &x_n[ic * in_plane..(ic + 1) * in_plane];
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ky, p, s, g.h, g.oh);
                        for kx in 0..kw {
                            let wv = weight[((oc * cin_g + icl) * kh + ky) * kw + kx];
                            let (ox0, ox1) = valid_range(kx, p, s, g.w, g.ow);
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - p;
                                let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                                let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                                if s == 1 {
                                    let off = ox0 + kx - p;
                                    for (ov, xv) in orow[ox0..ox1].iter_mut().zip(&xrow[off..]) {
                                        *ov += wv * xv;
                                    }
                                } else {
                                    for ox in ox0..ox1 {
                                        orow[ox] += wv * xrow[ox * s + kx - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
    spec: &ConvSpec,
    g: ConvGeometry,
    want: (bool, bool, bool),
) -> ConvGrads {
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = c_in / spec.groups;
    let cout_g = c_out / spec.groups;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let (want_in, want_w, want_b) = want;

    let input = want_in.then(|| {
        let mut gin = vec![0.0; g.batch * c_in * in_plane];
        gin.par_chunks_mut(c_in * in_plane)
            .zip(gout.par_chunks(c_out * out_plane))
            .for_each(|(gin_n, go_n)| {
                for oc in 0..c_out {
                    let grp = oc / cout_g;
                    let go = &go_n[oc * out_plane..(oc + 1) * out_plane];
                    for icl in 0..cin_g {
                        let ic = grp * cin_g + icl;
                        let gp = &mut gin_n[ic * in_plane..(ic + 1) * in_plane];
                        for ky in 0..kh {
                            let (oy0, oy1) = valid_range(ky, p, s, g.h, g.oh);
                            for kx in 0..kw {
                                let wv = weight[((oc * cin_g + icl) * kh + ky) * kw + kx];
                                let (ox0, ox1) = valid_range(kx, p, s, g.w, g.ow);
                                for oy in oy0..oy1 {
                                    let iy = oy * s + ky - p;
                                    let grow = &mut gp[iy * g.w..(iy + 1) * g.w];
                                    let orow = &go[oy * g.ow..(oy + 1) * g.ow];
                                    for ox in ox0..ox1 {
                                        grow[ox * s + kx - p] += wv * orow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        gin
    });

    let weight_grad = want_w.then(|| {
        let per_sample: Vec<Vec<f64>> = x
            .par_chunks(c_in * in_plane)
            .zip(gout.par_chunks(c_out * out_plane))
            .map(|(x_n, go_n)| {
                let mut gw = vec![0.0; weight.len()];
                for oc in 0..c_out {
                    let grp = oc / cout_g;
                    let go = &go_n[oc * out_plane..(oc + 1) * out_plane];
                    for icl in 0..cin_g {
                        let ic = grp * cin_g + icl;
                        let xp = &x_n[ic * in_plane..(ic + 1) * in_plane];
                        for ky in 0..kh {
                            let (oy0, oy1) = valid_range(ky, p, s, g.h, g.oh);
                            for kx in 0..kw {
                                let (ox0, ox1) = valid_range(kx, p, s, g.w, g.ow);
                                let mut acc = 0.0;
                                for oy in oy0..oy1 {
                                    let iy = oy * s + ky - p;
                                    let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                                    let orow = &go[oy * g.ow..(oy + 1) * g.ow];
                                    for ox in ox0..ox1 {
                                        acc += orow[ox] * xrow[ox * s + kx - p];
                                    }
                                }
                                gw[((oc * cin_g + icl) * kh + ky) * kw + kx] += acc;
                            }
                        }
                    }
                }
                gw
            })
            .collect();
        sum_in_order(per_sample, weight.len())
    });

    let bias = want_b.then(|| {
        let mut gb = vec![0.0; c_out];
        for go_n in gout.chunks(c_out * out_plane) {
            for (oc, b) in gb.iter_mut().enumerate() {
                *b += go_n[oc * out_plane..(oc + 1) * out_plane].iter().sum::<f64>();
            }
        }
        gb
    });

    ConvGrads {
        input,
        weight: weight_grad,
        bias,
    }
}

fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward zero-padded loop, no range precomputation.
    fn reference(x: &[f64], w: &[f64], spec: &ConvSpec, g: ConvGeometry) -> Vec<f64> {
        let cin_g = spec.in_channels / spec.groups;
        let cout_g = spec.out_channels / spec.groups;
        let (kh, kw) = spec.kernel;
        let mut out = vec![0.0; g.batch * spec.out_channels * g.oh * g.ow];
        for n in 0..g.batch {
            for oc in 0..spec.out_channels {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for icl in 0..cin_g {
                            let ic = (oc / cout_g) * cin_g + icl;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += w[((oc * cin_g + icl) * kh + ky) * kw + kx]
                                        * x[((n * spec.in_channels + ic) * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        out[((n * spec.out_channels + oc) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_reference_over_geometries() {
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(c_in, c_out, k, s, p, groups, h, w) in &[
            (1, 1, 3, 1, 0, 1, 5, 5),
            (2, 4, 3, 2, 1, 2, 7, 6),
            (3, 3, 3, 2, 1, 3, 8, 8),
            (4, 2, 1, 1, 0, 1, 3, 4),
            (2, 2, 3, 3, 2, 1, 5, 4),
            (3, 6, 2, 1, 1, 3, 4, 3),
        ] {
            let spec = ConvSpec {
                in_channels: c_in,
                out_channels: c_out,
                kernel: (k, k),
                stride: s,
                padding: p,
                groups,
            };
            let (oh, ow) = spec.output_hw(h, w).unwrap();
            let g = ConvGeometry { batch: 2, h, w, oh, ow };
            let x: Vec<f64> = (0..2 * c_in * h * w).map(|_| next()).collect();
            let wt: Vec<f64> = (0..spec.weight_shape().iter().product::<usize>()).map(|_| next()).collect();
            let fast = conv2d_forward(&x, &wt, None, &spec, g);
            let slow = reference(&x, &wt, &spec, g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn output_shape_formula() {
        let spec = ConvSpec::new(3, 8, 3, 2, 1);
        assert_eq!(spec.output_hw(96, 96).unwrap(), (48, 48));
        assert_eq!(spec.output_hw(7, 5).unwrap(), (4, 3));
        assert!(ConvSpec::new(1, 1, 5, 1, 0).output_hw(3, 3).is_err());
    }

    #[test]
    fn invalid_groups() {
        let spec = ConvSpec {
            groups: 3,
            ..ConvSpec::new(4, 4, 3, 1, 1)
        };
        assert!(spec.validate().is_err());
    }
}
