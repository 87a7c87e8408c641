//! Reverse-mode gradient tape.
//!
//! Every forward op appends one node holding its output value and the
//! information its backward rule needs. [`Tape::backward`] walks the nodes
//! in exact reverse order of creation, so the recorded order is always a
//! topological order.

use super::dct::dct2d_blocks;
use super::kernels::{conv2d_backward, conv2d_forward, ConvGeometry, ConvSpec};
use super::{shape_err, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean and (biased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
        geom: ConvGeometry,
    },
    Relu6(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: BatchNormMode,
    },
    GlobalAvgPool(Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Sigmoid(Var),
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    Dct2d {
        x: Var,
        inverse: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    GatherTrailing {
        x: Var,
        positions: Vec<usize>,
    },
    BroadcastSpatial(Var),
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
    #[cfg(test)]
    Faulty(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4], TensorError> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(shape_err(op, format!("expected N×C×H×W, got {s:?}"))),
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect
    /// to `v`, if `v` requires grad and the loss depends on it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NumericalFault { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Grouped 2-D cross-correlation. `x`: N×C×H×W, `w`: C'×(C/groups)×kh×kw,
    /// `b`: C'.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var, TensorError> {
        spec.validate()?;
        let [n, c, h, wd] = dims4(self.value(x), "conv2d")?;
        if c != spec.in_channels {
            return Err(shape_err("conv2d", format!("input has {c} channels, spec expects {}", spec.in_channels)));
        }
        if self.value(w).shape() != spec.weight_shape() {
            return Err(shape_err(
                "conv2d",
                format!("weight {:?}, expected {:?}", self.value(w).shape(), spec.weight_shape()),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [spec.out_channels] {
                return Err(shape_err("conv2d", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let (oh, ow) = spec.output_hw(h, wd)?;
        let geom = ConvGeometry {
            batch: n,
            h,
            w: wd,
            oh,
            ow,
        };
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &spec,
            geom,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        let value = Tensor::new(vec![n, spec.out_channels, oh, ow], out)?;
        self.push(value, Op::Conv2d { x, w, b, spec, geom }, rg, "conv2d")
    }

    /// Per-channel convolution: grouped conv with `groups = C`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var, TensorError> {
        if spec.groups != spec.in_channels || spec.in_channels != spec.out_channels {
            return Err(shape_err("depthwise_conv2d", format!("not a depthwise spec: {spec:?}")));
        }
        self.conv2d(x, w, b, spec)
    }

    pub fn relu6(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a.clamp(0.0, 6.0)).collect())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu6(x), rg, "relu6")
    }

    /// Batch normalization over N, H, W per channel.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Result<Var, TensorError> {
        let [n, c, h, w] = dims4(self.value(x), "batchnorm2d")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] || running.mean.len() != c {
            return Err(shape_err("batchnorm2d", format!("affine/running size mismatch for {c} channels")));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let xd = self.value(x).data();
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += xd[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().sum::<f64>();
                    }
                    mean[ch] = s / m;
                    let mut sq = 0.0;
                    for i in 0..n {
                        sq += xd[(i * c + ch) * plane..(i * c + ch + 1) * plane]
                            .iter()
                            .map(|v| (v - mean[ch]) * (v - mean[ch]))
                            .sum::<f64>();
                    }
                    var[ch] = sq / m;
                }
                for ch in 0..c {
                    running.mean[ch] = BN_MOMENTUM * running.mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                    running.var[ch] = BN_MOMENTUM * running.var[ch] + (1.0 - BN_MOMENTUM) * var[ch];
                }
                (mean, var)
            }
            BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for k in base..base + plane {
                    xhat[k] = (xd[k] - mean[ch]) * inv_std[ch];
                    out[k] = g[ch] * xhat[k] + bt[ch];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
            rg,
            "batchnorm2d",
        )
    }

    /// N×C×H×W → N×C spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let [n, c, h, w] = dims4(self.value(x), "global_avg_pool")?;
        let plane = h * w;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![n, c], out)?, Op::GlobalAvgPool(x), rg, "global_avg_pool")
    }

    /// Affine map: `x` N×F, `w` F×G, `b` G → N×G.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, f) = match *self.value(x).shape() {
            [n, f] => (n, f),
            ref s => return Err(shape_err("dense", format!("input must be N×F, got {s:?}"))),
        };
        let g = match *self.value(w).shape() {
            [fw, g] if fw == f => g,
            ref s => return Err(shape_err("dense", format!("weight {s:?} incompatible with F = {f}"))),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [g] {
                return Err(shape_err("dense", format!("bias {:?}, expected [{g}]", self.value(b).shape())));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; n * g];
        for i in 0..n {
            let row = &mut out[i * g..(i + 1) * g];
            if let Some(b) = b {
                row.copy_from_slice(self.value(b).data());
            }
            for k in 0..f {
                let xv = xd[i * f + k];
                for (o, wv) in row.iter_mut().zip(&wd[k * g..(k + 1) * g]) {
                    *o += xv * wv;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(Tensor::new(vec![n, g], out)?, Op::Dense { x, w, b }, rg, "dense")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&z| stable_sigmoid(z)).collect())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg, "sigmoid")
    }

    /// Mean binary cross-entropy on logits:
    /// `max(z, 0) − z·y + log(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let z = self.value(logits).data();
        if z.len() != labels.len() || z.is_empty() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} logits vs {} labels", z.len(), labels.len()),
            ));
        }
        let loss = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            rg,
            "bce_with_logits",
        )
    }

    /// Orthonormal 2-D DCT-II over the trailing two axes.
    pub fn dct2d(&mut self, x: Var) -> Result<Var, TensorError> {
        self.dct2d_impl(x, false)
    }

    /// Inverse of [`dct2d`](Self::dct2d).
    pub fn idct2d(&mut self, x: Var) -> Result<Var, TensorError> {
        self.dct2d_impl(x, true)
    }

    fn dct2d_impl(&mut self, x: Var, inverse: bool) -> Result<Var, TensorError> {
        let out = if inverse {
            super::idct2d_ortho(self.value(x))?
        } else {
            super::dct2d_ortho(self.value(x))?
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::Dct2d { x, inverse }, rg, "dct2d")
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
        )?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        )?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(oshape, out)?, Op::Narrow { x, axis, start }, rg, "narrow")
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self
            .value(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut oshape = first;
        oshape[axis] = total;
        let rg = self.rg(parts);
        self.push(
            Tensor::new(oshape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// Selects `positions` (row-major offsets) from every trailing `h × w`
    /// block: `[..., h, w]` → `[..., K]`.
    pub fn gather_trailing(&mut self, x: Var, positions: &[usize]) -> Result<Var, TensorError> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 {
            return Err(shape_err("gather_trailing", format!("rank {} < 2", shape.len())));
        }
        let block = shape[shape.len() - 2] * shape[shape.len() - 1];
        if positions.iter().any(|&p| p >= block) {
            return Err(shape_err("gather_trailing", format!("position out of block of {block}")));
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(block)
            .flat_map(|b| positions.iter().map(move |&p| b[p]))
            .collect();
        let mut oshape = shape[..shape.len() - 2].to_vec();
        oshape.push(positions.len());
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(oshape, out)?,
            Op::GatherTrailing {
                x,
                positions: positions.to_vec(),
            },
            rg,
            "gather_trailing",
        )
    }

    /// N×C → N×C×h×w by repeating each value over the spatial block.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let (n, c) = match *self.value(x).shape() {
            [n, c] => (n, c),
            ref s => return Err(shape_err("broadcast_spatial", format!("expected N×C, got {s:?}"))),
        };
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, h * w))
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![n, c, h, w], out)?, Op::BroadcastSpatial(x), rg, "broadcast_spatial")
    }

    /// Scalar `Σ x_i · weights_i`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var, TensorError> {
        if self.value(x).numel() != weights.len() {
            return Err(shape_err("weighted_sum", "weight count differs from element count"));
        }
        let s = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
            "weighted_sum",
        )
    }

    /// Identity forward whose backward doubles the gradient.
    #[cfg(test)]
    pub(crate) fn faulty_identity(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).clone();
        let rg = self.rg(&[x]);
        self.push(v, Op::Faulty(x), rg, "faulty")
    }

    /// Back-propagates from a scalar `loss`, replacing any gradients from a
    /// previous call.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lshape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(lshape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op, node.requires_grad) {
                (Some(g), Op::Leaf, true) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad matches value shape")),
                _ => None,
            })
            .collect();
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec, geom } => {
                let want = (
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                let cg = conv2d_backward(self.value(*x).data(), self.value(*w).data(), g, spec, *geom, want);
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *x, gi);
                }
                if let Some(gw) = cg.weight {
                    self.accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu6(x) => {
                let gx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| if a > 0.0 && a < 6.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let [n, c, h, w] = dims4(self.value(*x), "batchnorm2d").expect("checked in forward");
                let plane = h * w;
                let m = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for k in base..base + plane {
                            sum_g[ch] += g[k];
                            sum_gx[ch] += g[k] * xhat[k];
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            let scale = gam[ch] * inv_std[ch];
                            for k in base..base + plane {
                                gx[k] = match mode {
                                    BatchNormMode::Train => {
                                        scale * (g[k] - sum_g[ch] / m - xhat[k] * sum_gx[ch] / m)
                                    }
                                    BatchNormMode::Eval => scale * g[k],
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = dims4(self.value(*x), "global_avg_pool").expect("checked in forward");
                let plane = h * w;
                let gx = g
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / plane as f64, plane))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Dense { x, w, b } => {
                let (n, f) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let gdim = self.value(*w).shape()[1];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; n * f];
                    for i in 0..n {
                        for k in 0..f {
                            gx[i * f + k] = (0..gdim).map(|j| g[i * gdim + j] * wd[k * gdim + j]).sum();
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; f * gdim];
                    for i in 0..n {
                        for k in 0..f {
                            let xv = xd[i * f + k];
                            for j in 0..gdim {
                                gw[k * gdim + j] += xv * g[i * gdim + j];
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; gdim];
                    for row in g.chunks(gdim) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sigmoid(x) => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::BceWithLogits { logits, labels } => {
                let scale = g[0] / labels.len() as f64;
                let gx = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| scale * (stable_sigmoid(z) - y))
                    .collect();
                self.accumulate(grads, *logits, gx);
            }
            Op::Dct2d { x, inverse } => {
                let s = node.value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                // Orthonormal: the adjoint of each direction is the other.
                self.accumulate(grads, *x, dct2d_blocks(g, h, w, !inverse));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.value(*x).shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.requires_grad(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[src..src + len * inner]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += len;
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::GatherTrailing { x, positions } => {
                let s = self.value(*x).shape();
                let block = s[s.len() - 2] * s[s.len() - 1];
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (b, gb) in g.chunks(positions.len()).enumerate() {
                    for (&p, &v) in positions.iter().zip(gb) {
                        gx[b * block + p] += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BroadcastSpatial(x) => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                let gx = g.chunks(plane).map(|p| p.iter().sum()).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.iter().map(|w| w * g[0]).collect());
            }
            #[cfg(test)]
            Op::Faulty(x) => self.accumulate(grads, *x, g.iter().map(|v| 2.0 * v).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0));
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, Some(b), ConvSpec::pointwise(1, 1)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn all_ones_kernel_sums() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, w, None, ConvSpec::new(1, 1, 3, 1, 0)).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(matches!(
            tape.conv2d(x, w, None, ConvSpec::new(1, 1, 3, 1, 0)),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(tape.conv2d(x, w, None, ConvSpec::new(2, 1, 3, 1, 0)).is_err());
        let flat = tape.constant(Tensor::ones(&[4]));
        assert!(tape.conv2d(flat, w, None, ConvSpec::new(1, 1, 3, 1, 0)).is_err());
    }

    #[test]
    fn relu6_values_and_mask() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, 3.0, 8.0]));
        let y = tape.relu6(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 3.0, 6.0]);
        let l = tape.weighted_sum(y, &[1.0, 1.0, 1.0]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 2, 2, 2], |i| ((i * 13) % 7) as f64 * 0.5 + i as f64 * 0.1));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut rs = RunningStats::new(2);
        let y = tape.batchnorm2d(x, g, b, &mut rs, BatchNormMode::Train).unwrap();
        let v = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| v[(n * 2 + ch) * 4..(n * 2 + ch + 1) * 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        assert!(rs.mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn batchnorm_zero_variance_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 1, 2, 2], 3.0));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut rs = RunningStats::new(1);
        let y = tape.batchnorm2d(x, g, b, &mut rs, BatchNormMode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert!((rs.mean[0] - 0.3).abs() < 1e-12);
        assert!((rs.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 2], 5.0));
        let g = tape.constant(Tensor::full(&[1], 2.0));
        let b = tape.constant(Tensor::full(&[1], 1.0));
        let mut rs = RunningStats {
            mean: vec![1.0],
            var: vec![4.0],
        };
        let y = tape.batchnorm2d(x, g, b, &mut rs, BatchNormMode::Eval).unwrap();
        let expect = 2.0 * 4.0 / (4.0 + BN_EPS).sqrt() + 1.0;
        assert!(tape.value(y).data().iter().all(|&v| (v - expect).abs() < 1e-12));
        assert_eq!(rs.mean, vec![1.0]);
    }

    #[test]
    fn global_avg_pool_values_and_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
        let l = tape.weighted_sum(y, &[3.0]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.75; 4]);
    }

    #[test]
    fn dense_matches_hand_product() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = tape.constant(t(&[3, 2], &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.25, -0.25]));
        let y = tape.dense(x, w, Some(b)).unwrap();
        // [1 2 3]·W = [2, 6]; [4 5 6]·W = [6.5, 12]
        assert_eq!(tape.value(y).data(), &[2.25, 5.75, 6.75, 11.75]);

        let eye = tape.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let z = tape.dense(x, eye, None).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }

    #[test]
    fn sigmoid_and_bce_points() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[1, 1], &[0.0]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let l = tape.bce_with_logits(z, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);
        let big = tape.constant(t(&[2, 1], &[800.0, -800.0]));
        let l = tape.bce_with_logits(big, &[1.0, 0.0]).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
    }

    #[test]
    fn narrow_concat_round_trip() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3, 5, 2], |i| i as f64));
        let a = tape.narrow(x, 2, 0, 2).unwrap();
        let b = tape.narrow(x, 2, 2, 2).unwrap();
        let c = tape.narrow(x, 2, 4, 1).unwrap();
        let y = tape.concat(&[a, b, c], 2).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let w: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let l = tape.weighted_sum(y, &w).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), w.as_slice());
    }

    #[test]
    fn gather_and_broadcast() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let g = tape.gather_trailing(x, &[0, 3]).unwrap();
        assert_eq!(tape.value(g).shape(), &[1, 2, 2]);
        assert_eq!(tape.value(g).data(), &[0.0, 3.0, 4.0, 7.0]);
        let v = tape.param(t(&[1, 2], &[1.5, -2.0]));
        let bc = tape.broadcast_spatial(v, 2, 3).unwrap();
        assert_eq!(tape.value(bc).shape(), &[1, 2, 2, 3]);
        let l = tape.weighted_sum(bc, &[1.0; 12]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[6.0, 6.0]);
    }

    #[test]
    fn non_finite_forward_is_fault() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[f64::MAX]));
        let r = tape.add(a, a);
        assert!(matches!(r, Err(TensorError::NumericalFault { op: "add" })));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn gradient_accumulates_over_fanout() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(a, a).unwrap();
        let s = tape.add(sq, a).unwrap();
        let l = tape.weighted_sum(s, &[1.0, 1.0]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1], &[2.0]));
        let c = tape.constant(t(&[1], &[3.0]));
        let p = tape.mul(a, c).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0]);
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(p).is_none());
    }
}
