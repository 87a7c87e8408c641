//! Central-difference gradient checking.
//!
//! The numerical side re-evaluates the forward function on a fresh tape
//! for every perturbed coordinate and never touches a backward rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{BatchNormMode, RunningStats, Tape, Var};
use super::{ConvSpec, Tensor, TensorError};

/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of the scalar `f(params)` against
/// `(f(θ + ε) − f(θ − ε)) / 2ε` for every element of every parameter.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |ps: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.numel() {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Default perturbation.
pub const GRAD_EPS: f64 = 1e-5;

/// One named entry of the per-op suite.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub threshold: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.threshold
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[lo, hi)` at least `margin` away from every kink.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            break v;
        }
    })
}

fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Runs the gradient check of every differentiable tape op on small random
/// float64 problems.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let eps = GRAD_EPS;

    let mut push = |name, report, threshold| {
        out.push(OpCheck {
            name,
            report,
            threshold,
        })
    };

    // conv2d: 1×2×5×5, 3×3 kernel, padding 1, with bias.
    let spec = ConvSpec::new(2, 3, 3, 1, 1);
    let proj = projection(&mut rng, 3 * 25);
    let params = [
        uniform(&mut rng, &[1, 2, 5, 5], -1.0, 1.0),
        uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
        uniform(&mut rng, &[3], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
        t.weighted_sum(y, &proj)
    })?;
    push("conv2d", r, 1e-6);

    // Strided grouped conv.
    let spec = ConvSpec {
        groups: 2,
        ..ConvSpec::new(4, 6, 3, 2, 1)
    };
    let proj = projection(&mut rng, 2 * 6 * 3 * 3);
    let params = [
        uniform(&mut rng, &[2, 4, 5, 6], -1.0, 1.0),
        uniform(&mut rng, &[6, 2, 3, 3], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.conv2d(v[0], v[1], None, spec)?;
        t.weighted_sum(y, &proj)
    })?;
    push("conv2d_grouped_strided", r, 1e-6);

    let spec = ConvSpec::depthwise(3, 3, 2, 1);
    let proj = projection(&mut rng, 3 * 9);
    let params = [
        uniform(&mut rng, &[1, 3, 6, 5], -1.0, 1.0),
        uniform(&mut rng, &[3, 1, 3, 3], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.depthwise_conv2d(v[0], v[1], None, spec)?;
        t.weighted_sum(y, &proj)
    })?;
    push("depthwise_conv2d", r, 1e-6);

    let proj = projection(&mut rng, 24);
    let params = [away_from(&mut rng, &[2, 3, 2, 2], -2.0, 8.0, &[0.0, 6.0], 1e-3)];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.relu6(v[0])?;
        t.weighted_sum(y, &proj)
    })?;
    push("relu6", r, 1e-6);

    for (name, mode) in [
        ("batchnorm2d_train", BatchNormMode::Train),
        ("batchnorm2d_eval", BatchNormMode::Eval),
    ] {
        let proj = projection(&mut rng, 3 * 2 * 3 * 2);
        let running = RunningStats {
            mean: vec![0.2, -0.1],
            var: vec![0.8, 1.3],
        };
        let params = [
            uniform(&mut rng, &[3, 2, 3, 2], -2.0, 2.0),
            uniform(&mut rng, &[2], 0.5, 1.5),
            uniform(&mut rng, &[2], -0.5, 0.5),
        ];
        let r = grad_check(&params, eps, |t, v| {
            let mut rs = running.clone();
            let y = t.batchnorm2d(v[0], v[1], v[2], &mut rs, mode)?;
            t.weighted_sum(y, &proj)
        })?;
        push(name, r, 1e-5);
    }

    let proj = projection(&mut rng, 6);
    let params = [uniform(&mut rng, &[2, 3, 3, 4], -1.0, 1.0)];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.global_avg_pool(v[0])?;
        t.weighted_sum(y, &proj)
    })?;
    push("global_avg_pool", r, 1e-6);

    let proj = projection(&mut rng, 3 * 4);
    let params = [
        uniform(&mut rng, &[3, 5], -1.0, 1.0),
        uniform(&mut rng, &[5, 4], -1.0, 1.0),
        uniform(&mut rng, &[4], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.dense(v[0], v[1], Some(v[2]))?;
        t.weighted_sum(y, &proj)
    })?;
    push("dense", r, 1e-6);

    let proj = projection(&mut rng, 10);
    let params = [uniform(&mut rng, &[2, 5], -4.0, 4.0)];
    let r = grad_check(&params, eps, |t, v| {
        let y = t.sigmoid(v[0])?;
        t.weighted_sum(y, &proj)
    })?;
    push("sigmoid", r, 1e-6);

    let labels: Vec<f64> = (0..4).map(|i| (i % 2) as f64).collect();
    let params = [
        uniform(&mut rng, &[4, 3], -1.0, 1.0),
        uniform(&mut rng, &[3, 1], -1.0, 1.0),
        uniform(&mut rng, &[1], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let z = t.dense(v[0], v[1], Some(v[2]))?;
        t.bce_with_logits(z, &labels)
    })?;
    push("bce_with_logits(dense)", r, 1e-6);

    for (name, inverse) in [("dct2d_ortho", false), ("idct2d_ortho", true)] {
        let proj = projection(&mut rng, 2 * 4 * 3);
        let params = [uniform(&mut rng, &[2, 4, 3], -1.0, 1.0)];
        let r = grad_check(&params, eps, |t, v| {
            let y = if inverse { t.idct2d(v[0])? } else { t.dct2d(v[0])? };
            t.weighted_sum(y, &proj)
        })?;
        push(name, r, 1e-6);
    }

    let proj = projection(&mut rng, 12);
    let params = [
        uniform(&mut rng, &[3, 4], -1.0, 1.0),
        uniform(&mut rng, &[3, 4], -1.0, 1.0),
    ];
    let r = grad_check(&params, eps, |t, v| {
        let p = t.mul(v[0], v[1])?;
        let s = t.add(p, v[0])?;
        t.weighted_sum(s, &proj)
    })?;
    push("add_mul", r, 1e-6);

    let proj = projection(&mut rng, 2 * 2 * 5 * 3);
    let params = [uniform(&mut rng, &[2, 2, 5, 3], -1.0, 1.0)];
    let r = grad_check(&params, eps, |t, v| {
        let a = t.narrow(v[0], 2, 0, 2)?;
        let b = t.narrow(v[0], 2, 2, 3)?;
        let y = t.concat(&[b, a], 2)?;
        t.weighted_sum(y, &proj)
    })?;
    push("narrow_concat", r, 1e-6);

    let proj = projection(&mut rng, 2 * 3 * 4 * 5);
    let params = [uniform(&mut rng, &[2, 3, 3, 2], -1.0, 1.0)];
    let r = grad_check(&params, eps, |t, v| {
        let g = t.gather_trailing(v[0], &[0, 1, 2, 5])?;
        let r = t.reshape(g, &[2, 12])?;
        let n = t.narrow(r, 1, 0, 3)?;
        let b = t.broadcast_spatial(n, 4, 5)?;
        t.weighted_sum(b, &proj)
    })?;
    push("gather_reshape_broadcast", r, 1e-6);

    Ok(out)
}
