//! MFCMNet: a MobileNetV2-style backbone with multi-frequency channel
//! attention inserted between stages.

pub mod checkpoint;
pub mod config;
pub mod mfca;
pub mod net;
pub mod params;

use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use config::{InvertedResidualSpec, MfcaConfig, MfcaVariant, MfcmNetConfig};
pub use mfca::{band_rows, mfca_apply, mfca_attention, mfca_statistics, split_bands, Attention};
pub use net::{forward, inverted_residual_forward, AttentionMode, ForwardOptions, ForwardOutput, MfcmNet};
pub use params::{BnState, NetParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("feature map height {height} cannot be split into {bands} bands")]
    BandTooThin { height: usize, bands: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<ModelError> for TensorError {
    /// Lets model forwards run inside tensor-level utilities such as the
    /// gradient checker. Configuration errors surface as shape mismatches.
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t,
            other => TensorError::ShapeMismatch {
                op: "model",
                detail: other.to_string(),
            },
        }
    }
}

/// Gradient check of the mean binary cross-entropy against `labels` with
/// respect to every network parameter.
pub fn network_grad_check(
    net: &MfcmNet,
    input: &crate::tensor::Tensor,
    labels: &[f64],
    bn_mode: crate::tensor::BatchNormMode,
    eps: f64,
) -> Result<crate::tensor::GradCheckReport, TensorError> {
    let mut flat = Vec::new();
    net.params.visit(|_, t| flat.push(t.clone()));
    let opts = ForwardOptions {
        bn_mode,
        attention: AttentionMode::Learned,
    };
    crate::tensor::grad_check(&flat, eps, |tape, vars| {
        let mut it = vars.iter().copied();
        let p = net.params.map(|_, _| it.next().expect("one var per parameter"));
        let x = tape.constant(input.clone());
        let mut bn = net.bn.clone();
        let out = forward(tape, &net.config, &p, &mut bn, x, opts)?;
        Ok(tape.bce_with_logits(out.logits, labels)?)
    })
}

/// Moves BN affine parameters and running statistics away from their
/// identity initialization so eval-mode checks exercise every term.
pub fn perturb_batch_norm(net: &mut MfcmNet, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    net.params.visit_mut(|name, t| {
        if name.ends_with("bn.gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with("bn.beta") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    });
    for (_, s) in &mut net.bn.layers {
        s.mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        s.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::GRAD_EPS;
    use crate::tensor::{BatchNormMode, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn micro(seed: u64) -> MfcmNet {
        let mut net = MfcmNet::new(MfcmNetConfig::micro(12, 12), seed).unwrap();
        perturb_batch_norm(&mut net, seed + 1);
        net
    }

    fn input(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 3, 12, 12], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn micro_network_gradients_eval_mode() {
        let net = micro(1337);
        let r = network_grad_check(&net, &input(1, 7), &[1.0], BatchNormMode::Eval, GRAD_EPS).unwrap();
        assert_eq!(r.checked, net.params.num_scalars());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
