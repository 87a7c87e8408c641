use super::config::{InvertedResidualSpec, MfcmNetConfig};
use super::mfca::{mfca_apply, mfca_attention};
use super::params::{BlockParams, BnState, ConvBn, NetParams};
use super::ModelError;
use crate::tensor::tape::RunningStats;
use crate::tensor::{BatchNormMode, ConvSpec, Tape, Tensor, Var};

/// How the MFCA stage is treated in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Learned attention.
    #[default]
    Learned,
    /// Features multiplied by an all-ones map (ablation).
    ForceOnes,
    /// MFCA skipped: the backbone-only network.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub bn_mode: BatchNormMode,
    pub attention: AttentionMode,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            bn_mode: BatchNormMode::Train,
            attention: AttentionMode::Learned,
        }
    }

    pub fn eval() -> Self {
        Self {
            bn_mode: BatchNormMode::Eval,
            attention: AttentionMode::Learned,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// N×1 logits.
    pub logits: Var,
    /// N×C×H×W attention map, when MFCA ran with learned attention.
    pub attention: Option<Var>,
}

fn conv_bn(
    tape: &mut Tape,
    x: Var,
    p: &ConvBn<Var>,
    spec: ConvSpec,
    bn: &mut RunningStats,
    mode: BatchNormMode,
    activate: bool,
) -> Result<Var, ModelError> {
    let y = tape.conv2d(x, p.weight, None, spec)?;
    let y = tape.batchnorm2d(y, p.gamma, p.beta, bn, mode)?;
    Ok(if activate { tape.relu6(y)? } else { y })
}

/// Intermediate handles of one block, for shape probes.
#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    pub output: Var,
    /// The expanded activation (the input itself when there is no expand).
    pub hidden: Var,
}

/// expand (1×1 → BN → ReLU6) → depthwise 3×3 (→ BN → ReLU6) → project
/// (1×1 → BN, linear), plus the input when the skip is active.
pub fn inverted_residual_forward(
    tape: &mut Tape,
    x: Var,
    spec: &InvertedResidualSpec,
    p: &BlockParams<Var>,
    bn: &mut [RunningStats],
    mode: BatchNormMode,
) -> Result<BlockOutput, ModelError> {
    let c = tape.value(x).shape().get(1).copied().unwrap_or(0);
    if c != spec.in_channels {
        return Err(ModelError::Tensor(crate::tensor::shape_err(
            "inverted_residual",
            format!("input has {c} channels, block expects {}", spec.in_channels),
        )));
    }
    let mut stats = bn.iter_mut();
    let mut next = || {
        stats
            .next()
            .ok_or_else(|| ModelError::InvalidConfig("missing batch-norm state for block".into()))
    };
    let hidden = match (&p.expand, spec.has_expand()) {
        (Some(e), true) => conv_bn(tape, x, e, spec.expand_conv(), next()?, mode, true)?,
        (None, false) => x,
        _ => return Err(ModelError::InvalidConfig("expand parameters disagree with spec".into())),
    };
    let d = conv_bn(tape, hidden, &p.depthwise, spec.depthwise_conv(), next()?, mode, true)?;
    let mut y = conv_bn(tape, d, &p.project, spec.project_conv(), next()?, mode, false)?;
    if spec.has_skip() {
        y = tape.add(y, x)?;
    }
    Ok(BlockOutput { output: y, hidden })
}

fn bn_layers(spec: &InvertedResidualSpec) -> usize {
    2 + usize::from(spec.has_expand())
}

/// Full network: stem → blocks (MFCA after `cfg.mfca_after`) → global
/// average pooling → head.
pub fn forward(
    tape: &mut Tape,
    cfg: &MfcmNetConfig,
    p: &NetParams<Var>,
    bn: &mut BnState,
    input: Var,
    opts: ForwardOptions,
) -> Result<ForwardOutput, ModelError> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 4 || shape[1..] != cfg.input_shape {
        return Err(ModelError::Tensor(crate::tensor::shape_err(
            "forward",
            format!("input {shape:?} does not match N×{:?}", cfg.input_shape),
        )));
    }
    let mode = opts.bn_mode;
    let layers = &mut bn.layers[..];
    let (stem_bn, mut rest) = layers
        .split_first_mut()
        .ok_or_else(|| ModelError::InvalidConfig("empty batch-norm state".into()))?;
    let mut x = conv_bn(tape, input, &p.stem, cfg.stem_conv(), &mut stem_bn.1, mode, true)?;
    let mut attention = None;

    let mut run_mfca = |tape: &mut Tape, x: Var| -> Result<Var, ModelError> {
        let (Some(mcfg), Some(mp)) = (&cfg.mfca, &p.mfca) else {
            return Ok(x);
        };
        match opts.attention {
            AttentionMode::Bypass => Ok(x),
            AttentionMode::ForceOnes => {
                let ones = tape.constant(Tensor::ones(tape.value(x).shape()));
                mfca_apply(tape, x, ones)
            }
            AttentionMode::Learned => {
                let a = mfca_attention(tape, x, mp, mcfg)?;
                attention = Some(a.map);
                mfca_apply(tape, x, a.map)
            }
        }
    };

    if cfg.mfca_after == 0 {
        x = run_mfca(tape, x)?;
    }
    for (i, (spec, bp)) in cfg.blocks.iter().zip(&p.blocks).enumerate() {
        let n = bn_layers(spec);
        if rest.len() < n {
            return Err(ModelError::InvalidConfig("batch-norm state shorter than the network".into()));
        }
        let (mine, tail) = std::mem::take(&mut rest).split_at_mut(n);
        rest = tail;
        let mut stats: Vec<RunningStats> = mine.iter().map(|(_, s)| s.clone()).collect();
        x = inverted_residual_forward(tape, x, spec, bp, &mut stats, mode)?.output;
        for ((_, dst), src) in mine.iter_mut().zip(stats) {
            *dst = src;
        }
        if i + 1 == cfg.mfca_after {
            x = run_mfca(tape, x)?;
        }
    }
    let pooled = tape.global_avg_pool(x)?;
    let feat = match &p.head.hidden {
        Some((w, b)) => {
            let h = tape.dense(pooled, *w, Some(*b))?;
            tape.relu6(h)?
        }
        None => pooled,
    };
    let logits = tape.dense(feat, p.head.weight, Some(p.head.bias))?;
    Ok(ForwardOutput { logits, attention })
}

/// A configured network with its parameters and batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MfcmNet {
    pub config: MfcmNetConfig,
    pub params: NetParams<Tensor>,
    pub bn: BnState,
}

impl MfcmNet {
    pub fn new(config: MfcmNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = NetParams::init(&config, seed);
        let bn = BnState::init(&config);
        Ok(Self { config, params, bn })
    }

    /// Eval-mode logits for an N×3×H×W batch.
    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>, ModelError> {
        self.logits_with(input, AttentionMode::Learned)
    }

    pub fn logits_with(&self, input: &Tensor, attention: AttentionMode) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let mut bn = self.bn.clone();
        let out = forward(
            &mut tape,
            &self.config,
            &p,
            &mut bn,
            x,
            ForwardOptions {
                bn_mode: BatchNormMode::Eval,
                attention,
            },
        )?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Eval-mode fake-class probabilities.
    pub fn scores(&self, input: &Tensor) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .logits(input)?
            .into_iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect())
    }
}
