//! Parameter containers, generic over the stored value so the same layout
//! holds tensors (storage), tape handles (a bound forward pass) or
//! optimizer moments.
//!
//! Traversal order is fixed: stem, blocks in order (expand, depthwise,
//! project; each conv weight, then BN gamma, beta), MFCA (squeeze weight,
//! squeeze bias, excite weight, excite bias), head (hidden weight, hidden
//! bias, output weight, output bias). Checkpoints and optimizers rely on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::MfcmNetConfig;
use crate::tensor::tape::RunningStats;
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub weight: T,
    pub gamma: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfcaParams<T> {
    pub squeeze_weight: T,
    pub squeeze_bias: T,
    pub excite_weight: T,
    pub excite_bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub hidden: Option<(T, T)>,
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub stem: ConvBn<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub mfca: Option<MfcaParams<T>>,
    pub head: HeadParams<T>,
}

fn visit_conv_bn<T>(prefix: &str, p: &ConvBn<T>, f: &mut impl FnMut(String, &T)) {
    f(format!("{prefix}.conv.weight"), &p.weight);
    f(format!("{prefix}.bn.gamma"), &p.gamma);
    f(format!("{prefix}.bn.beta"), &p.beta);
}

fn visit_conv_bn_mut<T>(prefix: &str, p: &mut ConvBn<T>, f: &mut impl FnMut(String, &mut T)) {
    f(format!("{prefix}.conv.weight"), &mut p.weight);
    f(format!("{prefix}.bn.gamma"), &mut p.gamma);
    f(format!("{prefix}.bn.beta"), &mut p.beta);
}

fn map_conv_bn<T, U>(prefix: &str, p: &ConvBn<T>, f: &mut impl FnMut(&str, &T) -> U) -> ConvBn<U> {
    ConvBn {
        weight: f(&format!("{prefix}.conv.weight"), &p.weight),
        gamma: f(&format!("{prefix}.bn.gamma"), &p.gamma),
        beta: f(&format!("{prefix}.bn.beta"), &p.beta),
    }
}

impl<T> NetParams<T> {
    /// Calls `f(name, value)` for every parameter in traversal order.
    pub fn visit(&self, mut f: impl FnMut(String, &T)) {
        visit_conv_bn("stem", &self.stem, &mut f);
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(e) = &b.expand {
                visit_conv_bn(&format!("blocks.{i}.expand"), e, &mut f);
            }
            visit_conv_bn(&format!("blocks.{i}.depthwise"), &b.depthwise, &mut f);
            visit_conv_bn(&format!("blocks.{i}.project"), &b.project, &mut f);
        }
        if let Some(m) = &self.mfca {
            f("mfca.squeeze.weight".into(), &m.squeeze_weight);
            f("mfca.squeeze.bias".into(), &m.squeeze_bias);
            f("mfca.excite.weight".into(), &m.excite_weight);
            f("mfca.excite.bias".into(), &m.excite_bias);
        }
        if let Some((w, b)) = &self.head.hidden {
            f("head.hidden.weight".into(), w);
            f("head.hidden.bias".into(), b);
        }
        f("head.weight".into(), &self.head.weight);
        f("head.bias".into(), &self.head.bias);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut T)) {
        visit_conv_bn_mut("stem", &mut self.stem, &mut f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let Some(e) = &mut b.expand {
                visit_conv_bn_mut(&format!("blocks.{i}.expand"), e, &mut f);
            }
            visit_conv_bn_mut(&format!("blocks.{i}.depthwise"), &mut b.depthwise, &mut f);
            visit_conv_bn_mut(&format!("blocks.{i}.project"), &mut b.project, &mut f);
        }
        if let Some(m) = &mut self.mfca {
            f("mfca.squeeze.weight".into(), &mut m.squeeze_weight);
            f("mfca.squeeze.bias".into(), &mut m.squeeze_bias);
            f("mfca.excite.weight".into(), &mut m.excite_weight);
            f("mfca.excite.bias".into(), &mut m.excite_bias);
        }
        if let Some((w, b)) = &mut self.head.hidden {
            f("head.hidden.weight".into(), w);
            f("head.hidden.bias".into(), b);
        }
        f("head.weight".into(), &mut self.head.weight);
        f("head.bias".into(), &mut self.head.bias);
    }

    /// Structure-preserving map, called in traversal order.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> NetParams<U> {
        NetParams {
            stem: map_conv_bn("stem", &self.stem, &mut f),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| BlockParams {
                    expand: b.expand.as_ref().map(|e| map_conv_bn(&format!("blocks.{i}.expand"), e, &mut f)),
                    depthwise: map_conv_bn(&format!("blocks.{i}.depthwise"), &b.depthwise, &mut f),
                    project: map_conv_bn(&format!("blocks.{i}.project"), &b.project, &mut f),
                })
                .collect(),
            mfca: self.mfca.as_ref().map(|m| MfcaParams {
                squeeze_weight: f("mfca.squeeze.weight", &m.squeeze_weight),
                squeeze_bias: f("mfca.squeeze.bias", &m.squeeze_bias),
                excite_weight: f("mfca.excite.weight", &m.excite_weight),
                excite_bias: f("mfca.excite.bias", &m.excite_bias),
            }),
            head: HeadParams {
                hidden: self
                    .head
                    .hidden
                    .as_ref()
                    .map(|(w, b)| (f("head.hidden.weight", w), f("head.hidden.bias", b))),
                weight: f("head.weight", &self.head.weight),
                bias: f("head.bias", &self.head.bias),
            },
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _| out.push(n));
        out
    }
}

impl NetParams<Tensor> {
    /// Registers every tensor on the tape, as trainable leaves when
    /// `trainable` is set and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> NetParams<Var> {
        self.map(|_, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    /// Kaiming-uniform fan-in initialization for conv and dense weights,
    /// zero biases, BN gamma = 1 and beta = 0.
    pub fn init(cfg: &MfcmNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kaiming = |shape: &[usize], fan_in: usize| -> Tensor {
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
        };
        let mut conv_bn = |spec: ConvSpec| -> ConvBn<Tensor> {
            let shape = spec.weight_shape();
            let fan_in = shape[1] * shape[2] * shape[3];
            ConvBn {
                weight: kaiming(&shape, fan_in),
                gamma: Tensor::ones(&[spec.out_channels]),
                beta: Tensor::zeros(&[spec.out_channels]),
            }
        };
        let stem = conv_bn(cfg.stem_conv());
        let blocks = cfg
            .blocks
            .iter()
            .map(|b| BlockParams {
                expand: b.has_expand().then(|| conv_bn(b.expand_conv())),
                depthwise: conv_bn(b.depthwise_conv()),
                project: conv_bn(b.project_conv()),
            })
            .collect();
        let mut dense = |fan_in: usize, fan_out: usize| -> (Tensor, Tensor) {
            (kaiming(&[fan_in, fan_out], fan_in), Tensor::zeros(&[fan_out]))
        };
        let mfca = cfg.mfca.as_ref().map(|m| {
            let c = cfg.mfca_channels();
            let hidden = m.hidden(c);
            let (sw, sb) = dense(c * m.dct_coeffs_per_band, hidden);
            let (ew, eb) = dense(hidden, c);
            MfcaParams {
                squeeze_weight: sw,
                squeeze_bias: sb,
                excite_weight: ew,
                excite_bias: eb,
            }
        });
        let feat = cfg.final_channels();
        let head = match cfg.head_hidden {
            Some(h) => {
                let hidden = dense(feat, h);
                let (w, b) = dense(h, 1);
                HeadParams {
                    hidden: Some(hidden),
                    weight: w,
                    bias: b,
                }
            }
            None => {
                let (w, b) = dense(feat, 1);
                HeadParams {
                    hidden: None,
                    weight: w,
                    bias: b,
                }
            }
        };
        NetParams {
            stem,
            blocks,
            mfca,
            head,
        }
    }
}

/// Batch-norm running statistics in traversal order (stem, then each
/// block's expand, depthwise, project).
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub layers: Vec<(String, RunningStats)>,
}

impl BnState {
    pub fn init(cfg: &MfcmNetConfig) -> Self {
        let mut layers = vec![("stem.bn".to_string(), RunningStats::new(cfg.stem_channels))];
        for (i, b) in cfg.blocks.iter().enumerate() {
            if b.has_expand() {
                layers.push((format!("blocks.{i}.expand.bn"), RunningStats::new(b.hidden_channels())));
            }
            layers.push((format!("blocks.{i}.depthwise.bn"), RunningStats::new(b.hidden_channels())));
            layers.push((format!("blocks.{i}.project.bn"), RunningStats::new(b.out_channels)));
        }
        Self { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_traversal_order() {
        let cfg = MfcmNetConfig::micro(96, 96);
        let p = NetParams::init(&cfg, 1);
        let names = p.names();
        assert_eq!(names[0], "stem.conv.weight");
        assert_eq!(names[3], "blocks.0.expand.conv.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
        assert!(names.contains(&"mfca.excite.weight".to_string()));
        let mapped = p.map(|n, _| n.to_string());
        assert_eq!(mapped.names(), names);
        let mut seen = Vec::new();
        mapped.visit(|_, v| seen.push(v.clone()));
        assert_eq!(seen, names);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = MfcmNetConfig::micro(96, 96);
        assert_eq!(NetParams::init(&cfg, 5), NetParams::init(&cfg, 5));
        assert_ne!(NetParams::init(&cfg, 5), NetParams::init(&cfg, 6));
        let p = NetParams::init(&cfg, 5);
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(p.stem.weight.data().iter().all(|v| v.abs() <= bound));
        assert!(p.stem.gamma.data().iter().all(|&v| v == 1.0));
        assert!(p.head.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn micro_parameter_count() {
        let cfg = MfcmNetConfig::micro(96, 96);
        let p = NetParams::init(&cfg, 0);
        // Convs: 216 + (128 + 144 + 256) + (512 + 288 + 512) + (512 + 288 + 1024) = 3880
        // BN affine: 2·(8 + 16+16+16 + 32+32+16 + 32+32+32) = 464
        // MFCA: 64·4 + 4 + 4·16 + 16 = 340; head: 32 + 1 = 33
        assert_eq!(p.num_scalars(), 3880 + 464 + 340 + 33);
        assert_eq!(BnState::init(&cfg).layers.len(), 10);
    }
}
