use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::ConvSpec;

/// One inverted residual block: 1×1 expand → 3×3 depthwise → 1×1 linear
/// projection, with an identity skip when shapes allow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertedResidualSpec {
    pub in_channels: usize,
    pub expansion_factor: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl InvertedResidualSpec {
    pub fn new(in_channels: usize, out_channels: usize, expansion_factor: usize, stride: usize) -> Self {
        Self {
            in_channels,
            expansion_factor,
            out_channels,
            stride,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.in_channels * self.expansion_factor
    }

    /// Expansion factor 1 omits the expand convolution.
    pub fn has_expand(&self) -> bool {
        self.expansion_factor != 1
    }

    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expand_conv(&self) -> ConvSpec {
        ConvSpec::pointwise(self.in_channels, self.hidden_channels())
    }

    pub fn depthwise_conv(&self) -> ConvSpec {
        ConvSpec::depthwise(self.hidden_channels(), 3, self.stride, 1)
    }

    pub fn project_conv(&self) -> ConvSpec {
        ConvSpec::pointwise(self.hidden_channels(), self.out_channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MfcaVariant {
    /// Low-order DCT coefficients feed a shared bottleneck whose sigmoid
    /// output weights each channel of the band.
    #[default]
    Excitation,
    /// As `Excitation`, plus the band's map low-passed to its first K
    /// zigzag DCT coefficients and inverse-transformed is added to the
    /// attention logits before the sigmoid.
    InverseDct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfcaConfig {
    pub num_bands: usize,
    pub dct_coeffs_per_band: usize,
    pub reduction_ratio: usize,
    pub variant: MfcaVariant,
}

impl Default for MfcaConfig {
    fn default() -> Self {
        Self {
            num_bands: 3,
            dct_coeffs_per_band: 4,
            reduction_ratio: 4,
            variant: MfcaVariant::Excitation,
        }
    }
}

impl MfcaConfig {
    pub fn hidden(&self, channels: usize) -> usize {
        (channels / self.reduction_ratio).max(1)
    }
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfcmNetConfig {
    pub stem_channels: usize,
    pub blocks: Vec<InvertedResidualSpec>,
    /// Attention settings; `None` builds the backbone-only network.
    pub mfca: Option<MfcaConfig>,
    /// MFCA is applied after this many blocks.
    pub mfca_after: usize,
    /// Optional hidden layer width in the classifier head.
    pub head_hidden: Option<usize>,
    /// `[channels, height, width]`; height is the mel axis.
    pub input_shape: [usize; 3],
}

impl Default for MfcmNetConfig {
    fn default() -> Self {
        Self::micro(224, 224)
    }
}

impl MfcmNetConfig {
    /// Three-block reference model: stem 8, (8→16, e2, s2), (16→16, e2, s1),
    /// (16→32, e2, s2), MFCA after the second block, linear head.
    pub fn micro(height: usize, width: usize) -> Self {
        Self {
            stem_channels: 8,
            blocks: vec![
                InvertedResidualSpec::new(8, 16, 2, 2),
                InvertedResidualSpec::new(16, 16, 2, 1),
                InvertedResidualSpec::new(16, 32, 2, 2),
            ],
            mfca: Some(MfcaConfig::default()),
            mfca_after: 2,
            head_hidden: None,
            input_shape: [3, height, width],
        }
    }

    /// The standard MobileNetV2 stage table (stem 32, seventeen blocks),
    /// MFCA after the 32-channel stage.
    pub fn mobilenet_v2(height: usize, width: usize) -> Self {
        let table = [
            (1, 16, 1, 1),
            (6, 24, 2, 2),
            (6, 32, 3, 2),
            (6, 64, 4, 2),
            (6, 96, 3, 1),
            (6, 160, 3, 2),
            (6, 320, 1, 1),
        ];
        let mut blocks = Vec::new();
        let mut c = 32;
        for (t, out, n, s) in table {
            for i in 0..n {
                blocks.push(InvertedResidualSpec::new(c, out, t, if i == 0 { s } else { 1 }));
                c = out;
            }
        }
        Self {
            stem_channels: 32,
            blocks,
            mfca: Some(MfcaConfig::default()),
            mfca_after: 6,
            head_hidden: None,
            input_shape: [3, height, width],
        }
    }

    pub fn stem_conv(&self) -> ConvSpec {
        ConvSpec::new(self.input_shape[0], self.stem_channels, 3, 2, 1)
    }

    pub fn final_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, |b| b.out_channels)
    }

    /// Channel count entering the MFCA module.
    pub fn mfca_channels(&self) -> usize {
        if self.mfca_after == 0 {
            self.stem_channels
        } else {
            self.blocks[self.mfca_after - 1].out_channels
        }
    }

    /// `(C, H, W)` after the stem and after each block.
    pub fn feature_shapes(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let [_, h, w] = self.input_shape;
        let (mut h, mut w) = self.stem_conv().output_hw(h, w)?;
        let mut shapes = vec![(self.stem_channels, h, w)];
        for b in &self.blocks {
            (h, w) = b.depthwise_conv().output_hw(h, w)?;
            shapes.push((b.out_channels, h, w));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.input_shape[0] != 3 {
            return bad(format!("input must have 3 channels, got {}", self.input_shape[0]));
        }
        if self.stem_channels == 0 || self.blocks.is_empty() {
            return bad("need a stem and at least one block".into());
        }
        let mut c = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels != c {
                return bad(format!("block {i} expects {} channels, previous stage gives {c}", b.in_channels));
            }
            if !(b.stride == 1 || b.stride == 2) || b.expansion_factor == 0 || b.out_channels == 0 {
                return bad(format!("block {i} has invalid stride/expansion/width: {b:?}"));
            }
            c = b.out_channels;
        }
        if !self.blocks.iter().any(|b| b.stride == 2) {
            return bad("at least one block must downsample (stride 2)".into());
        }
        if self.head_hidden == Some(0) {
            return bad("head_hidden must be positive".into());
        }
        let shapes = self.feature_shapes()?;
        if let Some(m) = &self.mfca {
            if m.num_bands == 0 || m.dct_coeffs_per_band == 0 || m.reduction_ratio == 0 {
                return bad(format!("invalid MFCA settings {m:?}"));
            }
            if self.mfca_after > self.blocks.len() {
                return bad(format!("mfca_after {} exceeds {} blocks", self.mfca_after, self.blocks.len()));
            }
            let (_, h, _) = shapes[self.mfca_after];
            if h < m.num_bands {
                return Err(ModelError::BandTooThin {
                    height: h,
                    bands: m.num_bands,
                });
            }
        }
        Ok(())
    }
}
