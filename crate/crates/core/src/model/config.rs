use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One residual backbone stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageSpec>,
}

/// Atrous spatial pyramid pooling block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppConfig {
    /// Dilation rates of the parallel 3×3 branches.
    pub rates: Vec<usize>,
    pub branch_channels: usize,
    /// Channels after the fusing 1×1 convolution (the backbone feature width).
    pub out_channels: usize,
    /// Include the plain 1×1 branch.
    pub pointwise_branch: bool,
    /// Include the global-average-pooling branch.
    pub pooling_branch: bool,
}

impl AsppConfig {
    pub fn branch_count(&self) -> usize {
        self.rates.len() + usize::from(self.pointwise_branch) + usize::from(self.pooling_branch)
    }
}

/// Encoder stage of the head: strided conv, then a ConvLSTM layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderStage {
    pub channels: usize,
    pub stride: usize,
    pub hidden: usize,
}

/// Skip connection from an encoder level into a decoder stage.
///
/// Level 0 is the head input (backbone features); level `i >= 1` is the
/// output of encoder stage `i - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipLink {
    pub level: usize,
    pub decoder: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub encoder: Vec<EncoderStage>,
    pub lstm_kernel: usize,
    pub skips: Vec<SkipLink>,
}

impl HeadConfig {
    /// Skips joining each decoder stage to the encoder level of equal resolution.
    pub fn mirrored_skips(stages: usize) -> Vec<SkipLink> {
        (0..stages)
            .map(|j| SkipLink {
                level: stages - 1 - j,
                decoder: j,
            })
            .collect()
    }

    /// Output channels of decoder stage `j` (mirrors the encoder conv widths).
    pub fn decoder_channels(&self, j: usize) -> usize {
        self.encoder[self.encoder.len() - 1 - j].channels
    }

    /// Channel count of an encoder level (see [`SkipLink`]).
    pub fn level_channels(&self, level: usize, feature_channels: usize) -> usize {
        match level {
            0 => feature_channels,
            i => self.encoder[i - 1].hidden,
        }
    }

    pub fn skip_into(&self, decoder: usize) -> Option<SkipLink> {
        self.skips.iter().copied().find(|s| s.decoder == decoder)
    }

    pub fn downsampling(&self) -> usize {
        self.encoder.iter().map(|s| s.stride).product()
    }
}

/// Architecture hyperparameters of the whole network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Slices are resampled to `input_size × input_size` before entering the model.
    pub input_size: usize,
    pub backbone: BackboneConfig,
    pub aspp: AsppConfig,
    pub head: HeadConfig,
    /// When false every ConvLSTM layer runs from a zero state on each slice,
    /// which turns it into a stateless convolutional block.
    pub recurrence_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 224² input, output stride 8, 64 feature channels at 28×28.
    pub fn desk() -> Self {
        ModelConfig {
            in_channels: 1,
            input_size: 224,
            backbone: BackboneConfig {
                stem_channels: 16,
                stem_stride: 2,
                stages: vec![
                    StageSpec {
                        channels: 32,
                        stride: 2,
                        dilation: 1,
                    },
                    StageSpec {
                        channels: 32,
                        stride: 2,
                        dilation: 2,
                    },
                ],
            },
            aspp: AsppConfig {
                rates: vec![1, 2, 4],
                branch_channels: 32,
                out_channels: 64,
                pointwise_branch: true,
                pooling_branch: true,
            },
            head: HeadConfig {
                encoder: vec![
                    EncoderStage {
                        channels: 32,
                        stride: 2,
                        hidden: 32,
                    },
                    EncoderStage {
                        channels: 32,
                        stride: 2,
                        hidden: 32,
                    },
                ],
                lstm_kernel: 3,
                skips: HeadConfig::mirrored_skips(2),
            },
            recurrence_enabled: true,
        }
    }

    /// Small variant for 64² phantoms and fast tests.
    pub fn micro() -> Self {
        ModelConfig {
            in_channels: 1,
            input_size: 64,
            backbone: BackboneConfig {
                stem_channels: 8,
                stem_stride: 2,
                stages: vec![StageSpec {
                    channels: 8,
                    stride: 1,
                    dilation: 2,
                }],
            },
            aspp: AsppConfig {
                rates: vec![1, 2, 4],
                branch_channels: 4,
                out_channels: 12,
                pointwise_branch: true,
                pooling_branch: true,
            },
            head: HeadConfig {
                encoder: vec![
                    EncoderStage {
                        channels: 12,
                        stride: 2,
                        hidden: 8,
                    },
                    EncoderStage {
                        channels: 12,
                        stride: 2,
                        hidden: 8,
                    },
                ],
                lstm_kernel: 3,
                skips: HeadConfig::mirrored_skips(2),
            },
            recurrence_enabled: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::desk()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (expected desk or micro)"))),
        }
    }

    pub fn with_recurrence(mut self, enabled: bool) -> Self {
        self.recurrence_enabled = enabled;
        self
    }

    /// Total spatial downsampling of the backbone.
    pub fn backbone_downsampling(&self) -> usize {
        self.backbone.stem_stride * self.backbone.stages.iter().map(|s| s.stride).product::<usize>()
    }

    /// Spatial extents must be multiples of this to pass through the model.
    pub fn required_multiple(&self) -> usize {
        self.backbone_downsampling() * self.head.downsampling()
    }

    pub fn feature_channels(&self) -> usize {
        self.aspp.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.input_size == 0 {
            return bad("in_channels and input_size must be positive".into());
        }
        let b = &self.backbone;
        if b.stem_channels == 0 || b.stem_stride == 0 {
            return bad("backbone stem must have positive channels and stride".into());
        }
        for (i, s) in b.stages.iter().enumerate() {
            if s.channels == 0 || s.stride == 0 || s.dilation == 0 {
                return bad(format!("backbone stage {i} must have positive channels, stride, dilation"));
            }
        }
        let a = &self.aspp;
        if a.rates.is_empty() || a.rates.contains(&0) {
            return bad(format!("aspp rates must be non-empty and >= 1, got {:?}", a.rates));
        }
        if a.branch_channels == 0 || a.out_channels == 0 {
            return bad("aspp channels must be positive".into());
        }
        let h = &self.head;
        if h.encoder.is_empty() {
            return bad("head needs at least one encoder stage".into());
        }
        if h.lstm_kernel % 2 == 0 {
            return bad(format!("lstm kernel must be odd, got {}", h.lstm_kernel));
        }
        for (i, s) in h.encoder.iter().enumerate() {
            if s.channels == 0 || s.stride == 0 || s.hidden == 0 {
                return bad(format!("head encoder stage {i} must have positive channels, stride, hidden"));
            }
        }
        let n = h.encoder.len();
        for (k, s) in h.skips.iter().enumerate() {
            if s.decoder >= n || s.level >= n {
                return bad(format!("skip {k} ({s:?}) out of range for {n} stages"));
            }
            // Decoder stage j restores the resolution of level n-1-j.
            if s.level != n - 1 - s.decoder {
                return bad(format!(
                    "skip {k}: level {} has a different resolution than decoder stage {}",
                    s.level, s.decoder
                ));
            }
            if h.skips[..k].iter().any(|o| o.decoder == s.decoder) {
                return bad(format!("decoder stage {} has more than one skip", s.decoder));
            }
        }
        if self.input_size % self.required_multiple() != 0 {
            return bad(format!(
                "input_size {} is not a multiple of the total downsampling {}",
                self.input_size,
                self.required_multiple()
            ));
        }
        Ok(())
    }

    /// Canonical single-line text form (stored in checkpoints).
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::micro().validate().unwrap();
        assert_eq!(ModelConfig::desk().backbone_downsampling(), 8);
        assert_eq!(ModelConfig::desk().required_multiple(), 32);
    }

    #[test]
    fn canonical_roundtrip() {
        let c = ModelConfig::micro().with_recurrence(false);
        assert_eq!(ModelConfig::from_canonical(&c.to_canonical()).unwrap(), c);
    }

    #[test]
    fn rejects_inconsistent_skip() {
        let mut c = ModelConfig::desk();
        c.head.skips = vec![SkipLink { level: 0, decoder: 0 }];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.aspp.rates.clear();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.input_size = 100;
        assert!(c.validate().is_err());
    }
}
