use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dsp::{BipolarSegment, N_BIPOLAR, SEGMENT_SAMPLES};
use crate::eeg_io::Outcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub has_instance_norm: bool,
}

pub const DEFAULT_KERNELS: [usize; 7] = [5, 3, 3, 3, 4, 3, 3];
pub const DEFAULT_STRIDES: [usize; 7] = [5, 3, 3, 3, 3, 2, 3];

/// The seven-layer schedule with every layer `width` channels wide and
/// instance normalization in the first layer only.
pub fn default_conv_layers(width: usize) -> Vec<ConvLayerSpec> {
    DEFAULT_KERNELS
        .iter()
        .zip(DEFAULT_STRIDES)
        .enumerate()
        .map(|(i, (&kernel, stride))| ConvLayerSpec { kernel, stride, out_channels: width, has_instance_norm: i == 0 })
        .collect()
}

/// `(receptive field, jump)` of a strided conv stack, in input samples.
pub fn receptive_field(layers: &[ConvLayerSpec]) -> (usize, usize) {
    let mut rf = 1;
    let mut jump = 1;
    for l in layers {
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    (rf, jump)
}

/// Output length after valid convolutions, or `None` if the input runs out.
pub fn output_length(layers: &[ConvLayerSpec], input_len: usize) -> Option<usize> {
    layers.iter().try_fold(input_len, |len, l| (len >= l.kernel).then(|| (len - l.kernel) / l.stride + 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bipolar_channels: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub embed_dim: usize,
    pub n_attention_blocks: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub segment_len: usize,
    pub tokens_per_channel: usize,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    /// Class the classification head scores as label 1.
    #[serde(default = "default_positive")]
    pub positive_class: Outcome,
}

fn default_eps() -> f64 {
    1e-5
}

fn default_positive() -> Outcome {
    Outcome::Poor
}

pub const PRESET_NAMES: [&str; 6] = ["desk", "entry1", "entry2", "entry3", "entry4", "paper"];

impl ModelConfig {
    /// Default conv schedule at width `embed_dim`, FFN width `4·embed_dim`.
    pub fn new(n_bipolar_channels: usize, embed_dim: usize, n_attention_blocks: usize, n_heads: usize) -> Result<Self, ModelError> {
        let conv_layers = default_conv_layers(embed_dim);
        let tokens_per_channel = output_length(&conv_layers, SEGMENT_SAMPLES).unwrap_or(0);
        let cfg = Self {
            n_bipolar_channels,
            conv_layers,
            embed_dim,
            n_attention_blocks,
            n_heads,
            ffn_hidden: 4 * embed_dim,
            segment_len: SEGMENT_SAMPLES,
            tokens_per_channel,
            norm_eps: default_eps(),
            positive_class: Outcome::Poor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Named architecture presets; (channels, blocks, heads) for each is
    /// pinned in the tests below. `paper` is an alias of `entry4` and `desk`
    /// is a 32-wide variant small enough for CPU training.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        match name {
            "desk" => Self::new(2, 32, 2, 2),
            "entry1" | "entry2" => Self::new(2, 768, 2, 2),
            "entry3" => Self::new(2, 768, 8, 8),
            "entry4" | "paper" => Self::new(N_BIPOLAR, 768, 8, 8),
            other => Err(ModelError::Config(format!("unknown preset {other:?} (expected one of {PRESET_NAMES:?})"))),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.n_bipolar_channels * self.tokens_per_channel + 2
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Montage rows the model consumes: the first `n_bipolar_channels` pairs.
    pub fn channel_indices(&self) -> Vec<usize> {
        (0..self.n_bipolar_channels).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.n_bipolar_channels == 0 || self.n_bipolar_channels > N_BIPOLAR {
            return err(format!("n_bipolar_channels {} outside 1..={N_BIPOLAR}", self.n_bipolar_channels));
        }
        if self.embed_dim < 2 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return err(format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.ffn_hidden == 0 {
            return err("ffn_hidden must be positive".into());
        }
        if self.conv_layers.len() != 7 {
            return err(format!("expected 7 conv layers, got {}", self.conv_layers.len()));
        }
        for (i, l) in self.conv_layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
                return err(format!("conv layer {i}: kernel, stride and width must be >= 1"));
            }
            if l.has_instance_norm != (i == 0) {
                return err(format!("conv layer {i}: instance norm belongs to the first layer only"));
            }
        }
        if self.conv_layers[6].out_channels != self.embed_dim {
            return err(format!(
                "last conv layer width {} must equal embed_dim {}",
                self.conv_layers[6].out_channels, self.embed_dim
            ));
        }
        match output_length(&self.conv_layers, self.segment_len) {
            Some(t) if t == self.tokens_per_channel && t > 0 => Ok(()),
            other => err(format!(
                "conv stack maps {} samples to {other:?} tokens, config says {}",
                self.segment_len, self.tokens_per_channel
            )),
        }
    }

    /// First architectural field on which `self` and `other` disagree, as
    /// `"field: self vs other"`.
    pub fn first_difference(&self, other: &Self) -> Option<String> {
        macro_rules! cmp {
            ($($f:ident),+) => {
                $(if self.$f != other.$f {
                    return Some(format!("{}: {:?} vs {:?}", stringify!($f), self.$f, other.$f));
                })+
            };
        }
        cmp!(n_bipolar_channels, embed_dim, n_attention_blocks, n_heads, ffn_hidden, segment_len, tokens_per_channel);
        if let Some(i) = (0..7).find(|&i| self.conv_layers.get(i) != other.conv_layers.get(i)) {
            return Some(format!("conv_layers[{i}]: {:?} vs {:?}", self.conv_layers.get(i), other.conv_layers.get(i)));
        }
        cmp!(norm_eps, positive_class);
        None
    }

    /// Narrows an 18-channel segment to this model's channels; segments
    /// that already match pass through.
    pub fn adapt_segment<'a>(&self, seg: &'a BipolarSegment) -> Result<std::borrow::Cow<'a, BipolarSegment>, ModelError> {
        use std::borrow::Cow;
        if seg.n_channels() == self.n_bipolar_channels {
            Ok(Cow::Borrowed(seg))
        } else if seg.n_channels() == N_BIPOLAR {
            Ok(Cow::Owned(seg.select_channels(&self.channel_indices())?))
        } else {
            Err(ModelError::ShapeMismatch(format!(
                "segment has {} channels, model expects {}",
                seg.n_channels(),
                self.n_bipolar_channels
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_arithmetic() {
        let layers = default_conv_layers(768);
        assert_eq!(receptive_field(&layers), (2970, 2430));
        assert_eq!(output_length(&layers, 30_000), Some(12));
        let lengths: Vec<usize> = (1..=7).map(|n| output_length(&layers[..n], 30_000).unwrap()).collect();
        assert_eq!(lengths, [6000, 2000, 666, 222, 73, 36, 12]);
        for width in [1, 8, 32, 768] {
            assert_eq!(output_length(&default_conv_layers(width), 30_000), Some(12));
        }
    }

    #[test]
    fn receptive_field_small_cases() {
        let l = |kernel, stride| ConvLayerSpec { kernel, stride, out_channels: 1, has_instance_norm: false };
        assert_eq!(receptive_field(&[l(5, 5)]), (5, 5));
        assert_eq!(receptive_field(&[l(3, 1), l(3, 1)]), (5, 1));
    }

    #[test]
    fn presets_match_reported_entries() {
        let dims = |name: &str| {
            let c = ModelConfig::preset(name).unwrap();
            (c.n_bipolar_channels, c.n_attention_blocks, c.n_heads)
        };
        assert_eq!(dims("entry1"), (2, 2, 2));
        assert_eq!(dims("entry2"), (2, 2, 2));
        assert_eq!(dims("entry3"), (2, 8, 8));
        assert_eq!(dims("entry4"), (18, 8, 8));
        let paper = ModelConfig::preset("paper").unwrap();
        assert_eq!((paper.embed_dim, paper.tokens_per_channel, paper.seq_len()), (768, 12, 218));
        assert_eq!(ModelConfig::preset("entry1").unwrap().seq_len(), 26);
        assert!(ModelConfig::preset("entry9").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig::new(2, 30, 2, 4).is_err());
        assert!(ModelConfig::new(19, 32, 2, 2).is_err());
        let mut c = ModelConfig::preset("desk").unwrap();
        c.tokens_per_channel = 13;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::preset("desk").unwrap();
        c.conv_layers[3].has_instance_norm = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig::preset("desk").unwrap();
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
