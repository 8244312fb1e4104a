//! The outcome model: one dedicated conv encoder per bipolar channel, a
//! token sequence with learnable class/regress tokens and positional
//! encodings, a stack of attention blocks, and two linear heads.

mod checkpoint;
mod config;
mod network;
mod params;

use std::path::PathBuf;

pub use checkpoint::{Checkpoint, Provenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    default_conv_layers, output_length, receptive_field, ConvLayerSpec, ModelConfig, DEFAULT_KERNELS, DEFAULT_STRIDES,
    PRESET_NAMES,
};
pub use network::{
    assemble_sequence, attention_block, attention_block_with_weights, build_sequence, context_forward, cpc_from_raw,
    encode_channel, forward_graph, infer, poor_prob_from_logit, HeadVars, Model, ModelOutput,
};
pub use params::{
    AttentionBlockParams, BoundBlock, BoundContext, BoundEncoder, BoundParams, ContextParams, ConvParams, EncoderParams,
    HeadParams, ModelParams, NormParams, TokenParams,
};

use crate::autodiff::AutodiffError;
use crate::dsp::DspError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("checkpoint truncated")]
    CheckpointTruncated,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
