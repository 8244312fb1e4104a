use crate::autodiff::{Graph, Tensor, Var};
use crate::dsp::BipolarSegment;

use super::params::{BoundBlock, BoundContext, BoundEncoder, BoundHead};
use super::{ModelConfig, ModelError, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOutput {
    pub poor_prob: f64,
    pub cpc_raw: f64,
    pub cpc_pred: u8,
}

pub fn cpc_from_raw(cpc_raw: f64) -> u8 {
    cpc_raw.round().clamp(1.0, 5.0) as u8
}

/// Handles for the two head outputs of one example, each of shape `[1]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub logit: Var,
    pub cpc_raw: Var,
}

/// Conv stack for one channel: `[segment_len]` in, `[tokens × d]` out.
pub fn encode_channel(
    g: &mut Graph<'_>,
    enc: &BoundEncoder,
    cfg: &ModelConfig,
    channel: &[f32],
) -> Result<Var, ModelError> {
    if channel.len() != cfg.segment_len {
        return Err(ModelError::ShapeMismatch(format!(
            "channel has {} samples, expected {}",
            channel.len(),
            cfg.segment_len
        )));
    }
    let input = Tensor::new(vec![1, channel.len()], channel.iter().map(|&v| f64::from(v)).collect())?;
    let mut h = g.constant(input);
    for (spec, conv) in cfg.conv_layers.iter().zip(&enc.convs) {
        h = g.conv1d(h, conv.weight, conv.bias, spec.stride)?;
        if spec.has_instance_norm {
            h = g.instance_norm(h, enc.norm.gain, enc.norm.shift, cfg.norm_eps)?;
        }
        h = g.gelu(h)?;
    }
    Ok(g.transpose(h)?)
}

/// Stacks per-channel token matrices in montage order, prepends the class
/// (row 0) and regress (row 1) tokens, and adds the positional encoding.
pub fn assemble_sequence(g: &mut Graph<'_>, ctx: &BoundContext, channel_tokens: &[Var]) -> Result<Var, ModelError> {
    let d = g.value(ctx.tokens.class_token).numel();
    let class = g.reshape(ctx.tokens.class_token, &[1, d])?;
    let regress = g.reshape(ctx.tokens.regress_token, &[1, d])?;
    let mut rows = vec![class, regress];
    rows.extend_from_slice(channel_tokens);
    let seq = g.concat0(&rows)?;
    if g.value(seq).shape() != g.value(ctx.tokens.pos_encoding).shape() {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence {:?} vs positional encoding {:?}",
            g.value(seq).shape(),
            g.value(ctx.tokens.pos_encoding).shape()
        )));
    }
    Ok(g.add(seq, ctx.tokens.pos_encoding)?)
}

fn check_segment(cfg: &ModelConfig, seg: &BipolarSegment) -> Result<(), ModelError> {
    if seg.n_channels() != cfg.n_bipolar_channels {
        return Err(ModelError::ShapeMismatch(format!(
            "segment has {} channels, model expects {}",
            seg.n_channels(),
            cfg.n_bipolar_channels
        )));
    }
    Ok(())
}

/// Pre-attention sequence `[(channels·tokens + 2) × d]` for one segment.
pub fn build_sequence(
    g: &mut Graph<'_>,
    encoders: &[BoundEncoder],
    ctx: &BoundContext,
    cfg: &ModelConfig,
    seg: &BipolarSegment,
) -> Result<Var, ModelError> {
    check_segment(cfg, seg)?;
    let tokens = encoders
        .iter()
        .enumerate()
        .map(|(c, enc)| encode_channel(g, enc, cfg, seg.channel(c)))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_sequence(g, ctx, &tokens)
}

/// Post-norm attention block. Also returns each head's `[S × S]` attention weights.
pub fn attention_block_with_weights(
    g: &mut Graph<'_>,
    blk: &BoundBlock,
    x: Var,
    n_heads: usize,
    eps: f64,
) -> Result<(Var, Vec<Var>), ModelError> {
    let d = g.value(x).last_dim();
    if g.value(x).rank() != 2 || n_heads == 0 || d % n_heads != 0 {
        return Err(ModelError::ShapeMismatch(format!("attention input {:?} with {n_heads} heads", g.value(x).shape())));
    }
    let dh = d / n_heads;
    let q = g.linear(x, blk.wq, blk.bq)?;
    let k = g.linear(x, blk.wk, blk.bk)?;
    let v = g.linear(x, blk.wv, blk.bv)?;
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax(scores)?;
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let merged = g.concat_cols(&heads)?;
    let mha = g.linear(merged, blk.wo, blk.bo)?;
    let h1 = g.add(x, mha)?;
    let h1 = g.layer_norm(h1, blk.ln1_gain, blk.ln1_shift, eps)?;
    let f = g.linear(h1, blk.ffn_w1, blk.ffn_b1)?;
    let f = g.gelu(f)?;
    let f = g.linear(f, blk.ffn_w2, blk.ffn_b2)?;
    let out = g.add(h1, f)?;
    let out = g.layer_norm(out, blk.ln2_gain, blk.ln2_shift, eps)?;
    Ok((out, weights))
}

pub fn attention_block(g: &mut Graph<'_>, blk: &BoundBlock, x: Var, n_heads: usize, eps: f64) -> Result<Var, ModelError> {
    Ok(attention_block_with_weights(g, blk, x, n_heads, eps)?.0)
}

fn head(g: &mut Graph<'_>, h: &BoundHead, x: Var, row: usize) -> Result<Var, ModelError> {
    let r = g.row(x, row)?;
    Ok(g.linear(r, h.weight, h.bias)?)
}

/// Context network and heads applied to an assembled sequence.
pub fn context_forward(g: &mut Graph<'_>, ctx: &BoundContext, cfg: &ModelConfig, seq: Var) -> Result<HeadVars, ModelError> {
    let mut x = seq;
    for blk in &ctx.blocks {
        x = attention_block(g, blk, x, cfg.n_heads, cfg.norm_eps)?;
    }
    Ok(HeadVars { logit: head(g, &ctx.class_head, x, 0)?, cpc_raw: head(g, &ctx.regress_head, x, 1)? })
}

/// Whole-model forward inside one graph (the training path).
pub fn forward_graph(
    g: &mut Graph<'_>,
    encoders: &[BoundEncoder],
    ctx: &BoundContext,
    cfg: &ModelConfig,
    seg: &BipolarSegment,
) -> Result<HeadVars, ModelError> {
    let seq = build_sequence(g, encoders, ctx, cfg, seg)?;
    context_forward(g, ctx, cfg, seq)
}

/// Converts a class-head logit into the probability of a poor outcome.
pub fn poor_prob_from_logit(cfg: &ModelConfig, logit: f64) -> f64 {
    let p = crate::autodiff::kernels::sigmoid_scalar(logit);
    match cfg.positive_class {
        crate::eeg_io::Outcome::Poor => p,
        crate::eeg_io::Outcome::Good => 1.0 - p,
    }
}

/// A configuration with its parameters, ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        check_shapes(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn forward(&self, seg: &BipolarSegment) -> Result<ModelOutput, ModelError> {
        infer(&self.config, &self.params, seg)
    }
}

/// Inference forward. Each channel is encoded in its own graph that is
/// dropped before the next, so peak memory is one encoder's activations;
/// the values are identical to [`forward_graph`]. 18-channel segments are
/// narrowed to the model's channels first.
pub fn infer(cfg: &ModelConfig, params: &ModelParams, seg: &BipolarSegment) -> Result<ModelOutput, ModelError> {
    let seg = cfg.adapt_segment(seg)?;
    check_segment(cfg, &seg)?;
    let mut tokens = Vec::with_capacity(cfg.n_bipolar_channels);
    for (c, enc) in params.encoders.iter().enumerate() {
        let mut g = Graph::new();
        let bound = enc.bind(&mut g);
        let t = encode_channel(&mut g, &bound, cfg, seg.channel(c))?;
        tokens.push(g.value(t).clone());
    }
    let mut g = Graph::new();
    let ctx = params.context.bind(&mut g);
    let token_vars: Vec<Var> = tokens.into_iter().map(|t| g.constant(t)).collect();
    let seq = assemble_sequence(&mut g, &ctx, &token_vars)?;
    let heads = context_forward(&mut g, &ctx, cfg, seq)?;
    let logit = g.value(heads.logit).data()[0];
    let cpc_raw = g.value(heads.cpc_raw).data()[0];
    Ok(ModelOutput { poor_prob: poor_prob_from_logit(cfg, logit), cpc_raw, cpc_pred: cpc_from_raw(cpc_raw) })
}

fn check_shapes(cfg: &ModelConfig, params: &ModelParams) -> Result<(), ModelError> {
    let expected = ModelParams::expected_shapes(cfg);
    let actual = params.tensors();
    if expected.len() != actual.len() {
        return Err(ModelError::ShapeMismatch(format!("{} parameter tensors, expected {}", actual.len(), expected.len())));
    }
    for (shape, (name, t)) in expected.iter().zip(&actual) {
        if t.shape() != &shape[..] {
            return Err(ModelError::ShapeMismatch(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
        }
    }
    Ok(())
}
