use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::autodiff::{Graph, Tensor, Var};

const TOKEN_INIT_STD: f64 = 0.02;

/// Declares a struct of named tensors, a mirror struct of graph handles, and
/// the traversal helpers shared by binding, gradient collection and I/O.
macro_rules! param_group {
    ($name:ident, $bound:ident { $($field:ident),+ $(,)? }) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $(pub $field: Tensor,)+
        }

        #[derive(Clone, Copy, Debug)]
        pub struct $bound {
            $(pub $field: Var,)+
        }

        impl $name {
            fn bind<'p>(&'p self, g: &mut Graph<'p>) -> $bound {
                $bound { $($field: g.param(&self.$field),)+ }
            }

            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
                $(out.push((format!("{prefix}.{}", stringify!($field)), &self.$field));)+
            }

            fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
                $(out.push(&mut self.$field);)+
            }
        }

        impl $bound {
            fn collect(&self, out: &mut Vec<Var>) {
                $(out.push(self.$field);)+
            }
        }
    };
}

param_group!(ConvParams, BoundConv { weight, bias });
param_group!(NormParams, BoundNorm { gain, shift });
param_group!(HeadParams, BoundHead { weight, bias });
param_group!(TokenParams, BoundTokens { pos_encoding, class_token, regress_token });
param_group!(AttentionBlockParams, BoundBlock {
    wq, bq, wk, bk, wv, bv, wo, bo,
    ln1_gain, ln1_shift,
    ffn_w1, ffn_b1, ffn_w2, ffn_b2,
    ln2_gain, ln2_shift,
});

/// One channel's dedicated conv stack.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub convs: Vec<ConvParams>,
    pub norm: NormParams,
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub convs: Vec<BoundConv>,
    pub norm: BoundNorm,
}

impl EncoderParams {
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> BoundEncoder {
        BoundEncoder { convs: self.convs.iter().map(|c| c.bind(g)).collect(), norm: self.norm.bind(g) }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("{prefix}.conv{i}"), out);
        }
        self.norm.visit(&format!("{prefix}.norm"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for c in &mut self.convs {
            c.visit_mut(out);
        }
        self.norm.visit_mut(out);
    }
}

impl BoundEncoder {
    fn collect(&self, out: &mut Vec<Var>) {
        self.convs.iter().for_each(|c| c.collect(out));
        self.norm.collect(out);
    }
}

/// Everything after the encoders: tokens, attention blocks and heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextParams {
    pub tokens: TokenParams,
    pub blocks: Vec<AttentionBlockParams>,
    pub class_head: HeadParams,
    pub regress_head: HeadParams,
}

#[derive(Clone, Debug)]
pub struct BoundContext {
    pub tokens: BoundTokens,
    pub blocks: Vec<BoundBlock>,
    pub class_head: BoundHead,
    pub regress_head: BoundHead,
}

impl ContextParams {
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> BoundContext {
        BoundContext {
            tokens: self.tokens.bind(g),
            blocks: self.blocks.iter().map(|b| b.bind(g)).collect(),
            class_head: self.class_head.bind(g),
            regress_head: self.regress_head.bind(g),
        }
    }
}

impl BoundContext {
    fn collect(&self, out: &mut Vec<Var>) {
        self.tokens.collect(out);
        self.blocks.iter().for_each(|b| b.collect(out));
        self.class_head.collect(out);
        self.regress_head.collect(out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoders: Vec<EncoderParams>,
    pub context: ContextParams,
}

/// Graph handles for every parameter of a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub encoders: Vec<BoundEncoder>,
    pub context: BoundContext,
}

impl BoundParams {
    /// Handles in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.encoders.iter().for_each(|e| e.collect(&mut out));
        self.context.collect(&mut out);
        out
    }
}

struct Init<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn linear(&mut self, d_in: usize, d_out: usize) -> (Tensor, Tensor) {
        (self.uniform(&[d_in, d_out], d_in), self.uniform(&[d_out], d_in))
    }
}

impl ModelParams {
    /// Seeded initialization: conv and linear weights and biases uniform in
    /// ±1/sqrt(fan_in), positional encodings and special tokens N(0, 0.02²),
    /// norm gains 1 and shifts 0. Values are rounded to `f32` so a freshly
    /// initialized model survives a checkpoint round trip unchanged.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let d = cfg.embed_dim;

        let encoders = (0..cfg.n_bipolar_channels)
            .map(|_| {
                let mut c_in = 1;
                let convs = cfg
                    .conv_layers
                    .iter()
                    .map(|l| {
                        let fan_in = c_in * l.kernel;
                        let p = ConvParams {
                            weight: init.uniform(&[l.out_channels, c_in, l.kernel], fan_in),
                            bias: init.uniform(&[l.out_channels], fan_in),
                        };
                        c_in = l.out_channels;
                        p
                    })
                    .collect();
                let width = cfg.conv_layers[0].out_channels;
                EncoderParams { convs, norm: NormParams { gain: Tensor::full(&[width], 1.0), shift: Tensor::zeros(&[width]) } }
            })
            .collect();

        let tokens = TokenParams {
            pos_encoding: init.normal(&[cfg.seq_len(), d], TOKEN_INIT_STD),
            class_token: init.normal(&[d], TOKEN_INIT_STD),
            regress_token: init.normal(&[d], TOKEN_INIT_STD),
        };
        let blocks = (0..cfg.n_attention_blocks)
            .map(|_| {
                let (wq, bq) = init.linear(d, d);
                let (wk, bk) = init.linear(d, d);
                let (wv, bv) = init.linear(d, d);
                let (wo, bo) = init.linear(d, d);
                let (ffn_w1, ffn_b1) = init.linear(d, cfg.ffn_hidden);
                let (ffn_w2, ffn_b2) = init.linear(cfg.ffn_hidden, d);
                AttentionBlockParams {
                    wq, bq, wk, bk, wv, bv, wo, bo,
                    ln1_gain: Tensor::full(&[d], 1.0),
                    ln1_shift: Tensor::zeros(&[d]),
                    ffn_w1, ffn_b1, ffn_w2, ffn_b2,
                    ln2_gain: Tensor::full(&[d], 1.0),
                    ln2_shift: Tensor::zeros(&[d]),
                }
            })
            .collect();
        let (w, b) = init.linear(d, 1);
        let class_head = HeadParams { weight: w, bias: b };
        let (w, b) = init.linear(d, 1);
        let regress_head = HeadParams { weight: w, bias: b };

        let mut params = Self { encoders, context: ContextParams { tokens, blocks, class_head, regress_head } };
        params.round_to_f32();
        params
    }

    /// Named tensors in a fixed order (encoders by channel, then tokens,
    /// blocks and heads). This order is the checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            e.visit(&format!("encoder{i}"), &mut out);
        }
        let ctx = &self.context;
        ctx.tokens.visit("tokens", &mut out);
        for (i, b) in ctx.blocks.iter().enumerate() {
            b.visit(&format!("block{i}"), &mut out);
        }
        ctx.class_head.visit("class_head", &mut out);
        ctx.regress_head.visit("regress_head", &mut out);
        out
    }

    /// Mutable tensors in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            e.visit_mut(&mut out);
        }
        let ctx = &mut self.context;
        ctx.tokens.visit_mut(&mut out);
        for b in &mut ctx.blocks {
            b.visit_mut(&mut out);
        }
        ctx.class_head.visit_mut(&mut out);
        ctx.regress_head.visit_mut(&mut out);
        out
    }

    /// Tensor shapes implied by `cfg`, in [`ModelParams::tensors`] order,
    /// without allocating the tensors.
    pub fn expected_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
        let (d, f) = (cfg.embed_dim, cfg.ffn_hidden);
        let mut out = Vec::new();
        for _ in 0..cfg.n_bipolar_channels {
            let mut c_in = 1;
            for l in &cfg.conv_layers {
                out.push(vec![l.out_channels, c_in, l.kernel]);
                out.push(vec![l.out_channels]);
                c_in = l.out_channels;
            }
            let width = cfg.conv_layers[0].out_channels;
            out.extend([vec![width], vec![width]]);
        }
        out.extend([vec![cfg.seq_len(), d], vec![d], vec![d]]);
        for _ in 0..cfg.n_attention_blocks {
            for _ in 0..4 {
                out.extend([vec![d, d], vec![d]]);
            }
            out.extend([vec![d], vec![d], vec![d, f], vec![f], vec![f, d], vec![d], vec![d], vec![d]]);
        }
        for _ in 0..2 {
            out.extend([vec![d, 1], vec![1]]);
        }
        out
    }

    /// Rebuilds parameters from tensors listed in [`ModelParams::tensors`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let expected = Self::expected_shapes(cfg);
        if expected.len() != tensors.len() {
            return Err(ModelError::ShapeMismatch(format!("{} tensors, config implies {}", tensors.len(), expected.len())));
        }
        if let Some((shape, t)) = expected.iter().zip(&tensors).find(|(s, t)| t.shape() != &s[..]) {
            return Err(ModelError::ShapeMismatch(format!("tensor shape {:?}, config implies {shape:?}", t.shape())));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");

        let mut encoders = Vec::with_capacity(cfg.n_bipolar_channels);
        for _ in 0..cfg.n_bipolar_channels {
            let mut convs = Vec::with_capacity(cfg.conv_layers.len());
            for _ in &cfg.conv_layers {
                convs.push(ConvParams { weight: next(), bias: next() });
            }
            encoders.push(EncoderParams { convs, norm: NormParams { gain: next(), shift: next() } });
        }
        let tokens = TokenParams { pos_encoding: next(), class_token: next(), regress_token: next() };
        let mut blocks = Vec::with_capacity(cfg.n_attention_blocks);
        for _ in 0..cfg.n_attention_blocks {
            blocks.push(AttentionBlockParams {
                wq: next(), bq: next(), wk: next(), bk: next(), wv: next(), bv: next(), wo: next(), bo: next(),
                ln1_gain: next(), ln1_shift: next(),
                ffn_w1: next(), ffn_b1: next(), ffn_w2: next(), ffn_b2: next(),
                ln2_gain: next(), ln2_shift: next(),
            });
        }
        let class_head = HeadParams { weight: next(), bias: next() };
        let regress_head = HeadParams { weight: next(), bias: next() };
        Ok(Self { encoders, context: ContextParams { tokens, blocks, class_head, regress_head } })
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> BoundParams {
        BoundParams { encoders: self.encoders.iter().map(|e| e.bind(g)).collect(), context: self.context.bind(g) }
    }

    pub fn count_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_parameter_count_by_hand() {
        let cfg = ModelConfig::preset("desk").unwrap();
        let p = ModelParams::init(&cfg, 0);
        // Encoder: 32·1·5+32, instance norm 2·32, four k=3 layers, one k=4 layer,
        // then the two trailing k=3 layers (32·32·3+32 each).
        let encoder = (160 + 32) + 64 + 5 * (3072 + 32) + (4096 + 32);
        assert_eq!(encoder, 19_904);
        let tokens = 26 * 32 + 2 * 32;
        let block = 4 * (1024 + 32) + (4096 + 128) + (4096 + 32) + 4 * 32;
        assert_eq!(block, 12_704);
        let heads = 2 * 33;
        assert_eq!(p.count_parameters(), 2 * encoder + tokens + 2 * block + heads);
        assert_eq!(p.count_parameters(), 66_178);
    }

    #[test]
    fn count_is_linear_in_blocks() {
        let mut cfg = ModelConfig::preset("desk").unwrap();
        let base = ModelParams::init(&cfg, 0).count_parameters();
        cfg.n_attention_blocks = 4;
        let four = ModelParams::init(&cfg, 0).count_parameters();
        cfg.n_attention_blocks = 6;
        let six = ModelParams::init(&cfg, 0).count_parameters();
        assert_eq!(four - base, six - four);
        assert_eq!((four - base) / 2, 12_704);
    }

    #[test]
    fn single_head_count() {
        let head = HeadParams { weight: Tensor::zeros(&[768, 1]), bias: Tensor::zeros(&[1]) };
        let mut out = Vec::new();
        head.visit("h", &mut out);
        assert_eq!(out.iter().map(|(_, t)| t.numel()).sum::<usize>(), 769);
    }

    #[test]
    fn encoders_are_distinct_and_seeded() {
        let cfg = ModelConfig::preset("desk").unwrap();
        let a = ModelParams::init(&cfg, 5);
        assert_ne!(a.encoders[0], a.encoders[1]);
        assert_eq!(a, ModelParams::init(&cfg, 5));
        assert_ne!(a, ModelParams::init(&cfg, 6));
        assert!(a.is_finite());
        let names: Vec<String> = a.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "encoder0.conv0.weight");
        assert!(names.contains(&"block1.ln2_shift".to_string()));
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn expected_shapes_match_init() {
        let mut cfg = ModelConfig::preset("desk").unwrap();
        cfg.ffn_hidden = 48;
        let p = ModelParams::init(&cfg, 2);
        let actual: Vec<Vec<usize>> = p.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        assert_eq!(ModelParams::expected_shapes(&cfg), actual);
    }

    #[test]
    fn from_tensors_inverts_tensors() {
        let cfg = ModelConfig::preset("desk").unwrap();
        let p = ModelParams::init(&cfg, 9);
        let flat: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(ModelParams::from_tensors(&cfg, flat.clone()).unwrap(), p);
        assert!(ModelParams::from_tensors(&cfg, flat[1..].to_vec()).is_err());
    }

    #[test]
    fn bound_order_matches_tensor_order() {
        let cfg = ModelConfig::preset("desk").unwrap();
        let p = ModelParams::init(&cfg, 1);
        let mut g = Graph::new();
        let vars = p.bind(&mut g).vars();
        let tensors = p.tensors();
        assert_eq!(vars.len(), tensors.len());
        for (v, (_, t)) in vars.iter().zip(&tensors) {
            assert_eq!(g.value(*v), *t);
        }
    }
}
