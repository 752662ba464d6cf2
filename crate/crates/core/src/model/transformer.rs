use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoding::positional_encoding;
use super::params::{initialize, Init, ModelConfig, ModelParams, ParamSpec};
use super::ModelError;
use crate::numerics::{Graph, Tensor, Var, DEFAULT_LAYER_NORM_EPS};

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross_attn: Attention,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: Linear,
    tgt_embed: Linear,
    start: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out: Linear,
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{prefix}.w"), vec![fan_in, fan_out], Init::Xavier { fan_in, fan_out }),
            b: self.push(format!("{prefix}.b"), vec![fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.push(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.push(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn feed_forward(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            inner: self.linear(&format!("{prefix}.ff1"), d, d_ff),
            outer: self.linear(&format!("{prefix}.ff2"), d_ff, d),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let d = cfg.d_model;
    let mut b = SpecBuilder { specs: Vec::new() };
    let src_embed = b.linear("src_embed", cfg.feature_dim, d);
    let tgt_embed = b.linear("tgt_embed", 2, d);
    let start = b.push("start_token".into(), vec![1, 2], Init::Xavier { fan_in: 1, fan_out: 2 });
    let encoder = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("encoder.{i}");
            EncoderLayer {
                attn: b.attention(&format!("{p}.self_attn"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                ff: b.feed_forward(&p, d, cfg.d_ff),
                norm2: b.norm(&format!("{p}.norm2"), d),
            }
        })
        .collect();
    let decoder = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("decoder.{i}");
            DecoderLayer {
                self_attn: b.attention(&format!("{p}.self_attn"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                norm2: b.norm(&format!("{p}.norm2"), d),
                ff: b.feed_forward(&p, d, cfg.d_ff),
                norm3: b.norm(&format!("{p}.norm3"), d),
            }
        })
        .collect();
    let out = b.linear("out", d, 2);
    let layout = Layout {
        src_embed,
        tgt_embed,
        start,
        encoder,
        decoder,
        out,
    };
    (layout, b.specs)
}

/// Lower-triangular mask: query `i` may attend to keys `0..=i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|idx| idx % len <= idx / len).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionStage {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

/// Post-softmax weight matrix (`len_q × len_k`) of one head.
#[derive(Debug, Clone, Copy)]
pub struct AttentionRecord {
    pub stage: AttentionStage,
    pub layer: usize,
    pub head: usize,
    pub weights: Var,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    layout: Layout,
    params: ModelParams,
}

impl Transformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let params = initialize(&specs, seed)?;
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from stored weights; names and shapes must match the config.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (i, spec) in specs.iter().enumerate() {
            if params.name(i) != spec.name || params.get(i).shape() != spec.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {i}: expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    params.name(i),
                    params.get(i).shape()
                )));
            }
        }
        if !params.is_finite() {
            return Err(ModelError::Checkpoint("non-finite parameter values".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Inference pass (dropout disabled).
    pub fn forward(&self) -> Forward<'_> {
        Forward::new(self, None)
    }

    /// Training pass; dropout masks are drawn from `seed`.
    pub fn forward_train(&self, seed: u64) -> Forward<'_> {
        let dropout = (self.config.dropout > 0.0).then(|| (self.config.dropout, ChaCha8Rng::seed_from_u64(seed)));
        Forward::new(self, dropout)
    }

    /// Emits `kappa` offsets (model space) by feeding each prediction back
    /// into the decoder.
    pub fn predict_autoregressive(&self, features: &Tensor, kappa: usize) -> Result<Vec<[f64; 2]>, ModelError> {
        if kappa == 0 {
            return Err(ModelError::Config("kappa must be >= 1".into()));
        }
        let mut fwd = self.forward();
        let memory = fwd.encode(features)?;
        fwd.check_finite(memory, "encoding")?;
        let mut emitted: Vec<[f64; 2]> = Vec::with_capacity(kappa);
        for step in 0..kappa {
            let embedded = fwd.embed_target(&emitted)?;
            let decoded = fwd.decode(embedded, memory)?;
            let out = fwd.project(decoded)?;
            let row = fwd.graph.value(out).row(step);
            let next = [row[0], row[1]];
            if !next[0].is_finite() || !next[1].is_finite() {
                return Err(ModelError::Divergence(format!("autoregressive step {step}")));
            }
            emitted.push(next);
        }
        Ok(emitted)
    }
}

/// One recorded forward pass. Parameters are bound to graph leaves on first use.
pub struct Forward<'m> {
    pub graph: Graph,
    model: &'m Transformer,
    bound: Vec<Option<Var>>,
    attention: Vec<AttentionRecord>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'m> Forward<'m> {
    fn new(model: &'m Transformer, dropout: Option<(f64, ChaCha8Rng)>) -> Self {
        Self {
            graph: Graph::new(),
            model,
            bound: vec![None; model.params.len()],
            attention: Vec::new(),
            dropout,
        }
    }

    pub fn model(&self) -> &'m Transformer {
        self.model
    }

    /// Graph leaf of parameter `i`, if this pass used it.
    pub fn param_var(&self, i: usize) -> Option<Var> {
        self.bound[i]
    }

    pub fn attention(&self) -> &[AttentionRecord] {
        &self.attention
    }

    fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.bound[i] {
            return v;
        }
        let v = self.graph.leaf_shared(self.model.params.shared(i));
        self.bound[i] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, l: Linear) -> Result<Var, ModelError> {
        let w = self.param(l.w);
        let b = self.param(l.b);
        Ok(self.graph.affine(x, w, b)?)
    }

    fn norm(&mut self, x: Var, n: Norm) -> Result<Var, ModelError> {
        let gain = self.param(n.gain);
        let bias = self.param(n.bias);
        Ok(self.graph.layer_norm(x, gain, bias, DEFAULT_LAYER_NORM_EPS)?)
    }

    fn dropout(&mut self, x: Var) -> Result<Var, ModelError> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - *p);
        let shape = self.graph.value(x).shape().to_vec();
        let n = self.graph.value(x).len();
        let p = *p;
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let m = self.graph.leaf(Tensor::new(shape, mask)?);
        Ok(self.graph.mul(x, m)?)
    }

    fn add_positions(&mut self, x: Var) -> Result<Var, ModelError> {
        let len = self.graph.value(x).rows();
        let pe = self.graph.leaf(positional_encoding(len, self.model.config.d_model)?);
        Ok(self.graph.add(x, pe)?)
    }

    pub(crate) fn check_finite(&self, v: Var, what: &str) -> Result<(), ModelError> {
        if self.graph.value(v).is_finite() {
            Ok(())
        } else {
            Err(ModelError::Divergence(what.to_string()))
        }
    }

    /// Affine feature embedding plus positional encoding (`steps × d_model`).
    pub fn embed_source(&mut self, features: &Tensor) -> Result<Var, ModelError> {
        let expected = self.model.config.feature_dim;
        if features.shape().len() != 2 || features.cols() != expected {
            return Err(ModelError::Dimension {
                expected,
                got: features.shape().last().copied().unwrap_or(0),
            });
        }
        if features.rows() == 0 {
            return Err(ModelError::Config("empty feature sequence".into()));
        }
        let x = self.graph.leaf(features.clone());
        let embedded = self.linear(x, self.model.layout.src_embed)?;
        self.add_positions(embedded)
    }

    /// Embeds `[start, prev...]` so output row `i` predicts offset `i + 1`.
    pub fn embed_target(&mut self, prev: &[[f64; 2]]) -> Result<Var, ModelError> {
        let start = self.param(self.model.layout.start);
        let tokens = if prev.is_empty() {
            start
        } else {
            let rest = self.graph.leaf(Tensor::from_rows(prev)?);
            self.graph.concat_rows(&[start, rest])?
        };
        let embedded = self.linear(tokens, self.model.layout.tgt_embed)?;
        self.add_positions(embedded)
    }

    fn multi_head_attention(
        &mut self,
        stage: AttentionStage,
        layer: usize,
        att: Attention,
        queries: Var,
        keys: Var,
        values: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, ModelError> {
        let cfg = self.model.config;
        let dk = cfg.d_k();
        let q = self.linear(queries, att.q)?;
        let k = self.linear(keys, att.k)?;
        let v = self.linear(values, att.v)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let (lo, hi) = (head * dk, (head + 1) * dk);
            let (qh, kh, vh) = if cfg.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    self.graph.slice_cols(q, lo, hi)?,
                    self.graph.slice_cols(k, lo, hi)?,
                    self.graph.slice_cols(v, lo, hi)?,
                )
            };
            let raw = self.graph.matmul_nt(qh, kh)?;
            let scores = self.graph.scale(raw, scale);
            let weights = self.graph.softmax_masked(scores, 1, mask)?;
            self.attention.push(AttentionRecord {
                stage,
                layer,
                head,
                weights,
            });
            heads.push(self.graph.matmul(weights, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            self.graph.concat_cols(&heads)?
        };
        self.linear(joined, att.o)
    }

    fn feed_forward(&mut self, x: Var, ff: FeedForward) -> Result<Var, ModelError> {
        let h = self.linear(x, ff.inner)?;
        let h = self.graph.relu(h);
        self.linear(h, ff.outer)
    }

    fn residual_norm(&mut self, x: Var, sub: Var, n: Norm) -> Result<Var, ModelError> {
        let sub = self.dropout(sub)?;
        let sum = self.graph.add(x, sub)?;
        self.norm(sum, n)
    }

    /// Encoder stack over an embedded source sequence.
    pub fn encoder_forward(&mut self, embedded: Var) -> Result<Var, ModelError> {
        let model = self.model;
        let mut x = embedded;
        for (i, layer) in model.layout.encoder.iter().enumerate() {
            let a = self.multi_head_attention(AttentionStage::EncoderSelf, i, layer.attn, x, x, x, None)?;
            x = self.residual_norm(x, a, layer.norm1)?;
            let f = self.feed_forward(x, layer.ff)?;
            x = self.residual_norm(x, f, layer.norm2)?;
        }
        Ok(x)
    }

    pub fn encode(&mut self, features: &Tensor) -> Result<Var, ModelError> {
        let embedded = self.embed_source(features)?;
        self.encoder_forward(embedded)
    }

    /// Decoder stack with causal self-attention and cross-attention over `memory`.
    pub fn decode(&mut self, target_embedded: Var, memory: Var) -> Result<Var, ModelError> {
        let model = self.model;
        let len = self.graph.value(target_embedded).rows();
        if len == 0 {
            return Err(ModelError::Config("empty decoder input".into()));
        }
        let mask = causal_mask(len);
        let mut x = target_embedded;
        for (i, layer) in model.layout.decoder.iter().enumerate() {
            let a = self.multi_head_attention(AttentionStage::DecoderSelf, i, layer.self_attn, x, x, x, Some(&mask))?;
            x = self.residual_norm(x, a, layer.norm1)?;
            let c = self.multi_head_attention(AttentionStage::DecoderCross, i, layer.cross_attn, x, memory, memory, None)?;
            x = self.residual_norm(x, c, layer.norm2)?;
            let f = self.feed_forward(x, layer.ff)?;
            x = self.residual_norm(x, f, layer.norm3)?;
        }
        Ok(x)
    }

    /// Per-step affine map `d_model → 2`.
    pub fn project(&mut self, decoded: Var) -> Result<Var, ModelError> {
        self.linear(decoded, self.model.layout.out)
    }

    /// Teacher-forced predictions (`κ × 2`) for target offsets `o_1..o_κ`.
    pub fn teacher_forced(&mut self, features: &Tensor, targets: &[[f64; 2]]) -> Result<Var, ModelError> {
        if targets.is_empty() {
            return Err(ModelError::Config("empty target sequence".into()));
        }
        let memory = self.encode(features)?;
        let embedded = self.embed_target(&targets[..targets.len() - 1])?;
        let decoded = self.decode(embedded, memory)?;
        self.project(decoded)
    }

    /// Gradient of `seed` with respect to every parameter, in parameter order.
    pub fn param_gradients(&self, seed: Var) -> Result<Vec<Tensor>, ModelError> {
        let grads = self.graph.backward(seed)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) => grads.get(*v),
                None => Tensor::zeros(self.model.params.get(i).shape()),
            })
            .collect())
    }
}
