//! Parameterised building blocks over a [`Graph`].
//!
//! Every layer only stores [`ParamId`]s; values live in the [`ParamStore`]
//! so one set of layers serves any number of graphs.

use rand::Rng;

use super::graph::{AttentionSpec, Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

/// `x · W + b` with `W` stored as `[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.init(format!("{name}.w"), &[in_dim, out_dim], Init::Xavier, rng);
        let bias = bias.then(|| store.init(format!("{name}.b"), &[out_dim], Init::Zeros, rng));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.init(format!("{name}.gamma"), &[dim], Init::Ones, rng),
            beta: store.init(format!("{name}.beta"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Lookup table `[count × dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, count: usize, dim: usize) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let table = store.init(name.to_string(), &[count, dim], Init::Normal(std), rng);
        Embedding { table, count, dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden, true),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim, true),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        let h = g.dropout(h, dropout);
        self.down.forward(g, h)
    }
}

/// Query, key, value and output projections around [`Graph::attention`].
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "{dim} is not divisible by {heads} heads");
        let lin = |store: &mut ParamStore<T>, rng: &mut R, part: &str| {
            Linear::new(store, rng, &format!("{name}.{part}"), dim, dim, true)
        };
        MultiHeadAttention {
            query: lin(store, rng, "q"),
            key: lin(store, rng, "k"),
            value: lin(store, rng, "v"),
            output: lin(store, rng, "o"),
            heads,
        }
    }

    /// Attention of `queries` over `memory`; `spec.heads` is overwritten.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, queries: Var, memory: Var, mut spec: AttentionSpec) -> Result<Var> {
        spec.heads = self.heads;
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        let a = g.attention(q, k, v, spec)?;
        self.output.forward(g, a)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
    pub model_dim: usize,
}

impl EncoderBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        EncoderBlock {
            norm_attn: LayerNorm::new(store, rng, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads),
            norm_ff: LayerNorm::new(store, rng, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, ff_dim),
            model_dim: dim,
        }
    }

    /// `x` is `[seqs·len × dim]`; `mask` marks real positions.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        seqs: usize,
        len: usize,
        mask: Option<&[bool]>,
        dropout: f64,
    ) -> Result<Var> {
        let spec = AttentionSpec {
            seqs,
            q_len: len,
            k_len: len,
            heads: 0,
            key_mask: mask.map(<[bool]>::to_vec),
            causal: false,
        };
        let h = self.norm_attn.forward(g, x)?;
        let h = self.attn.forward(g, h, h, spec)?;
        let h = g.dropout(h, dropout);
        let x = g.add(x, h)?;
        let h = self.norm_ff.forward(g, x)?;
        let h = self.ff.forward(g, h, dropout)?;
        let h = g.dropout(h, dropout);
        g.add(x, h)
    }
}

/// Pre-norm block with causal self-attention and cross-attention to an
/// encoder memory.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        DecoderBlock {
            norm_self: LayerNorm::new(store, rng, &format!("{name}.ln1"), dim),
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self"), dim, heads),
            norm_cross: LayerNorm::new(store, rng, &format!("{name}.ln2"), dim),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross"), dim, heads),
            norm_ff: LayerNorm::new(store, rng, &format!("{name}.ln3"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, ff_dim),
        }
    }

    /// `y` is `[seqs·steps × dim]`, `memory` is `[seqs·src_len × dim]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        y: Var,
        steps: usize,
        memory: Var,
        src_len: usize,
        memory_mask: &[bool],
        seqs: usize,
        dropout: f64,
    ) -> Result<Var> {
        let causal = AttentionSpec { seqs, q_len: steps, k_len: steps, heads: 0, key_mask: None, causal: true };
        let h = self.norm_self.forward(g, y)?;
        let h = self.self_attn.forward(g, h, h, causal)?;
        let h = g.dropout(h, dropout);
        let y = g.add(y, h)?;

        let cross = AttentionSpec {
            seqs,
            q_len: steps,
            k_len: src_len,
            heads: 0,
            key_mask: Some(memory_mask.to_vec()),
            causal: false,
        };
        let h = self.norm_cross.forward(g, y)?;
        let h = self.cross_attn.forward(g, h, memory, cross)?;
        let h = g.dropout(h, dropout);
        let y = g.add(y, h)?;

        let h = self.norm_ff.forward(g, y)?;
        let h = self.ff.forward(g, h, dropout)?;
        let h = g.dropout(h, dropout);
        g.add(y, h)
    }
}

/// Runs `layers` in order over `x [seqs·len × dim]`.
///
/// Padded positions are excluded as attention keys. Their outputs are
/// defined but meaningless.
pub fn self_attention_encode<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    mask: &[bool],
    seqs: usize,
    layers: &[EncoderBlock],
    dropout: f64,
) -> Result<Var> {
    let rows = g.value(x).rows();
    if seqs == 0 || mask.len() != rows || !rows.is_multiple_of(seqs) {
        return Err(Error::ShapeMismatch(format!(
            "encoder input {:?} with mask of {} over {seqs} sequences",
            g.shape(x),
            mask.len()
        )));
    }
    if let Some(block) = layers.first() {
        if g.value(x).cols() != block.model_dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects width {}, got {:?}",
                block.model_dim,
                g.shape(x)
            )));
        }
    }
    let len = rows / seqs;
    let mut h = x;
    for (i, block) in layers.iter().enumerate() {
        h = block.forward(g, h, seqs, len, Some(mask), dropout)?;
        g.check(h, &format!("encoder block {i}"))?;
    }
    Ok(h)
}

/// Encoder blocks followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
}

impl TransformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        TransformerStack {
            blocks: (0..layers)
                .map(|i| EncoderBlock::new(store, rng, &format!("{name}.block{i}"), dim, heads, ff_dim))
                .collect(),
            norm: LayerNorm::new(store, rng, &format!("{name}.ln_out"), dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool], seqs: usize, dropout: f64) -> Result<Var> {
        let h = self_attention_encode(g, x, mask, seqs, &self.blocks, dropout)?;
        self.norm.forward(g, h)
    }
}
