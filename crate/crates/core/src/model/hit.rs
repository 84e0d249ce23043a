use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::HiTConfig;
use crate::decoder::PointerDecoder;
use crate::encoding::Batch;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Graph, Linear, ParamStore, Real, Tensor, TransformerStack, Var};

/// Per-token contextual vectors and the pooled program vector of one batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[batch·len × seq_model_dim]`
    pub h: Var,
    /// `[batch × seq_model_dim]`, the masked mean of `h`.
    pub v: Var,
    pub mask: Vec<bool>,
    pub batch_size: usize,
    pub max_len: usize,
}

/// Two-layer MLP over the pooled vector.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Head {
    Classifier(Classifier),
    Decoder(PointerDecoder),
}

/// Parameter handles of every HiT component.
#[derive(Clone, Debug)]
pub struct HiTLayers {
    pub node_emb: Embedding,
    pub depth_emb: Embedding,
    pub hier: TransformerStack,
    pub token_emb: Embedding,
    /// `(hier_dim + token_dim) → seq_model_dim`, input rows ordered `P ‖ E`.
    pub fuse: Linear,
    pub pos_emb: Embedding,
    pub seq: TransformerStack,
    pub head: Head,
}

/// Parameter prefixes of the hierarchy pathway.
pub const HIERARCHY_PREFIXES: [&str; 2] = ["hier.", "fuse."];

/// Parameter counts by component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamReport {
    pub total: usize,
    /// Node and depth embeddings, hierarchy encoder and the fusion
    /// projection, which a plain Transformer does not have.
    pub hierarchy: usize,
    pub hierarchy_fraction: f64,
    pub groups: Vec<(String, usize)>,
}

/// A HiT network: hierarchy encoder, sequence encoder and one task head.
#[derive(Clone, Debug)]
pub struct HiTModel<T: Real> {
    pub config: HiTConfig,
    pub params: ParamStore<T>,
    pub layers: HiTLayers,
    ready: bool,
}

impl<T: Real> HiTModel<T> {
    /// Fresh weights drawn from `seed`.
    pub fn new(config: HiTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let r = &mut rng;
        let layers = HiTLayers {
            node_emb: Embedding::new(&mut s, r, "hier.node_emb", c.node_vocab_size, c.hier_dim),
            depth_emb: Embedding::new(&mut s, r, "hier.depth_emb", c.max_path_depth, c.hier_dim),
            hier: TransformerStack::new(&mut s, r, "hier.enc", c.hier_layers, c.hier_dim, c.hier_heads, c.hier_ff_dim),
            token_emb: Embedding::new(&mut s, r, "tok_emb", c.vocab_size, c.token_dim),
            fuse: Linear::new(&mut s, r, "fuse", c.hier_dim + c.token_dim, c.seq_model_dim, true),
            pos_emb: Embedding::new(&mut s, r, "pos_emb", c.max_len, c.seq_model_dim),
            seq: TransformerStack::new(&mut s, r, "seq.enc", c.seq_layers, c.seq_model_dim, c.heads, c.seq_ff_dim),
            head: if c.task.is_generation() {
                Head::Decoder(PointerDecoder::new(&mut s, r, c))
            } else {
                Head::Classifier(Classifier {
                    hidden: Linear::new(&mut s, r, "cls.hidden", c.seq_model_dim, c.seq_model_dim, true),
                    out: Linear::new(&mut s, r, "cls.out", c.seq_model_dim, c.num_categories, true),
                })
            },
        };
        Ok(HiTModel { config, params: s, layers, ready: false })
    }

    /// Whether the weights come from training or a checkpoint.
    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn mark_ready(&mut self) {
        self.ready = true;
    }

    fn require_ready(&self) -> Result<()> {
        if self.ready {
            Ok(())
        } else {
            Err(Error::UnloadedModel)
        }
    }

    pub fn decoder(&self) -> Option<&PointerDecoder> {
        match &self.layers.head {
            Head::Decoder(d) => Some(d),
            Head::Classifier(_) => None,
        }
    }

    pub fn param_report(&self) -> ParamReport {
        let total = self.params.num_values();
        let hierarchy = self.params.count_prefixed(&HIERARCHY_PREFIXES);
        let group_names = ["hier.", "fuse.", "tok_emb", "pos_emb", "seq.", "cls.", "dec."];
        let groups = group_names
            .iter()
            .map(|p| (p.trim_end_matches('.').to_string(), self.params.count_prefixed(&[p])))
            .filter(|(_, n)| *n > 0)
            .collect();
        ParamReport {
            total,
            hierarchy,
            hierarchy_fraction: hierarchy as f64 / total as f64,
            groups,
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let rows = batch.rows();
        let consistent = batch.token_ids.len() == rows
            && batch.token_mask.len() == rows
            && batch.path_lengths.len() == rows
            && batch.path_ids.len() == rows * batch.max_depth
            && batch.path_lengths.iter().all(|&l| l <= batch.max_depth);
        if !consistent {
            return Err(Error::ShapeMismatch("batch tensors disagree with its dimensions".into()));
        }
        if batch.max_len > self.config.max_len {
            return Err(Error::ShapeMismatch(format!(
                "batch length {} exceeds max_len {}",
                batch.max_len, self.config.max_len
            )));
        }
        if batch.max_depth > self.config.max_path_depth {
            return Err(Error::ShapeMismatch(format!(
                "path depth {} exceeds max_path_depth {}",
                batch.max_depth, self.config.max_path_depth
            )));
        }
        Ok(())
    }

    /// Hierarchical embedding `P` `[batch·len × hier_dim]` of every token.
    ///
    /// Each distinct path of the batch goes through the hierarchy encoder
    /// once and is mean-pooled over its real depth. Padding tokens get a
    /// zero row.
    pub fn hierarchy_encode(&self, g: &mut Graph<'_, T>, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        let node_count = self.config.node_vocab_size as u32;
        let mut unique: HashMap<&[u32], usize> = HashMap::new();
        let mut paths: Vec<&[u32]> = Vec::new();
        let mut rows = Vec::with_capacity(batch.rows());
        for row in 0..batch.rows() {
            if !batch.token_mask[row] || batch.path_lengths[row] == 0 {
                rows.push(None);
                continue;
            }
            let path = batch.path(row);
            if let Some(bad) = path.iter().find(|&&n| n >= node_count) {
                return Err(Error::ShapeMismatch(format!("node id {bad} outside vocabulary of {node_count}")));
            }
            let next = paths.len();
            let u = *unique.entry(path).or_insert_with(|| {
                paths.push(path);
                next
            });
            rows.push(Some(u));
        }
        if paths.is_empty() {
            return Ok(g.constant(Tensor::zeros(&[batch.rows(), self.config.hier_dim])));
        }
        let depth = paths.iter().map(|p| p.len()).max().unwrap_or(1);
        let mut ids = vec![0usize; paths.len() * depth];
        let mut mask = vec![false; paths.len() * depth];
        for (u, path) in paths.iter().enumerate() {
            for (j, &n) in path.iter().enumerate() {
                ids[u * depth + j] = n as usize;
                mask[u * depth + j] = true;
            }
        }
        let depths: Vec<usize> = (0..paths.len() * depth).map(|i| i % depth).collect();
        let l = &self.layers;
        let nodes = l.node_emb.forward(g, &ids)?;
        let pos = l.depth_emb.forward(g, &depths)?;
        let x = g.add(nodes, pos)?;
        let x = g.dropout(x, self.config.dropout);
        let h = l.hier.forward(g, x, &mask, paths.len(), self.config.dropout)?;
        let pooled = g.masked_mean_pool(h, &mask, paths.len())?;
        let p = g.gather_rows(pooled, rows)?;
        g.check(p, "hierarchy encoder")?;
        Ok(p)
    }

    /// Concatenates `P ‖ E`, projects, adds positions and runs the
    /// sequence encoder.
    pub fn fuse_and_encode(&self, g: &mut Graph<'_, T>, p: Var, batch: &Batch) -> Result<EncoderOutput> {
        self.check_batch(batch)?;
        if g.shape(p) != [batch.rows(), self.config.hier_dim] {
            return Err(Error::ShapeMismatch(format!(
                "hierarchy input {:?}, expected [{}, {}]",
                g.shape(p),
                batch.rows(),
                self.config.hier_dim
            )));
        }
        let l = &self.layers;
        let ids: Vec<usize> = batch.token_ids.iter().map(|&t| t as usize).collect();
        let e = l.token_emb.forward(g, &ids)?;
        let x = g.concat_cols(p, e)?;
        let x = l.fuse.forward(g, x)?;
        let positions: Vec<usize> = (0..batch.rows()).map(|r| r % batch.max_len).collect();
        let pos = l.pos_emb.forward(g, &positions)?;
        let x = g.add(x, pos)?;
        let x = g.dropout(x, self.config.dropout);
        let h = l.seq.forward(g, x, &batch.token_mask, batch.batch_size, self.config.dropout)?;
        g.check(h, "sequence encoder")?;
        let v = g.masked_mean_pool(h, &batch.token_mask, batch.batch_size)?;
        Ok(EncoderOutput {
            h,
            v,
            mask: batch.token_mask.clone(),
            batch_size: batch.batch_size,
            max_len: batch.max_len,
        })
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, batch: &Batch) -> Result<EncoderOutput> {
        let p = self.hierarchy_encode(g, batch)?;
        self.fuse_and_encode(g, p, batch)
    }

    /// Category probabilities `[batch × num_categories]` from pooled `v`.
    pub fn classify(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Var> {
        let Head::Classifier(cls) = &self.layers.head else {
            return Err(Error::InvalidConfig("model has no classification head".into()));
        };
        let h = cls.hidden.forward(g, v)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.config.dropout);
        let logits = cls.out.forward(g, h)?;
        g.softmax(logits, None)
    }

    /// Inference-time category distributions, one row per example.
    pub fn predict_probs(&self, batch: &Batch) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::frozen(&self.params);
        let enc = self.encode(&mut g, batch)?;
        let probs = self.classify(&mut g, enc.v)?;
        let t = g.value(probs);
        Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
    }

    /// Contextual token vectors `H` of a batch, computed without gradients.
    pub fn token_features(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut g = Graph::frozen(&self.params);
        let enc = self.encode(&mut g, batch)?;
        Ok(g.value(enc.h).clone())
    }

    /// L2-normalised pooled vectors, one per example.
    pub fn embed_for_retrieval(&self, batch: &Batch) -> Result<Vec<Vec<T>>> {
        self.require_ready()?;
        let mut g = Graph::frozen(&self.params);
        let enc = self.encode(&mut g, batch)?;
        let v = g.value(enc.v);
        Ok((0..v.rows()).map(|r| unit(v.row(r))).collect())
    }
}

/// `x / ‖x‖₂`; the zero vector stays zero.
pub fn unit<T: Real>(x: &[T]) -> Vec<T> {
    let norm = x.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if norm == T::zero() {
        return x.to_vec();
    }
    x.iter().map(|v| *v / norm).collect()
}
