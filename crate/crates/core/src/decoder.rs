//! Transformer decoder with a pointer/copy distribution for method names.
//!
//! At step `t` the decoder state `s_t` attends over the encoder output `H`:
//!
//! ```text
//! e_i  = w3ᵀ tanh(W1 H_i + W2 s_t + b)        a = softmax(e)   h* = Σ a_i H_i
//! P(w) = (1 − p_copy) P_v(w) + p_copy Σ_{i: w_i = w} a_i
//! P_v  = softmax(W4 h* + b1)                   p_copy = σ(W5 h* + b2)
//! ```
//!
//! `P` lives on the extended vocabulary: target subtokens followed by the
//! per-example out-of-vocabulary source tokens of the [`CopyMap`].

use rand::Rng;

use crate::encoding::{Batch, CopyMap, Targets, Vocabulary, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::model::{EncoderOutput, HiTConfig, HiTModel};
use crate::nn::{DecoderBlock, Embedding, Graph, LayerNorm, Linear, ParamStore, Real, Tensor, Var};

/// Floor inside the log of the generation loss.
pub const LOG_FLOOR: f64 = 1e-9;

/// Encoder output seen by the decoder.
#[derive(Clone, Copy, Debug)]
pub struct Memory<'a> {
    /// `[seqs·len × dim]`
    pub h: Var,
    /// `[seqs·len]`
    pub mask: &'a [bool],
    pub seqs: usize,
    pub len: usize,
}

impl<'a> Memory<'a> {
    pub fn of(enc: &'a EncoderOutput) -> Self {
        Memory { h: enc.h, mask: &enc.mask, seqs: enc.batch_size, len: enc.max_len }
    }
}

#[derive(Clone, Debug)]
pub struct PointerDecoder {
    pub target_emb: Embedding,
    pub pos_emb: Embedding,
    pub blocks: Vec<DecoderBlock>,
    pub norm: LayerNorm,
    /// `W1`, applied to encoder rows.
    pub w_memory: Linear,
    /// `W2` and `b`, applied to the decoder state.
    pub w_state: Linear,
    /// `w3`
    pub w_score: Linear,
    /// `W4`, `b1`
    pub vocab_out: Linear,
    /// `W5`, `b2`
    pub copy_gate: Linear,
    pub target_vocab_size: usize,
    pub max_steps: usize,
    pub dropout: f64,
}

impl PointerDecoder {
    pub fn new<T: Real, R: Rng>(s: &mut ParamStore<T>, r: &mut R, c: &HiTConfig) -> Self {
        let d = c.seq_model_dim;
        PointerDecoder {
            target_emb: Embedding::new(s, r, "dec.tgt_emb", c.target_vocab_size, d),
            pos_emb: Embedding::new(s, r, "dec.pos_emb", c.max_target_len + 1, d),
            blocks: (0..c.dec_layers)
                .map(|i| DecoderBlock::new(s, r, &format!("dec.block{i}"), d, c.heads, c.seq_ff_dim))
                .collect(),
            norm: LayerNorm::new(s, r, "dec.ln_out", d),
            w_memory: Linear::new(s, r, "dec.ptr.w1", d, d, false),
            w_state: Linear::new(s, r, "dec.ptr.w2", d, d, true),
            w_score: Linear::new(s, r, "dec.ptr.w3", d, 1, false),
            vocab_out: Linear::new(s, r, "dec.gen.w4", d, c.target_vocab_size, true),
            copy_gate: Linear::new(s, r, "dec.copy.w5", d, 1, true),
            target_vocab_size: c.target_vocab_size,
            max_steps: c.max_target_len + 1,
            dropout: c.dropout,
        }
    }

    /// Decoder outputs `s` `[seqs·steps × dim]` for the input prefixes
    /// `inputs` `[seqs × steps]` (extended ids; copied ids embed as UNK).
    pub fn states<T: Real>(&self, g: &mut Graph<'_, T>, mem: Memory<'_>, inputs: &[u32], steps: usize) -> Result<Var> {
        if steps == 0 || inputs.len() != mem.seqs * steps || steps > self.max_steps {
            return Err(Error::ShapeMismatch(format!(
                "{} decoder inputs for {} sequences of {steps} steps (limit {})",
                inputs.len(),
                mem.seqs,
                self.max_steps
            )));
        }
        let ids: Vec<usize> = inputs
            .iter()
            .map(|&w| if (w as usize) < self.target_vocab_size { w as usize } else { UNK as usize })
            .collect();
        let positions: Vec<usize> = (0..ids.len()).map(|i| i % steps).collect();
        let y = self.target_emb.forward(g, &ids)?;
        let pos = self.pos_emb.forward(g, &positions)?;
        let mut y = g.add(y, pos)?;
        y = g.dropout(y, self.dropout);
        for block in &self.blocks {
            y = block.forward(g, y, steps, mem.h, mem.len, mem.mask, mem.seqs, self.dropout)?;
        }
        let s = self.norm.forward(g, y)?;
        g.check(s, "decoder")?;
        Ok(s)
    }

    /// Pointer attention of every state over the memory. Returns
    /// `a` `[seqs·steps × len]` and `h*` `[seqs·steps × dim]`.
    pub fn attend<T: Real>(&self, g: &mut Graph<'_, T>, mem: Memory<'_>, s: Var, steps: usize) -> Result<(Var, Var)> {
        let d = g.value(mem.h).cols();
        if g.shape(mem.h) != [mem.seqs * mem.len, d] || g.shape(s) != [mem.seqs * steps, d] || mem.mask.len() != mem.seqs * mem.len {
            return Err(Error::ShapeMismatch(format!(
                "pointer attention over {:?} from {:?}",
                g.shape(mem.h),
                g.shape(s)
            )));
        }
        let keys = self.w_memory.forward(g, mem.h)?;
        let query = self.w_state.forward(g, s)?;
        let joint = g.pair_add(keys, query, mem.seqs)?;
        let joint = g.tanh(joint);
        let scores = self.w_score.forward(g, joint)?;
        let scores = g.reshape(scores, &[mem.seqs * steps, mem.len])?;
        let mask: Vec<bool> = (0..mem.seqs * steps)
            .flat_map(|row| {
                let b = row / steps;
                mem.mask[b * mem.len..(b + 1) * mem.len].iter().copied()
            })
            .collect();
        let a = g.softmax(scores, Some(&mask))?;
        let h_star = g.batch_matmul(a, mem.h, mem.seqs, steps, mem.len, d)?;
        Ok((a, h_star))
    }

    /// Extended-vocabulary distribution `[seqs·steps × width]`.
    pub fn mix_distribution<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        h_star: Var,
        a: Var,
        copy_maps: &[CopyMap],
        steps: usize,
        width: usize,
    ) -> Result<Var> {
        let logits = self.vocab_out.forward(g, h_star)?;
        let p_vocab = g.softmax(logits, None)?;
        let gate = self.copy_gate.forward(g, h_star)?;
        let p_copy = g.sigmoid(gate);
        mix_with_gate(g, p_vocab, a, p_copy, copy_maps, steps, width)
    }

    /// Teacher-forced distributions for the targets of `batch`.
    pub fn teacher_forced<T: Real>(&self, g: &mut Graph<'_, T>, enc: &EncoderOutput, batch: &Batch) -> Result<Var> {
        let Targets::Sequences { ids, max_len, .. } = &batch.targets else {
            return Err(Error::EmptyTarget);
        };
        let steps = *max_len;
        let mut inputs = Vec::with_capacity(ids.len());
        for row in ids.chunks(steps.max(1)) {
            inputs.push(BOS);
            inputs.extend_from_slice(&row[..steps.saturating_sub(1)]);
        }
        let mem = Memory::of(enc);
        let s = self.states(g, mem, &inputs, steps)?;
        let (a, h_star) = self.attend(g, mem, s, steps)?;
        let width = batch.extended_width(self.target_vocab_size);
        self.mix_distribution(g, h_star, a, &batch.copy_maps, steps, width)
    }
}

/// `P = (1 − p_copy)·pad(P_v) + p_copy·scatter(a)` for explicit gates.
///
/// `p_vocab` is `[rows × V]`, `a` is `[rows × len]`, `p_copy` has one
/// entry per row, and row `r` belongs to example `r / steps`.
pub fn mix_with_gate<T: Real>(
    g: &mut Graph<'_, T>,
    p_vocab: Var,
    a: Var,
    p_copy: Var,
    copy_maps: &[CopyMap],
    steps: usize,
    width: usize,
) -> Result<Var> {
    let rows = g.value(a).rows();
    let len = g.value(a).cols();
    if steps == 0 || copy_maps.len() * steps != rows || g.value(p_vocab).rows() != rows || g.value(p_copy).len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "mixture of {:?} and {:?} with {} copy maps",
            g.shape(p_vocab),
            g.shape(a),
            copy_maps.len()
        )));
    }
    let map: Vec<usize> = (0..rows * len)
        .map(|k| {
            let (row, i) = (k / len, k % len);
            copy_maps[row / steps].ids.get(i).map_or(0, |&id| id as usize)
        })
        .collect();
    let copied = g.scatter_cols(a, map, width)?;
    let copied = g.scale_rows(copied, p_copy)?;
    let p_gen = g.affine(p_copy, -1.0, 1.0);
    let generated = g.pad_cols(p_vocab, width)?;
    let generated = g.scale_rows(generated, p_gen)?;
    g.add(generated, copied)
}

/// `(1/B) Σ_b (1/T_b) Σ_t −ln max(P_bt(w_bt), ε)`.
///
/// `probs` is `[B·steps × width]`, `targets` `[B × steps]`, and only the
/// first `lengths[b]` steps of each example count.
pub fn generation_loss<T: Real>(g: &mut Graph<'_, T>, probs: Var, targets: &[u32], lengths: &[usize], steps: usize) -> Result<Var> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::EmptyTarget);
    }
    let b = lengths.len();
    if targets.len() != b * steps || lengths.iter().any(|&l| l > steps) {
        return Err(Error::ShapeMismatch(format!("{} targets for {b} x {steps}", targets.len())));
    }
    let idx = targets.iter().map(|&t| t as usize).collect();
    let picked = g.pick(probs, idx)?;
    let logs = g.log_floor(picked, LOG_FLOOR);
    let weights = (0..b * steps)
        .map(|k| {
            let (row, t) = (k / steps, k % steps);
            if t < lengths[row] {
                T::of(-1.0 / (lengths[row] as f64 * b as f64))
            } else {
                T::zero()
            }
        })
        .collect();
    g.weighted_sum(logs, weights)
}

/// Greedy (`beam == 1`) or beam-search decoding of every example of
/// `batch`. Extended ids resolve through the example's copy map.
pub fn decode<T: Real>(
    model: &HiTModel<T>,
    batch: &Batch,
    target_vocab: &Vocabulary,
    max_steps: usize,
    beam: usize,
) -> Result<Vec<Vec<String>>> {
    if !model.is_ready() {
        return Err(Error::UnloadedModel);
    }
    let dec = model
        .decoder()
        .ok_or_else(|| Error::InvalidConfig("model has no decoder".into()))?;
    if batch.copy_maps.len() != batch.batch_size {
        return Err(Error::ShapeMismatch("decoding needs one copy map per example".into()));
    }
    let beam = beam.max(1);
    let max_steps = max_steps.min(dec.max_steps);
    let memory = model.token_features(batch)?;
    let l = batch.max_len;
    let d = memory.cols();
    let mut out = Vec::with_capacity(batch.batch_size);
    for b in 0..batch.batch_size {
        let h = Tensor { shape: vec![l, d], data: memory.data[b * l * d..(b + 1) * l * d].to_vec() };
        let mask = &batch.token_mask[b * l..(b + 1) * l];
        let map = &batch.copy_maps[b];
        let width = target_vocab.len().max(dec.target_vocab_size) + map.extended_len();
        let next = |prefix: &[u32]| -> Result<Vec<T>> {
            let mut g = Graph::frozen(&model.params);
            let hv = g.constant(h.clone());
            let mem = Memory { h: hv, mask, seqs: 1, len: l };
            let mut inputs = vec![BOS];
            inputs.extend_from_slice(prefix);
            let steps = inputs.len();
            let s = dec.states(&mut g, mem, &inputs, steps)?;
            let (a, h_star) = dec.attend(&mut g, mem, s, steps)?;
            let p = dec.mix_distribution(&mut g, h_star, a, std::slice::from_ref(map), steps, width)?;
            Ok(g.value(p).row(steps - 1).to_vec())
        };
        let ids = beam_search(next, max_steps, beam)?;
        out.push(
            ids.iter()
                .map(|&id| map.resolve(id, target_vocab).unwrap_or("<unk>").to_string())
                .collect(),
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct Hypothesis {
    ids: Vec<u32>,
    score: f64,
    done: bool,
}

/// Plain beam search without length normalisation. Returned ids exclude
/// the final EOS.
fn beam_search<T: Real>(mut next: impl FnMut(&[u32]) -> Result<Vec<T>>, max_steps: usize, beam: usize) -> Result<Vec<u32>> {
    let mut beams = vec![Hypothesis { ids: Vec::new(), score: 0.0, done: false }];
    for _ in 0..max_steps {
        if beams.iter().all(|h| h.done) {
            break;
        }
        let mut candidates = Vec::new();
        for hyp in &beams {
            if hyp.done {
                candidates.push(hyp.clone());
                continue;
            }
            let probs = next(&hyp.ids)?;
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&x, &y| probs[y].partial_cmp(&probs[x]).unwrap_or(std::cmp::Ordering::Equal));
            for &w in order.iter().take(beam) {
                let p = probs[w].to_f64().unwrap_or(0.0).max(LOG_FLOOR);
                let mut ids = hyp.ids.clone();
                ids.push(w as u32);
                candidates.push(Hypothesis { ids, score: hyp.score + p.ln(), done: w as u32 == EOS });
            }
        }
        candidates.sort_by(|x, y| y.score.partial_cmp(&x.score).unwrap_or(std::cmp::Ordering::Equal));
        candidates.truncate(beam);
        beams = candidates;
    }
    let mut best = beams.into_iter().next().map(|h| h.ids).unwrap_or_default();
    if best.last() == Some(&EOS) {
        best.pop();
    }
    Ok(best)
}
