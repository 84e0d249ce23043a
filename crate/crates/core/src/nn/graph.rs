//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! copied in from a [`ParamStore`] on first use, so the store stays
//! immutable while the graph is alive. [`Graph::backward`] then walks the
//! tape in reverse and returns one gradient per parameter that was touched.
//!
//! Operations treat the last axis of a tensor as columns and fold every
//! other axis into rows.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::real::{gemm, Mat, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4;
const LN_EPS: f64 = 1e-5;

/// Layout of a batched multi-head attention call.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    /// Number of independent sequences.
    pub seqs: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    /// `[seqs × k_len]`, `true` for keys that may be attended to.
    pub key_mask: Option<Vec<bool>>,
    /// Query `i` only sees keys `j <= i`.
    pub causal: bool,
}

impl AttentionSpec {
    fn allowed(&self, s: usize, i: usize, j: usize) -> bool {
        let key_ok = self.key_mask.as_ref().is_none_or(|m| m[s * self.k_len + j]);
        key_ok && !(self.causal && j > i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, batches: usize, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Affine { x: Var, scale: T },
    Unary(Var, Unary),
    LogFloor { x: Var, eps: T },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, idx: Vec<Option<usize>> },
    ConcatCols(Var, Var),
    MeanPool { x: Var, mask: Vec<bool>, counts: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Vec<T> },
    PairAdd { a: Var, s: Var, batches: usize },
    ScatterCols { x: Var, map: Vec<usize> },
    PadCols(Var),
    Pick { x: Var, idx: Vec<usize> },
    WeightedSum { x: Var, w: Vec<T> },
    RowDot(Var, Var),
    Reshape(Var),
    Dropout { x: Var, mask: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> T {
        self.iter()
            .flat_map(|(_, g)| g.data.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            g.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Recorded forward computation.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    track_params: bool,
    dropout_rng: Option<ChaCha8Rng>,
    checked: bool,
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

impl<'p, T: Real> Graph<'p, T> {
    /// Evaluation-mode graph: dropout off, parameter gradients recorded.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            track_params: true,
            dropout_rng: None,
            checked: false,
        }
    }

    /// Training-mode graph with dropout driven by `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new(params)
        }
    }

    /// Parameters enter as constants; nothing receives a gradient.
    pub fn frozen(params: &'p ParamStore<T>) -> Self {
        Graph {
            track_params: false,
            ..Self::new(params)
        }
    }

    /// Reject NaN and infinities at layer boundaries (see [`Graph::check`]).
    pub fn checked(mut self) -> Self {
        self.checked = true;
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Saved attention weights `[seqs × heads × q_len × k_len]` of an
    /// attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// In checked mode, fails if `v` holds a non-finite value.
    pub fn check(&self, v: Var, what: &str) -> Result<()> {
        if self.checked && !self.value(v).is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => self.track_params,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param(id), &[]);
        self.param_vars.insert(id, v);
        v
    }

    /// `a [.., k] · b [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape.len() != 2 || av.cols() != bv.shape[0] {
            return Err(shape_err(format!("matmul {:?} x {:?}", av.shape, bv.shape)));
        }
        let (rows, k, n) = (av.rows(), bv.shape[0], bv.shape[1]);
        let mut out = vec![T::zero(); rows * n];
        gemm(T::one(), &av.data, Mat::dense(0, rows, k), &bv.data, Mat::dense(0, k, n), T::zero(), &mut out, Mat::dense(0, rows, n));
        let mut shape = av.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `batches` independent products `[m × k] · [k × n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, batches: usize, m: usize, k: usize, n: usize) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != batches * m * k || bv.len() != batches * k * n {
            return Err(shape_err(format!("batch_matmul {:?} x {:?}", av.shape, bv.shape)));
        }
        let mut out = vec![T::zero(); batches * m * n];
        for i in 0..batches {
            gemm(
                T::one(),
                &av.data,
                Mat::dense(i * m * k, m, k),
                &bv.data,
                Mat::dense(i * k * n, k, n),
                T::zero(),
                &mut out,
                Mat::dense(i * m * n, m, n),
            );
        }
        let value = Tensor { shape: vec![batches * m, n], data: out };
        Ok(self.push(value, Op::BatchMatMul { a, b, batches, m, k, n }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(format!("add {:?} + {:?}", av.shape, bv.shape)));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| *x + *y).collect();
        let value = Tensor { shape: av.shape.clone(), data };
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.len() != c {
            return Err(shape_err(format!("bias {:?} for {:?}", bv.shape, xv.shape)));
        }
        let data = xv.data.iter().enumerate().map(|(i, v)| *v + bv.data[i % c]).collect();
        let value = Tensor { shape: xv.shape.clone(), data };
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Multiplies row `r` of `x` by `s[r]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let c = xv.cols();
        if sv.len() != xv.rows() {
            return Err(shape_err(format!("scale_rows {:?} by {:?}", xv.shape, sv.shape)));
        }
        let data = xv.data.iter().enumerate().map(|(i, v)| *v * sv.data[i / c]).collect();
        let value = Tensor { shape: xv.shape.clone(), data };
        Ok(self.push(value, Op::ScaleRows(x, s), &[x, s]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (sc, sh) = (T::of(scale), T::of(shift));
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| sc * *v + sh).collect(),
        };
        self.push(value, Op::Affine { x, scale: sc }, &[x])
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let xv = self.value(x);
        let c = T::of(GELU_C);
        let k = T::of(0.044715);
        let half = T::of(0.5);
        let data = xv
            .data
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(T::zero()),
                Unary::Gelu => half * v * (T::one() + (c * (v + k * v * v * v)).tanh()),
                Unary::Tanh => v.tanh(),
                Unary::Sigmoid => T::one() / (T::one() + (-v).exp()),
            })
            .collect();
        let value = Tensor { shape: xv.shape.clone(), data };
        self.push(value, Op::Unary(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    /// `ln(max(x, eps))`; NaN stays NaN.
    pub fn log_floor(&mut self, x: Var, eps: f64) -> Var {
        let eps = T::of(eps);
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| if v.is_nan() { *v } else { v.max(eps).ln() }).collect(),
        };
        self.push(value, Op::LogFloor { x, eps }, &[x])
    }

    /// Row-wise softmax over the last axis. Entries with `mask == false` get
    /// probability zero; a fully masked row is all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if mask.is_some_and(|m| m.len() != xv.len()) {
            return Err(shape_err("softmax mask length"));
        }
        let c = xv.cols();
        let mut data = vec![T::zero(); xv.len()];
        for r in 0..xv.rows() {
            let row = &xv.data[r * c..(r + 1) * c];
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            softmax_row(row, &mut data[r * c..(r + 1) * c], keep);
        }
        let value = Tensor { shape: xv.shape.clone(), data };
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols();
        if gv.len() != c || bv.len() != c {
            return Err(shape_err(format!("layer_norm {:?} with gain {:?}", xv.shape, gv.shape)));
        }
        let rows = xv.rows();
        let n = T::of(c as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = gv.data[j] * h + bv.data[j];
            }
        }
        let value = Tensor { shape: xv.shape.clone(), data: out };
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Rows `ids` of a `[vocab × dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape.len() != 2 {
            return Err(shape_err("embedding table must be 2-d"));
        }
        let (rows, d) = (tv.shape[0], tv.shape[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("embedding id {bad} >= {rows}")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tv.data[i * d..(i + 1) * d]);
        }
        let value = Tensor { shape: vec![ids.len(), d], data };
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Row `idx[i]` of `x` for each output row, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.cols());
        if idx.iter().flatten().any(|&i| i >= rows) {
            return Err(shape_err("gather index out of range"));
        }
        let mut data = vec![T::zero(); idx.len() * d];
        for (o, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                data[o * d..(o + 1) * d].copy_from_slice(&xv.data[i * d..(i + 1) * d]);
            }
        }
        let value = Tensor { shape: vec![idx.len(), d], data };
        Ok(self.push(value, Op::GatherRows { x, idx }, &[x]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err(format!("concat {:?} | {:?}", av.shape, bv.shape)));
        }
        let (p, q) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            data.extend_from_slice(&av.data[r * p..(r + 1) * p]);
            data.extend_from_slice(&bv.data[r * q..(r + 1) * q]);
        }
        let value = Tensor { shape: vec![av.rows(), p + q], data };
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Mean over the unmasked rows of each group of `x [groups·len × d]`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[bool], groups: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = (xv.rows(), xv.cols());
        if groups == 0 || rows % groups != 0 || mask.len() != rows {
            return Err(shape_err(format!("mean pool {:?} into {groups} groups", xv.shape)));
        }
        let len = rows / groups;
        let mut data = vec![T::zero(); groups * d];
        let mut counts = vec![0usize; groups];
        for g in 0..groups {
            for i in 0..len {
                let r = g * len + i;
                if mask[r] {
                    counts[g] += 1;
                    for j in 0..d {
                        data[g * d + j] += xv.data[r * d + j];
                    }
                }
            }
            if counts[g] == 0 {
                return Err(Error::AllMasked(g));
            }
            let inv = T::one() / T::of(counts[g] as f64);
            data[g * d..(g + 1) * d].iter_mut().for_each(|v| *v *= inv);
        }
        let value = Tensor { shape: vec![groups, d], data };
        Ok(self.push(value, Op::MeanPool { x, mask: mask.to_vec(), counts }, &[x]))
    }

    /// Scaled dot-product attention over already projected `q`, `k`, `v`
    /// (`[seqs·len × dim]`), split into `spec.heads` heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let h = spec.heads;
        if h == 0
            || d % h != 0
            || kv.cols() != d
            || vv.cols() != d
            || qv.rows() != spec.seqs * spec.q_len
            || kv.rows() != spec.seqs * spec.k_len
            || vv.rows() != spec.seqs * spec.k_len
            || spec.key_mask.as_ref().is_some_and(|m| m.len() != spec.seqs * spec.k_len)
            || (spec.causal && spec.q_len != spec.k_len)
        {
            return Err(shape_err(format!(
                "attention q {:?} k {:?} v {:?} for {} seqs x {} heads",
                qv.shape, kv.shape, vv.shape, spec.seqs, h
            )));
        }
        let dh = d / h;
        let (lq, lk) = (spec.q_len, spec.k_len);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut probs = vec![T::zero(); spec.seqs * h * lq * lk];
        let mut out = vec![T::zero(); qv.len()];
        let mut scores = vec![T::zero(); lq * lk];
        for s in 0..spec.seqs {
            for hh in 0..h {
                let qm = Mat::strided(s * lq * d + hh * dh, lq, dh, d);
                let km = Mat::strided(s * lk * d + hh * dh, lk, dh, d);
                gemm(scale, &qv.data, qm, &kv.data, km.t(), T::zero(), &mut scores, Mat::dense(0, lq, lk));
                let base = (s * h + hh) * lq * lk;
                for i in 0..lq {
                    let row = &scores[i * lk..(i + 1) * lk];
                    softmax_row(row, &mut probs[base + i * lk..base + (i + 1) * lk], |j| spec.allowed(s, i, j));
                }
                gemm(
                    T::one(),
                    &probs,
                    Mat::dense(base, lq, lk),
                    &vv.data,
                    km,
                    T::zero(),
                    &mut out,
                    Mat::strided(s * lq * d + hh * dh, lq, dh, d),
                );
            }
        }
        let value = Tensor { shape: qv.shape.clone(), data: out };
        Ok(self.push(value, Op::Attention { q, k, v, spec, probs }, &[q, k, v]))
    }

    /// For `a [batches·L × k]` and `s [batches·T × k]`, the rows
    /// `a[b, i] + s[b, t]` ordered by `(b, t, i)`.
    pub fn pair_add(&mut self, a: Var, s: Var, batches: usize) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        let k = av.cols();
        if sv.cols() != k || batches == 0 || av.rows() % batches != 0 || sv.rows() % batches != 0 {
            return Err(shape_err(format!("pair_add {:?} with {:?}", av.shape, sv.shape)));
        }
        let (l, t) = (av.rows() / batches, sv.rows() / batches);
        let mut data = Vec::with_capacity(batches * t * l * k);
        for b in 0..batches {
            for ti in 0..t {
                let srow = &sv.data[(b * t + ti) * k..(b * t + ti + 1) * k];
                for i in 0..l {
                    let arow = &av.data[(b * l + i) * k..(b * l + i + 1) * k];
                    data.extend(arow.iter().zip(srow).map(|(x, y)| *x + *y));
                }
            }
        }
        let value = Tensor { shape: vec![batches * t * l, k], data };
        Ok(self.push(value, Op::PairAdd { a, s, batches }, &[a, s]))
    }

    /// `out[r, map[r·L + i]] += x[r, i]` into `width` columns.
    pub fn scatter_cols(&mut self, x: Var, map: Vec<usize>, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if map.len() != xv.len() || map.iter().any(|&m| m >= width) {
            return Err(shape_err("scatter map does not fit"));
        }
        let rows = xv.rows();
        let mut data = vec![T::zero(); rows * width];
        for (i, v) in xv.data.iter().enumerate() {
            data[(i / c) * width + map[i]] += *v;
        }
        let value = Tensor { shape: vec![rows, width], data };
        Ok(self.push(value, Op::ScatterCols { x, map }, &[x]))
    }

    /// Appends zero columns up to `width`.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if width < c {
            return Err(shape_err("pad_cols would shrink"));
        }
        let rows = xv.rows();
        let mut data = vec![T::zero(); rows * width];
        for r in 0..rows {
            data[r * width..r * width + c].copy_from_slice(&xv.data[r * c..(r + 1) * c]);
        }
        let value = Tensor { shape: vec![rows, width], data };
        Ok(self.push(value, Op::PadCols(x), &[x]))
    }

    /// `out[r] = x[r, idx[r]]`.
    pub fn pick(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if idx.len() != xv.rows() || idx.iter().any(|&i| i >= c) {
            return Err(shape_err("pick indices do not fit"));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| xv.data[r * c + i]).collect();
        let value = Tensor { shape: vec![idx.len()], data };
        Ok(self.push(value, Op::Pick { x, idx }, &[x]))
    }

    /// `Σ w_i x_i` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if weights.len() != xv.len() {
            return Err(shape_err("weight count"));
        }
        let total = xv.data.iter().zip(&weights).map(|(a, b)| *a * *b).sum();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { x, w: weights }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.weighted_sum(x, vec![T::one(); n]).expect("matching length")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let w = T::one() / T::of(n.max(1) as f64);
        self.weighted_sum(x, vec![w; n]).expect("matching length")
    }

    /// Row-wise dot product of two `[n × d]` tensors.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(shape_err(format!("row_dot {:?} . {:?}", av.shape, bv.shape)));
        }
        let c = av.cols();
        let data = (0..av.rows())
            .map(|r| (0..c).map(|j| av.data[r * c + j] * bv.data[r * c + j]).sum())
            .collect();
        let value = Tensor { shape: vec![av.rows()], data };
        Ok(self.push(value, Op::RowDot(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(shape_err(format!("reshape {:?} to {shape:?}", xv.shape)));
        }
        let value = Tensor { shape: shape.to_vec(), data: xv.data.clone() };
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Inverted dropout; the identity outside training graphs.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().zip(&mask).map(|(a, m)| *a * *m).collect(),
        };
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// Gradients of the scalar `loss` with respect to every tracked parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoGraphRecorded);
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, gy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, gy: Vec<T>, grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                out.grads[id.0] = Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: gy,
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (rows, k, n) = (av.rows(), bv.shape[0], bv.shape[1]);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    gemm(T::one(), &gy, Mat::dense(0, rows, n), &bv.data, Mat::dense(0, k, n).t(), T::one(), ga, Mat::dense(0, rows, k));
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    gemm(T::one(), &av.data, Mat::dense(0, rows, k).t(), &gy, Mat::dense(0, rows, n), T::one(), gb, Mat::dense(0, k, n));
                }
            }
            Op::BatchMatMul { a, b, batches, m, k, n } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (*m, *k, *n);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for i in 0..*batches {
                        gemm(
                            T::one(),
                            &gy,
                            Mat::dense(i * m * n, m, n),
                            &bv.data,
                            Mat::dense(i * k * n, k, n).t(),
                            T::one(),
                            ga,
                            Mat::dense(i * m * k, m, k),
                        );
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for i in 0..*batches {
                        gemm(
                            T::one(),
                            &av.data,
                            Mat::dense(i * m * k, m, k).t(),
                            &gy,
                            Mat::dense(i * m * n, m, n),
                            T::one(),
                            gb,
                            Mat::dense(i * k * n, k, n),
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.grad_buf(grads, v) {
                        add_into(g, &gy);
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    add_into(g, &gy);
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    let c = g.len();
                    for (i, v) in gy.iter().enumerate() {
                        g[i % c] += *v;
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let c = xv.cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (i, v) in gy.iter().enumerate() {
                        g[i] += *v * sv.data[i / c];
                    }
                }
                if let Some(g) = self.grad_buf(grads, *s) {
                    for (i, v) in gy.iter().enumerate() {
                        g[i / c] += *v * xv.data[i];
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (gi, v) in g.iter_mut().zip(&gy) {
                        *gi += *scale * *v;
                    }
                }
            }
            Op::Unary(x, kind) => {
                let xv = val(*x);
                let y = &node.value.data;
                let c = T::of(GELU_C);
                let k = T::of(0.044715);
                let half = T::of(0.5);
                if let Some(g) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        let d = match kind {
                            Unary::Relu => {
                                if xv.data[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Gelu => {
                                let v = xv.data[i];
                                let t = (c * (v + k * v * v * v)).tanh();
                                half * (T::one() + t)
                                    + half * v * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * v * v)
                            }
                            Unary::Tanh => T::one() - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                        };
                        g[i] += gy[i] * d;
                    }
                }
            }
            Op::LogFloor { x, eps } => {
                let xv = val(*x);
                if let Some(g) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        if xv.data[i] > *eps {
                            g[i] += gy[i] / xv.data[i];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for r in 0..y.rows() {
                        let yr = &y.data[r * c..(r + 1) * c];
                        let gr = &gy[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for j in 0..c {
                            g[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = val(*gamma);
                let c = gv.len();
                let rows = rstd.len();
                if let Some(g) = self.grad_buf(grads, *gamma) {
                    for (i, v) in gy.iter().enumerate() {
                        g[i % c] += *v * xhat[i];
                    }
                }
                if let Some(g) = self.grad_buf(grads, *beta) {
                    for (i, v) in gy.iter().enumerate() {
                        g[i % c] += *v;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *x) {
                    let n = T::of(c as f64);
                    let mut dxhat = vec![T::zero(); c];
                    for r in 0..rows {
                        for j in 0..c {
                            dxhat[j] = gy[r * c + j] * gv.data[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dx = (0..c).map(|j| dxhat[j] * xhat[r * c + j]).sum::<T>() / n;
                        for j in 0..c {
                            g[r * c + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * c + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                if let Some(g) = self.grad_buf(grads, *table) {
                    for (o, &i) in ids.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &gy[o * d..(o + 1) * d]);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let d = node.value.cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (o, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            add_into(&mut g[i * d..(i + 1) * d], &gy[o * d..(o + 1) * d]);
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (val(*a).cols(), val(*b).cols());
                let rows = node.value.rows();
                if let Some(g) = self.grad_buf(grads, *a) {
                    for r in 0..rows {
                        add_into(&mut g[r * p..(r + 1) * p], &gy[r * (p + q)..r * (p + q) + p]);
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for r in 0..rows {
                        add_into(&mut g[r * q..(r + 1) * q], &gy[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                }
            }
            Op::MeanPool { x, mask, counts } => {
                let d = node.value.cols();
                let len = mask.len() / counts.len();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            let grp = r / len;
                            let inv = T::one() / T::of(counts[grp] as f64);
                            for j in 0..d {
                                g[r * d + j] += gy[grp * d + j] * inv;
                            }
                        }
                    }
                }
            }
            Op::Attention { q, k, v, spec, probs } => {
                self.attention_backward(&gy, *q, *k, *v, spec, probs, grads);
            }
            Op::PairAdd { a, s, batches } => {
                let k = node.value.cols();
                let l = val(*a).rows() / batches;
                let t = val(*s).rows() / batches;
                if let Some(g) = self.grad_buf(grads, *a) {
                    for b in 0..*batches {
                        for ti in 0..t {
                            for i in 0..l {
                                let o = ((b * t + ti) * l + i) * k;
                                add_into(&mut g[(b * l + i) * k..(b * l + i + 1) * k], &gy[o..o + k]);
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *s) {
                    for b in 0..*batches {
                        for ti in 0..t {
                            for i in 0..l {
                                let o = ((b * t + ti) * l + i) * k;
                                add_into(&mut g[(b * t + ti) * k..(b * t + ti + 1) * k], &gy[o..o + k]);
                            }
                        }
                    }
                }
            }
            Op::ScatterCols { x, map } => {
                let c = val(*x).cols();
                let width = node.value.cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += gy[(i / c) * width + map[i]];
                    }
                }
            }
            Op::PadCols(x) => {
                let c = val(*x).cols();
                let width = node.value.cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += gy[(i / c) * width + i % c];
                    }
                }
            }
            Op::Pick { x, idx } => {
                let c = val(*x).cols();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        g[r * c + i] += gy[r];
                    }
                }
            }
            Op::WeightedSum { x, w } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    for (gi, wi) in g.iter_mut().zip(w) {
                        *gi += gy[0] * *wi;
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let c = av.cols();
                if let Some(g) = self.grad_buf(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += gy[i / c] * bv.data[i];
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for i in 0..g.len() {
                        g[i] += gy[i / c] * av.data[i];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    add_into(g, &gy);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * mask[i];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        gy: &[T],
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let h = spec.heads;
        let dh = d / h;
        let (lq, lk) = (spec.q_len, spec.k_len);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut gq = vec![T::zero(); qv.len()];
        let mut gk = vec![T::zero(); kv.len()];
        let mut gv = vec![T::zero(); vv.len()];
        let mut dp = vec![T::zero(); lq * lk];
        for s in 0..spec.seqs {
            for hh in 0..h {
                let qm = Mat::strided(s * lq * d + hh * dh, lq, dh, d);
                let km = Mat::strided(s * lk * d + hh * dh, lk, dh, d);
                let base = (s * h + hh) * lq * lk;
                let pm = Mat::dense(base, lq, lk);
                // dV += Pᵀ dO
                gemm(T::one(), probs, pm.t(), gy, qm, T::one(), &mut gv, km);
                // dP = dO Vᵀ
                gemm(T::one(), gy, qm, &vv.data, km.t(), T::zero(), &mut dp, Mat::dense(0, lq, lk));
                // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                for i in 0..lq {
                    let p = &probs[base + i * lk..base + (i + 1) * lk];
                    let row = &mut dp[i * lk..(i + 1) * lk];
                    let dot: T = p.iter().zip(row.iter()).map(|(a, b)| *a * *b).sum();
                    for j in 0..lk {
                        row[j] = p[j] * (row[j] - dot);
                    }
                }
                // dQ += scale dS K ; dK += scale dSᵀ Q
                gemm(scale, &dp, Mat::dense(0, lq, lk), &kv.data, km, T::one(), &mut gq, qm);
                gemm(scale, &dp, Mat::dense(0, lq, lk).t(), &qv.data, qm, T::one(), &mut gk, km);
            }
        }
        for (var, g) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(buf) = self.grad_buf(grads, var) {
                add_into(buf, &g);
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T], keep: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, v) in row.iter().enumerate() {
        if keep(j) && *v > max {
            max = *v;
        }
    }
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, v) in row.iter().enumerate() {
        out[j] = if keep(j) { (*v - max).exp() } else { T::zero() };
        total += out[j];
    }
    let inv = T::one() / total;
    out.iter_mut().for_each(|o| *o *= inv);
}
