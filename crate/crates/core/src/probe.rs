//! Variable-scope probing of frozen token representations.
//!
//! A bilinear scorer `σ(h_aᵀ W h_b)` is the only trained parameter. Pairs of
//! identifier occurrences are labelled 1 when their nearest scope-opening
//! ancestors coincide.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BatchBuilder, Example};
use crate::error::{Error, Result};
use crate::model::HiTModel;
use crate::nn::{Graph, Init, ParamStore, Real, Tensor, Var};
use crate::syntax::TokenizedProgram;
use crate::train::{scope_pair_loss, AdamW, Schedule};

/// Probe settings. Key names are distinct from the training schedule so
/// both live in one flat configuration table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Upper bound on sampled pairs per program.
    pub pairs_per_program: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { pairs_per_program: 16, probe_epochs: 30, probe_lr: 1e-3, probe_batch_size: 256 }
    }
}

/// Two identifier positions of one program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct VariablePair {
    pub pos_a: usize,
    pub pos_b: usize,
    /// Same scope block.
    pub label: bool,
}

/// Every identifier pair with its scope label, `pos_a < pos_b`.
pub fn all_pairs(program: &TokenizedProgram, limit: usize) -> Result<Vec<VariablePair>> {
    let idents: Vec<usize> = (0..program.len().min(limit)).filter(|&i| program.is_identifier[i]).collect();
    if idents.len() < 2 {
        return Err(Error::InsufficientIdentifiers);
    }
    let mut pairs = Vec::new();
    for (k, &a) in idents.iter().enumerate() {
        for &b in &idents[k + 1..] {
            pairs.push(VariablePair { pos_a: a, pos_b: b, label: program.scope_blocks[a] == program.scope_blocks[b] });
        }
    }
    Ok(pairs)
}

/// At most `budget` pairs among the first `limit` tokens, with equally
/// many of each label. The majority label is downsampled.
pub fn sample_pairs<R: Rng>(
    program: &TokenizedProgram,
    budget: usize,
    limit: usize,
    rng: &mut R,
) -> Result<Vec<VariablePair>> {
    let pairs = all_pairs(program, limit)?;
    if budget == 0 {
        return Ok(Vec::new());
    }
    let (same, other): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.label);
    let k = same.len().min(other.len()).min(budget / 2);
    let mut out: Vec<VariablePair> = same.choose_multiple(rng, k).copied().collect();
    out.extend(other.choose_multiple(rng, k).copied());
    out.shuffle(rng);
    Ok(out)
}

/// `σ(h_aᵀ W h_b)` for rows of `h_a` and `h_b` `[n × d]` with `w` `[d × d]`.
pub fn score_pairs<T: Real>(g: &mut Graph<'_, T>, h_a: Var, h_b: Var, w: Var) -> Result<Var> {
    let projected = g.matmul(h_a, w)?;
    let logits = g.row_dot(projected, h_b)?;
    Ok(g.sigmoid(logits))
}

/// Scalar form of [`score_pairs`].
pub fn score_pair(h_a: &[f64], h_b: &[f64], w: &[f64]) -> f64 {
    let d = h_a.len();
    let logit: f64 = (0..d).map(|i| (0..d).map(|j| h_a[i] * w[i * d + j] * h_b[j]).sum::<f64>()).sum();
    1.0 / (1.0 + (-logit).exp())
}

/// Feature rows of labelled pairs drawn from frozen encoder outputs.
#[derive(Clone, Debug)]
pub struct PairFeatures<T: Real> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub labels: Vec<bool>,
    /// Programs contributing no pair.
    pub skipped_programs: usize,
}

impl<T: Real> PairFeatures<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn select(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>, Vec<bool>) {
        let d = self.a.cols();
        let pick = |t: &Tensor<T>| Tensor {
            shape: vec![idx.len(), d],
            data: idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect(),
        };
        (pick(&self.a), pick(&self.b), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Samples pairs from `examples` and looks up their contextual vectors in
/// `model`, which is never updated.
pub fn pair_features<T: Real>(
    model: &HiTModel<T>,
    builder: &BatchBuilder<'_>,
    examples: &[&Example],
    pairs_per_program: usize,
    seed: u64,
) -> Result<PairFeatures<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.config.seq_model_dim;
    let limit = model.config.max_len;
    let (mut a, mut b, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for chunk in examples.chunks(32) {
        let batch = builder.build(chunk)?;
        let h = model.token_features(&batch)?;
        for (row, ex) in chunk.iter().enumerate() {
            let pairs = match sample_pairs(&ex.program, pairs_per_program, limit, &mut rng) {
                Ok(p) => p,
                Err(Error::InsufficientIdentifiers) => Vec::new(),
                Err(e) => return Err(e),
            };
            if pairs.is_empty() {
                skipped += 1;
            }
            let base = row * batch.max_len;
            for p in pairs {
                a.extend_from_slice(h.row(base + p.pos_a));
                b.extend_from_slice(h.row(base + p.pos_b));
                labels.push(p.label);
            }
        }
    }
    let n = labels.len();
    Ok(PairFeatures {
        a: Tensor { shape: vec![n, d], data: a },
        b: Tensor { shape: vec![n, d], data: b },
        labels,
        skipped_programs: skipped,
    })
}

/// Outcome of one probe run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

/// A trained bilinear scope scorer.
#[derive(Clone, Debug)]
pub struct ScopeProbe<T: Real> {
    pub params: ParamStore<T>,
}

impl<T: Real> ScopeProbe<T> {
    pub fn new(dim: usize) -> Self {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        params.init("probe.w", &[dim, dim], Init::Zeros, &mut rng);
        ScopeProbe { params }
    }

    fn w(&self, g: &mut Graph<'_, T>) -> Var {
        let id = self.params.ids().next().expect("probe weight");
        g.param(id)
    }

    /// Probabilities that each pair shares a scope.
    pub fn predict(&self, features: &PairFeatures<T>) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::frozen(&self.params);
        let (a, b) = (g.constant(features.a.clone()), g.constant(features.b.clone()));
        let w = self.w(&mut g);
        let p = score_pairs(&mut g, a, b, w)?;
        Ok(g.value(p).data.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
    }

    /// Fraction of pairs classified correctly at threshold 0.5.
    pub fn accuracy(&self, features: &PairFeatures<T>) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let probs = self.predict(features)?;
        let hits = probs.iter().zip(&features.labels).filter(|(p, y)| (**p >= 0.5) == **y).count();
        Ok(hits as f64 / probs.len() as f64)
    }

    /// Minibatch AdamW on the binary cross-entropy; returns the last epoch's
    /// mean loss.
    pub fn fit(&mut self, features: &PairFeatures<T>, config: &ProbeConfig, seed: u64) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let schedule = Schedule { lr: config.probe_lr, weight_decay: 0.0, ..Schedule::default() };
        let mut opt = AdamW::new(&schedule);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..config.probe_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(config.probe_batch_size.max(1)) {
                let (a, b, labels) = features.select(chunk);
                let (loss, grads) = {
                    let mut g = Graph::new(&self.params);
                    let (a, b) = (g.constant(a), g.constant(b));
                    let w = self.w(&mut g);
                    let p = score_pairs(&mut g, a, b, w)?;
                    let loss = scope_pair_loss(&mut g, p, &labels)?;
                    (g.value(loss).item().to_f64().unwrap_or(f64::NAN), g.backward(loss)?)
                };
                if !loss.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                opt.step(&mut self.params, &grads);
                total += loss * chunk.len() as f64;
            }
            last = total / features.len() as f64;
        }
        Ok(last)
    }
}

/// Trains a probe on pairs from `train` and scores pairs from `test`.
/// `model` is only read.
pub fn run_probe<T: Real>(
    model: &HiTModel<T>,
    builder: &BatchBuilder<'_>,
    train: &[&Example],
    test: &[&Example],
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    let train_f = pair_features(model, builder, train, config.pairs_per_program, seed)?;
    let test_f = pair_features(model, builder, test, config.pairs_per_program, seed.wrapping_add(1))?;
    let mut probe = ScopeProbe::new(model.config.seq_model_dim);
    let final_loss = probe.fit(&train_f, config, seed)?;
    Ok(ProbeReport {
        train_pairs: train_f.len(),
        test_pairs: test_f.len(),
        train_accuracy: probe.accuracy(&train_f)?,
        test_accuracy: probe.accuracy(&test_f)?,
        final_loss,
    })
}

/// Tokens of `program` that are identifiers, with their scope block.
pub fn identifier_scopes(program: &TokenizedProgram) -> Vec<(usize, &str, usize)> {
    let mut renumber = HashMap::new();
    (0..program.len())
        .filter(|&i| program.is_identifier[i])
        .map(|i| {
            let next = renumber.len();
            let block = *renumber.entry(program.scope_blocks[i]).or_insert(next);
            (i, program.tokens[i].as_str(), block)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{HierarchyExtractor, Language};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    const IF_ELSE: &str = "if x > 0:\n    A = 1\n    B = 2\nelse:\n    C = 3\n    D = 4\n";

    fn program(src: &str) -> TokenizedProgram {
        HierarchyExtractor::default().parse_and_extract(src, Language::Python).unwrap()
    }

    fn position(p: &TokenizedProgram, name: &str) -> usize {
        p.tokens.iter().position(|t| t == name).unwrap()
    }

    #[test]
    fn if_else_branches_are_distinct_scopes() {
        let p = program(IF_ELSE);
        let pairs = all_pairs(&p, usize::MAX).unwrap();
        let label = |x: &str, y: &str| {
            let (a, b) = (position(&p, x), position(&p, y));
            pairs.iter().find(|q| (q.pos_a, q.pos_b) == (a.min(b), a.max(b))).unwrap().label
        };
        assert!(label("A", "B"));
        assert!(label("C", "D"));
        assert!(!label("C", "B"));
        assert!(!label("C", "A"));
    }

    #[test]
    fn few_identifiers_and_zero_budget() {
        assert!(matches!(all_pairs(&program("print(1)\n"), usize::MAX), Err(Error::InsufficientIdentifiers)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pairs(&program(IF_ELSE), 0, usize::MAX, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn bilinear_score_matches_hand_arithmetic() {
        // h_a = (1, 2), h_b = (3, -1), W = [[1, 0], [0.5, 2]]: logit = 1·3 + 2·(1.5 - 2) = 2
        let p = score_pair(&[1.0, 2.0], &[3.0, -1.0], &[1.0, 0.0, 0.5, 2.0]);
        assert!((p - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-15);
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap());
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0]]).unwrap());
        let s = score_pairs(&mut g, a, b, w).unwrap();
        assert!((g.value(s).data[0] - p).abs() < 1e-15);
    }

    #[test]
    fn closed_form_scores() {
        let (a, b) = ([0.3, -0.7, 0.2], [1.0, 2.0, -1.0]);
        assert_eq!(score_pair(&a, &b, &[0.0; 9]), 0.5);
        let u = [0.6, 0.8, 0.0];
        let c = 1.7;
        let scaled_identity = [c, 0.0, 0.0, 0.0, c, 0.0, 0.0, 0.0, c];
        assert!((score_pair(&u, &u, &scaled_identity) - 1.0 / (1.0 + (-c).exp())).abs() < 1e-12);
        // W is not symmetric, so swapping the arguments changes the score
        let w = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(score_pair(&a, &b, &w) != score_pair(&b, &a, &w));
    }

    #[test]
    fn random_scorer_is_at_chance_on_balanced_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4000;
        let rows = |rng: &mut ChaCha8Rng| Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = PairFeatures { a: rows(&mut rng), b: rows(&mut rng), labels: (0..n).map(|i| i % 2 == 0).collect(), skipped_programs: 0 };
        let mut probe = ScopeProbe::<f64>::new(4);
        let id = probe.params.ids().next().unwrap();
        probe.params.get_mut(id).data.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        assert!((probe.accuracy(&f).unwrap() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn separable_features_are_learned() {
        let rows = |v: &[[f64; 2]]| Tensor::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let f = PairFeatures {
            a: rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
            b: rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]),
            labels: vec![true, true, false, false],
            skipped_programs: 0,
        };
        let mut probe = ScopeProbe::<f64>::new(2);
        let cfg = ProbeConfig { probe_epochs: 200, probe_lr: 0.05, ..ProbeConfig::default() };
        let loss = probe.fit(&f, &cfg, 1).unwrap();
        assert!(loss < 0.1, "{loss}");
        assert_eq!(probe.accuracy(&f).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn samples_are_balanced_and_within_budget(seed in 0u64..500, budget in 0usize..40) {
            let records = crate::data::generate_synthetic(crate::data::SynthKind::Scope, 1, seed);
            let p = program(&records[0].code);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = sample_pairs(&p, budget, usize::MAX, &mut rng).unwrap();
            let positives = pairs.iter().filter(|q| q.label).count();
            prop_assert!(pairs.len() <= budget);
            prop_assert_eq!(positives * 2, pairs.len());
            for q in &pairs {
                prop_assert!(q.pos_a < q.pos_b);
                prop_assert_eq!(q.label, p.scope_blocks[q.pos_a] == p.scope_blocks[q.pos_b]);
            }
        }
    }
}
