//! Task metrics and the TF-IDF category-similarity analysis.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

/// Fraction of positions where `preds` equals `targets`.
pub fn accuracy(preds: &[usize], targets: &[usize]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Result of [`map_at_r`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapReport {
    pub map: f64,
    /// AP@R of each query, `None` for skipped queries.
    pub per_query: Vec<Option<f64>>,
    /// Queries whose label has no other member.
    pub skipped: Vec<usize>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Indices of `candidates` ordered by cosine similarity to `query`,
/// highest first; equal scores keep input order.
pub fn rank_by_cosine(query: &[f64], candidates: &[Vec<f64>]) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|c| cosine(query, c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Mean over queries of AP@R, where `R` is the number of other items
/// sharing the query's label and
/// `AP@R = (1/R) Σ_{k≤R} rel_k · precision@k` over the cosine ranking of
/// every other item.
pub fn map_at_r(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<MapReport> {
    if embeddings.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} embeddings for {} labels", embeddings.len(), labels.len())));
    }
    if embeddings.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut per_query = Vec::with_capacity(labels.len());
    let mut skipped = Vec::new();
    for (q, query) in embeddings.iter().enumerate() {
        let r = counts[&labels[q]] - 1;
        if r == 0 {
            skipped.push(q);
            per_query.push(None);
            continue;
        }
        let others: Vec<usize> = (0..embeddings.len()).filter(|&i| i != q).collect();
        let candidates: Vec<Vec<f64>> = others.iter().map(|&i| embeddings[i].clone()).collect();
        let ranking = rank_by_cosine(query, &candidates);
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (k, &c) in ranking.iter().take(r).enumerate() {
            if labels[others[c]] == labels[q] {
                hits += 1;
                sum += hits as f64 / (k + 1) as f64;
            }
        }
        per_query.push(Some(sum / r as f64));
    }
    let scored: Vec<f64> = per_query.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::DegenerateLabels("every label has a single member".into()));
    }
    Ok(MapReport {
        map: scored.iter().sum::<f64>() / scored.len() as f64,
        per_query,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multiset overlap counts between predicted and target subtokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SubtokenCounts {
    pub overlap: usize,
    pub predicted: usize,
    pub target: usize,
}

impl SubtokenCounts {
    pub fn of(predicted: &[String], target: &[String]) -> Self {
        let mut remaining: HashMap<&str, usize> = HashMap::new();
        for t in target {
            *remaining.entry(t).or_default() += 1;
        }
        let overlap = predicted
            .iter()
            .filter(|p| match remaining.get_mut(p.as_str()) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    true
                }
                _ => false,
            })
            .count();
        SubtokenCounts { overlap, predicted: predicted.len(), target: target.len() }
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.overlap, self.predicted);
        let recall = ratio(self.overlap, self.target);
        // 2PR / (P + R) reduced to counts, so exact ratios stay exact
        let f1 = if self.overlap == 0 { 0.0 } else { ratio(2 * self.overlap, self.predicted + self.target) };
        Prf { precision, recall, f1 }
    }
}

impl std::ops::Add for SubtokenCounts {
    type Output = SubtokenCounts;

    fn add(self, o: SubtokenCounts) -> SubtokenCounts {
        SubtokenCounts {
            overlap: self.overlap + o.overlap,
            predicted: self.predicted + o.predicted,
            target: self.target + o.target,
        }
    }
}

impl std::iter::Sum for SubtokenCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(SubtokenCounts::default(), |a, b| a + b)
    }
}

pub fn subtoken_prf(predicted: &[String], target: &[String]) -> Prf {
    SubtokenCounts::of(predicted, target).prf()
}

/// Micro-averaged scores: counts are summed over all pairs first.
pub fn corpus_subtoken_prf<'a, I>(pairs: I) -> Prf
where
    I: IntoIterator<Item = (&'a [String], &'a [String])>,
{
    pairs.into_iter().map(|(p, t)| SubtokenCounts::of(p, t)).sum::<SubtokenCounts>().prf()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TfidfReport {
    /// Mean over unordered category pairs.
    pub mean: f64,
    pub matrix: Vec<Vec<f64>>,
}

/// TF-IDF cosine between categories, each given as its programs' texts.
///
/// A category is one document of whitespace tokens; `tf` is the raw count
/// and `idf = ln(N / df)` over the `N` categories. A pair with a zero
/// vector scores 1 if both documents have the same term counts, else 0.
pub fn category_tfidf_similarity(categories: &[Vec<String>]) -> Result<TfidfReport> {
    if categories.len() < 2 {
        return Err(Error::DegenerateCorpus("need at least two categories".into()));
    }
    let counts: Vec<BTreeMap<&str, f64>> = categories
        .iter()
        .map(|texts| {
            let mut m = BTreeMap::new();
            for tok in texts.iter().flat_map(|t| t.split_whitespace()) {
                *m.entry(tok).or_insert(0.0) += 1.0;
            }
            m
        })
        .collect();
    if let Some(i) = counts.iter().position(BTreeMap::is_empty) {
        return Err(Error::DegenerateCorpus(format!("category {i} has no tokens")));
    }
    let n = categories.len() as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &counts {
        for term in c.keys() {
            *df.entry(term).or_insert(0.0) += 1.0;
        }
    }
    let vectors: Vec<BTreeMap<&str, f64>> = counts
        .iter()
        .map(|c| c.iter().map(|(t, tf)| (*t, tf * (n / df[t]).ln())).collect())
        .collect();
    let k = categories.len();
    let mut matrix = vec![vec![1.0; k]; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let dot: f64 = vectors[i].iter().map(|(t, w)| w * vectors[j].get(t).unwrap_or(&0.0)).sum();
            let ni = vectors[i].values().map(|w| w * w).sum::<f64>().sqrt();
            let nj = vectors[j].values().map(|w| w * w).sum::<f64>().sqrt();
            let sim = if ni == 0.0 || nj == 0.0 {
                if counts[i] == counts[j] {
                    1.0
                } else {
                    0.0
                }
            } else {
                dot / (ni * nj)
            };
            matrix[i][j] = sim;
            matrix[j][i] = sim;
            total += sim;
        }
    }
    Ok(TfidfReport { mean: total / (k * (k - 1) / 2) as f64, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn map_perfect_clusters_and_pair_ranked_second() {
        let e = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]];
        assert_eq!(map_at_r(&e, &[0, 0, 1, 1]).unwrap().map, 1.0);

        // query 0 has one partner (item 2) ranked second behind item 1
        let e = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.5, 0.5]];
        let report = map_at_r(&e, &[0, 1, 0]).unwrap();
        assert_eq!(report.per_query[0], Some(0.0));
        assert_eq!(report.skipped, [1]);
        assert!(matches!(map_at_r(&e, &[0, 1, 2]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn subtoken_example() {
        let p = subtoken_prf(&s(&["get", "count"]), &s(&["get", "item", "count"]));
        assert_eq!(p.precision, 1.0);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.f1 - 0.8).abs() < 1e-15);
        assert_eq!(subtoken_prf(&s(&["a"]), &s(&["a"])), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(subtoken_prf(&[], &s(&["a"])), Prf::default());
    }

    #[test]
    fn tfidf_cases() {
        let disjoint = category_tfidf_similarity(&[s(&["a b"]), s(&["c d"])]).unwrap();
        assert_eq!(disjoint.mean, 0.0);
        let same = category_tfidf_similarity(&[s(&["a b"]), s(&["b a"])]).unwrap();
        assert_eq!(same.mean, 1.0);
        assert!(category_tfidf_similarity(&[s(&["a"])]).is_err());
        assert!(category_tfidf_similarity(&[s(&["a"]), s(&[" "])]).is_err());

        // hand computation: N = 3, idf(a) = 0, idf(b) = idf(c) = ln 1.5, idf(d) = ln 3
        let r = category_tfidf_similarity(&[s(&["a b b"]), s(&["a b c"]), s(&["a c d"])]).unwrap();
        let (l15, l3) = (1.5f64.ln(), 3f64.ln());
        let v1 = [0.0, 2.0 * l15, 0.0, 0.0];
        let v2 = [0.0, l15, l15, 0.0];
        let v3 = [0.0, 0.0, l15, l3];
        let cos = |a: &[f64; 4], b: &[f64; 4]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        assert!((r.matrix[0][1] - cos(&v1, &v2)).abs() < 1e-12);
        assert!((r.matrix[0][2] - cos(&v1, &v3)).abs() < 1e-12);
        assert!((r.matrix[1][2] - cos(&v2, &v3)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prf_swaps_under_argument_exchange(
            a in proptest::collection::vec("[abc]", 1..6),
            b in proptest::collection::vec("[abc]", 1..6),
        ) {
            let x = subtoken_prf(&a, &b);
            let y = subtoken_prf(&b, &a);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert_eq!(x.recall, y.precision);
        }

        #[test]
        fn micro_average_of_copies_is_the_single_score(
            a in proptest::collection::vec("[abc]", 0..6),
            b in proptest::collection::vec("[abc]", 1..6),
            n in 1usize..5,
        ) {
            let single = subtoken_prf(&a, &b);
            let corpus = corpus_subtoken_prf((0..n).map(|_| (a.as_slice(), b.as_slice())));
            prop_assert!((single.f1 - corpus.f1).abs() < 1e-12);
        }

        #[test]
        fn map_ignores_positive_rescaling(
            raw in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 4..12),
            scale in 0.1f64..10.0,
        ) {
            let labels: Vec<usize> = (0..raw.len()).map(|i| i % 2).collect();
            let scaled: Vec<Vec<f64>> = raw.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let a = map_at_r(&raw, &labels).unwrap().map;
            let b = map_at_r(&scaled, &labels).unwrap().map;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
