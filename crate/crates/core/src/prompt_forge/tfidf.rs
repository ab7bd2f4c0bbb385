//! TF-IDF cosine similarity over lowercased, punctuation-stripped unigrams.
//!
//! Weights are raw term count times smoothed inverse document frequency,
//! `ln((1 + N) / (1 + df)) + 1`, with `N` the number of indexed documents.
//! Query terms absent from the index vocabulary are dropped. Vectors are
//! kept sorted by term id so every float sum runs in a fixed order.

use std::collections::BTreeMap;

/// Scores a query against an indexed collection, one score per document in
/// index order.
pub trait SimilarityScorer: Send + Sync {
    fn scores(&self, query: &str) -> Vec<f64>;
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
    docs: Vec<SparseVec>,
    norms: Vec<f64>,
}

impl TfIdfIndex {
    pub fn new<S: AsRef<str>>(documents: &[S]) -> Self {
        let tokenized: Vec<Vec<String>> = documents.iter().map(|d| tokenize(d.as_ref())).collect();

        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for tokens in &tokenized {
            let mut uniq: Vec<&str> = tokens.iter().map(String::as_str).collect();
            uniq.sort_unstable();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = documents.len() as f64;
        let vocab: BTreeMap<String, usize> = df
            .keys()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        let idf: Vec<f64> = df
            .values()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();

        let mut index = Self {
            vocab,
            idf,
            docs: Vec::with_capacity(tokenized.len()),
            norms: Vec::with_capacity(tokenized.len()),
        };
        for tokens in &tokenized {
            let v = index.weigh(tokens);
            index.norms.push(norm(&v));
            index.docs.push(v);
        }
        index
    }

    fn weigh(&self, tokens: &[String]) -> SparseVec {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            if let Some(&id) = self.vocab.get(t) {
                *counts.entry(id).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .map(|(id, c)| (id, c as f64 * self.idf[id]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Cosine similarity between the query and each document.
    pub fn similarities(&self, query: &str) -> Vec<f64> {
        let q = self.weigh(&tokenize(query));
        let q_norm = norm(&q);
        self.docs
            .iter()
            .zip(&self.norms)
            .map(|(d, &d_norm)| {
                if q_norm == 0.0 || d_norm == 0.0 {
                    0.0
                } else {
                    dot(&q, d) / (q_norm * d_norm)
                }
            })
            .collect()
    }
}

impl SimilarityScorer for TfIdfIndex {
    fn scores(&self, query: &str) -> Vec<f64> {
        self.similarities(query)
    }
}

fn norm(v: &SparseVec) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Indices ordered by descending score, ties by ascending `key`.
pub(crate) fn rank_by<K: Ord>(scores: &[f64], key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| key(a).cmp(&key(b))));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_strips_punctuation_and_case() {
        assert_eq!(tokenize("Q3 Earnings: BEAT, again!"), vec!["q3", "earnings", "beat", "again"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn identical_text_scores_one_and_disjoint_zero() {
        let idx = TfIdfIndex::new(&["alpha beta", "gamma delta"]);
        let s = idx.similarities("alpha beta");
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert_eq!(idx.similarities("unknown words"), vec![0.0, 0.0]);
    }

    #[test]
    fn ranking_breaks_ties_by_key() {
        let order = rank_by(&[0.5, 0.9, 0.5], |i| ["c", "a", "b"][i]);
        assert_eq!(order, vec![1, 2, 0]);
    }
}
