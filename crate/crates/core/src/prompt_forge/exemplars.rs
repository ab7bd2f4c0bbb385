use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::tfidf::{rank_by, SimilarityScorer, TfIdfIndex};
use super::{PromptError, Sentiment};
use crate::corpus::NewsArticle;

/// Maximum length of a single background fact, in characters.
pub const MAX_FACT_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub source_article_id: String,
    pub excerpt: String,
    #[serde(default)]
    pub rationale: Vec<String>,
    pub label: Sentiment,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBlock {
    pub ticker: String,
    pub facts: Vec<String>,
    /// Latest date the facts may describe. When set it must precede every
    /// target the block is used for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<DateTime<Utc>>,
}

impl KnowledgeBlock {
    pub fn validate(&self) -> Result<(), PromptError> {
        for fact in &self.facts {
            let len = fact.chars().count();
            if len > MAX_FACT_CHARS {
                return Err(PromptError::FactTooLong {
                    ticker: self.ticker.clone(),
                    len,
                });
            }
        }
        Ok(())
    }
}

/// Picks in-context exemplars for a target by text similarity.
///
/// The similarity index is built once over the pool excerpts and never
/// mutated afterwards.
pub struct ExemplarSelector {
    pool: Vec<Exemplar>,
    scorer: Box<dyn SimilarityScorer>,
}

impl std::fmt::Debug for ExemplarSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExemplarSelector")
            .field("pool", &self.pool.len())
            .finish_non_exhaustive()
    }
}

impl ExemplarSelector {
    pub fn new(pool: Vec<Exemplar>) -> Self {
        let excerpts: Vec<&str> = pool.iter().map(|e| e.excerpt.as_str()).collect();
        let scorer = Box::new(TfIdfIndex::new(&excerpts));
        Self { pool, scorer }
    }

    /// Uses a caller-supplied scorer; it must score documents in pool order.
    pub fn with_scorer(pool: Vec<Exemplar>, scorer: Box<dyn SimilarityScorer>) -> Self {
        Self { pool, scorer }
    }

    pub fn pool(&self) -> &[Exemplar] {
        &self.pool
    }

    /// Returns the `k` most similar exemplars, or with `class_constraint`
    /// the best exemplar of each listed class in the listed order (then `k`
    /// must equal the number of classes).
    pub fn select(
        &self,
        target: &NewsArticle,
        k: usize,
        class_constraint: Option<&[Sentiment]>,
    ) -> Result<Vec<Exemplar>, PromptError> {
        if self.pool.is_empty() {
            return Err(PromptError::EmptyPool);
        }
        if k == 0 {
            return Err(PromptError::InvalidK(k));
        }
        let mut late: Vec<&Exemplar> = self
            .pool
            .iter()
            .filter(|e| e.timestamp >= target.timestamp)
            .collect();
        if !late.is_empty() {
            late.sort_by(|a, b| a.source_article_id.cmp(&b.source_article_id));
            return Err(PromptError::TemporalViolation {
                source_id: late[0].source_article_id.clone(),
                target_id: target.id.clone(),
            });
        }

        let scores = self.scorer.scores(&target.full_text());
        debug_assert_eq!(scores.len(), self.pool.len());
        let ranked = rank_by(&scores, |i| self.pool[i].source_article_id.as_str());

        match class_constraint {
            None => Ok(ranked
                .into_iter()
                .take(k)
                .map(|i| self.pool[i].clone())
                .collect()),
            Some(classes) => {
                if classes.len() != k {
                    return Err(PromptError::InvalidK(k));
                }
                classes
                    .iter()
                    .map(|&class| {
                        ranked
                            .iter()
                            .map(|&i| &self.pool[i])
                            .find(|e| e.label == class)
                            .cloned()
                            .ok_or(PromptError::UnsatisfiableConstraint(class))
                    })
                    .collect()
            }
        }
    }
}

/// One-shot form of [`ExemplarSelector::select`].
pub fn select_exemplars(
    pool: &[Exemplar],
    target: &NewsArticle,
    k: usize,
    class_constraint: Option<&[Sentiment]>,
) -> Result<Vec<Exemplar>, PromptError> {
    ExemplarSelector::new(pool.to_vec()).select(target, k, class_constraint)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PromptError> {
    let io_err = |source| PromptError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PromptError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads an exemplar pool file (JSONL). Duplicate ids and empty excerpts are
/// rejected.
pub fn load_exemplar_pool(path: &Path) -> Result<Vec<Exemplar>, PromptError> {
    let pool: Vec<Exemplar> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, e) in pool.iter().enumerate() {
        let bad = |reason: &str| PromptError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        if e.excerpt.trim().is_empty() {
            return Err(bad("empty excerpt"));
        }
        if !seen.insert(e.source_article_id.as_str()) {
            return Err(bad("duplicate source_article_id"));
        }
    }
    Ok(pool)
}

/// Reads a knowledge file (JSONL) into one block per ticker. Repeated
/// tickers have their facts concatenated in file order.
pub fn load_knowledge(path: &Path) -> Result<BTreeMap<String, KnowledgeBlock>, PromptError> {
    let blocks: Vec<KnowledgeBlock> = read_jsonl(path)?;
    let mut out: BTreeMap<String, KnowledgeBlock> = BTreeMap::new();
    for block in blocks {
        block.validate()?;
        match out.get_mut(&block.ticker) {
            Some(existing) => {
                existing.facts.extend(block.facts);
                existing.as_of = existing.as_of.max(block.as_of);
            }
            None => {
                out.insert(block.ticker.clone(), block);
            }
        }
    }
    Ok(out)
}
