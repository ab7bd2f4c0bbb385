//! Directional scoring of predictions and the plug-in mutual information
//! between the sentiment signal and the realised move.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Direction;
use crate::prompt_forge::Sentiment;
use crate::verdict::PredictionRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction for article {0} has no label")]
    UnmatchedArticle(String),
    #[error("no scored items")]
    NoScoredItems,
    #[error("signal has {signal} values but outcome has {outcome}")]
    LengthMismatch { signal: usize, outcome: usize },
    #[error("mutual information needs at least one observation")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts are additive, so partitions of the items can be scored
    /// separately and merged.
    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// How Neutral predictions enter the binary confusion matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Neutral counts as a predicted down-move (no buy signal).
    #[default]
    NeutralAsNegativeSignal,
    /// Neutral predictions are dropped from the matrix.
    NeutralExcluded,
}

/// How unparseable completions are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    /// Scored as a Neutral prediction.
    #[default]
    AsNeutral,
    Excluded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub counts: ConfusionCounts,
    /// Predictions whose label is Flat.
    pub excluded_flat: u64,
    /// Unparseable predictions left out of the matrix.
    pub excluded_unparseable: u64,
    /// Neutral predictions left out under `NeutralExcluded`.
    pub excluded_neutral: u64,
    /// Unparseable predictions seen, whether scored or not.
    pub unparseable: u64,
}

/// Joins predictions to labels on article id and tallies the confusion
/// matrix. Up is the positive class.
pub fn score(
    predictions: &[PredictionRecord],
    labels: &HashMap<String, Direction>,
    mode: ScoringMode,
    unparseable: UnparseablePolicy,
) -> Result<ScoreOutcome, EvalError> {
    let mut out = ScoreOutcome::default();
    for p in predictions {
        let label = *labels
            .get(&p.article_id)
            .ok_or_else(|| EvalError::UnmatchedArticle(p.article_id.clone()))?;
        if label == Direction::Flat {
            out.excluded_flat += 1;
            continue;
        }
        let predicted = match p.sentiment {
            Some(s) => s,
            None => {
                out.unparseable += 1;
                match unparseable {
                    UnparseablePolicy::AsNeutral => Sentiment::Neutral,
                    UnparseablePolicy::Excluded => {
                        out.excluded_unparseable += 1;
                        continue;
                    }
                }
            }
        };
        let says_up = match (predicted, mode) {
            (Sentiment::Positive, _) => true,
            (Sentiment::Negative, _) | (Sentiment::Neutral, ScoringMode::NeutralAsNegativeSignal) => false,
            (Sentiment::Neutral, ScoringMode::NeutralExcluded) => {
                out.excluded_neutral += 1;
                continue;
            }
        };
        let c = &mut out.counts;
        match (says_up, label == Direction::Up) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when nothing was predicted Up.
    pub precision: Option<f64>,
    /// `None` when nothing was actually Up.
    pub recall: Option<f64>,
}

pub fn metrics(counts: &ConfusionCounts) -> Result<Metrics, EvalError> {
    let total = counts.total();
    if total == 0 {
        return Err(EvalError::NoScoredItems);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(Metrics {
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        precision: ratio(counts.tp, counts.tp + counts.fp),
        recall: ratio(counts.tp, counts.tp + counts.fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub bits: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub h_y_given_x: f64,
}

/// Plug-in estimate of `I(X;Y)` in bits from paired discrete observations.
///
/// Each cell contributes `c_xy * log2(c_xy * n / (c_x * c_y))`. The terms are
/// summed in sorted order, so the result does not depend on how categories
/// are named or which argument comes first.
pub fn mutual_information<X: Ord, Y: Ord>(
    signal: &[X],
    outcome: &[Y],
) -> Result<MutualInformation, EvalError> {
    if signal.len() != outcome.len() {
        return Err(EvalError::LengthMismatch {
            signal: signal.len(),
            outcome: outcome.len(),
        });
    }
    if signal.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = signal.len() as u128;
    let mut joint: BTreeMap<(&X, &Y), u128> = BTreeMap::new();
    let mut px: BTreeMap<&X, u128> = BTreeMap::new();
    let mut py: BTreeMap<&Y, u128> = BTreeMap::new();
    for (x, y) in signal.iter().zip(outcome) {
        *joint.entry((x, y)).or_default() += 1;
        *px.entry(x).or_default() += 1;
        *py.entry(y).or_default() += 1;
    }

    let nf = n as f64;
    let mi_terms: Vec<f64> = joint
        .iter()
        .map(|((x, y), &c)| {
            let ratio = (c * n) as f64 / (px[x] * py[y]) as f64;
            c as f64 * ratio.log2()
        })
        .collect();
    let cond_terms: Vec<f64> = joint
        .iter()
        .map(|((x, _), &c)| c as f64 * (px[x] as f64 / c as f64).log2())
        .collect();

    let bits = (sorted_sum(mi_terms) / nf).max(0.0);
    Ok(MutualInformation {
        bits,
        h_x: entropy_of_counts(px.values().copied(), nf),
        h_y: entropy_of_counts(py.values().copied(), nf),
        h_y_given_x: sorted_sum(cond_terms) / nf,
    })
}

fn entropy_of_counts(counts: impl Iterator<Item = u128>, n: f64) -> f64 {
    let terms: Vec<f64> = counts
        .map(|c| c as f64 * (n / c as f64).log2())
        .collect();
    sorted_sum(terms) / n
}

fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Scoring result plus information content for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub counts: ConfusionCounts,
    pub excluded_flat: u64,
    pub excluded_unparseable: u64,
    pub excluded_neutral: u64,
    pub unparseable: u64,
    pub mutual_information_bits: f64,
}

/// Category of a prediction as an information signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SignalClass {
    Label(Sentiment),
    Unparseable,
}

/// Scores `predictions` and measures the mutual information between the
/// raw predicted class (unparseable kept as its own class) and the Up/Down
/// label over every prediction whose label is not Flat.
pub fn evaluate(
    predictions: &[PredictionRecord],
    labels: &HashMap<String, Direction>,
    mode: ScoringMode,
    unparseable: UnparseablePolicy,
) -> Result<MetricsReport, EvalError> {
    let outcome = score(predictions, labels, mode, unparseable)?;
    let m = metrics(&outcome.counts)?;
    let (signal, moves): (Vec<SignalClass>, Vec<Direction>) = predictions
        .iter()
        .filter_map(|p| {
            let d = labels[&p.article_id];
            (d != Direction::Flat).then(|| {
                let s = p.sentiment.map(SignalClass::Label).unwrap_or(SignalClass::Unparseable);
                (s, d)
            })
        })
        .unzip();
    let mi = mutual_information(&signal, &moves)?;
    Ok(MetricsReport {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        counts: outcome.counts,
        excluded_flat: outcome.excluded_flat,
        excluded_unparseable: outcome.excluded_unparseable,
        excluded_neutral: outcome.excluded_neutral,
        unparseable: outcome.unparseable,
        mutual_information_bits: mi.bits,
    })
}
