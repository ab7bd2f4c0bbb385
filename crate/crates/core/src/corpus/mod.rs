//! News and price ingestion, direction labeling, and the temporal split.
//!
//! Everything here is a pure function over immutable inputs. Articles are
//! joined to the same-day open/close bar of their ticker, and the split puts
//! every article at or after the cutoff on the test side.

mod ingest;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{
    load_news, load_news_at, load_prices, write_rejections, ColumnMap, NewsFormat, NewsIngest,
    Rejection,
};

/// Default relative-return threshold below which a move is Flat.
pub const DEFAULT_THRESHOLD: f64 = 0.001;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown news format '{0}' (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("{path}: zero valid rows")]
    ZeroValidRows { path: String },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: duplicate price key ({ticker}, {date})")]
    DuplicatePriceKey {
        path: String,
        row: usize,
        ticker: String,
        date: NaiveDate,
    },
    #[error("{path} row {row}: non-positive price for {ticker} on {date}")]
    NonPositivePrice {
        path: String,
        row: usize,
        ticker: String,
        date: NaiveDate,
    },
    #[error("{path} row {row}: {reason}")]
    MalformedPriceRow {
        path: String,
        row: usize,
        reason: String,
    },
    #[error("empty test side: no article at or after cutoff {0}")]
    EmptyTestSide(DateTime<Utc>),
    #[error("empty dev side: no article before cutoff {0}")]
    EmptyDevSide(DateTime<Utc>),
    #[error("threshold must be a finite relative return >= 0, got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub ticker: String,
    pub headline: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub source: String,
}

impl NewsArticle {
    /// Headline and body joined, used as the retrieval text of the article.
    pub fn full_text(&self) -> String {
        if self.body.is_empty() {
            self.headline.clone()
        } else {
            format!("{} {}", self.headline, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub ticker: String,
    pub date: NaiveDate,
    pub open: f64,
    pub close: f64,
}

/// Per-ticker daily bars keyed by `(ticker, date)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    bars: BTreeMap<(String, NaiveDate), PriceBar>,
}

impl PriceBar {
    pub fn new(ticker: &str, date: NaiveDate, open: f64, close: f64) -> Self {
        Self {
            ticker: ticker.to_string(),
            date,
            open,
            close,
        }
    }

    pub fn relative_return(&self) -> f64 {
        self.close / self.open - 1.0
    }
}

impl PriceTable {
    /// Inserts a bar, returning `false` if the key is already present.
    pub fn insert(&mut self, bar: PriceBar) -> bool {
        use std::collections::btree_map::Entry;
        match self.bars.entry((bar.ticker.clone(), bar.date)) {
            Entry::Occupied(_) => false,
            Entry::Vacant(slot) => {
                slot.insert(bar);
                true
            }
        }
    }

    pub fn get(&self, ticker: &str, date: NaiveDate) -> Option<&PriceBar> {
        self.bars.get(&(ticker.to_string(), date))
    }

    /// First bar for `ticker` strictly after `date`.
    pub fn next_after(&self, ticker: &str, date: NaiveDate) -> Option<&PriceBar> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.bars
            .range((Excluded((ticker.to_string(), date)), Unbounded))
            .next()
            .filter(|((t, _), _)| t == ticker)
            .map(|(_, bar)| bar)
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PriceBar> {
        self.bars.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "Up",
            Direction::Down => "Down",
            Direction::Flat => "Flat",
        })
    }
}

/// Classifies the same-day move of `bar`.
///
/// With `r = close/open - 1`: Up when `r >= threshold`, Down when
/// `r <= -threshold`, Flat otherwise. An unchanged price is always Flat,
/// including at `threshold == 0`.
pub fn derive_direction(bar: &PriceBar, threshold: f64) -> Direction {
    let r = bar.relative_return();
    if r == 0.0 {
        Direction::Flat
    } else if r >= threshold {
        Direction::Up
    } else if r <= -threshold {
        Direction::Down
    } else {
        Direction::Flat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LabelStatus {
    Labeled {
        direction: Direction,
        trade_date: NaiveDate,
        relative_return: f64,
    },
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledArticle {
    pub article: NewsArticle,
    pub label: LabelStatus,
}

impl LabeledArticle {
    pub fn direction(&self) -> Option<Direction> {
        match self.label {
            LabelStatus::Labeled { direction, .. } => Some(direction),
            LabelStatus::Unlabeled => None,
        }
    }

    /// Labeled Up or Down. Flat and unlabeled articles are kept in the
    /// corpus but never scored.
    pub fn is_evaluable(&self) -> bool {
        matches!(self.direction(), Some(Direction::Up | Direction::Down))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOptions {
    pub threshold: f64,
    /// Move articles published at or after `market_close_utc` to the next
    /// available bar of the ticker.
    pub shift_after_close: bool,
    pub market_close_utc: NaiveTime,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            shift_after_close: false,
            market_close_utc: NaiveTime::from_hms_opt(20, 0, 0).expect("valid time"),
        }
    }
}

impl LabelOptions {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(CorpusError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

pub fn attach_labels(
    articles: &[NewsArticle],
    prices: &PriceTable,
    options: &LabelOptions,
) -> Vec<LabeledArticle> {
    articles
        .iter()
        .map(|article| {
            let date = article.timestamp.date_naive();
            let bar = if options.shift_after_close && article.timestamp.time() >= options.market_close_utc
            {
                prices.next_after(&article.ticker, date)
            } else {
                prices.get(&article.ticker, date)
            };
            let label = match bar {
                Some(bar) => LabelStatus::Labeled {
                    direction: derive_direction(bar, options.threshold),
                    trade_date: bar.date,
                    relative_return: bar.relative_return(),
                },
                None => LabelStatus::Unlabeled,
            };
            LabeledArticle {
                article: article.clone(),
                label,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub up: usize,
    pub down: usize,
    pub flat: usize,
    pub unlabeled: usize,
}

impl LabelSummary {
    pub fn of(labeled: &[LabeledArticle]) -> Self {
        let mut summary = Self::default();
        for item in labeled {
            match item.direction() {
                Some(Direction::Up) => summary.up += 1,
                Some(Direction::Down) => summary.down += 1,
                Some(Direction::Flat) => summary.flat += 1,
                None => summary.unlabeled += 1,
            }
        }
        summary
    }

    pub fn total(&self) -> usize {
        self.up + self.down + self.flat + self.unlabeled
    }

    pub fn evaluable(&self) -> usize {
        self.up + self.down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub dev: Vec<LabeledArticle>,
    pub test: Vec<LabeledArticle>,
    pub cutoff: DateTime<Utc>,
}

impl SplitCorpus {
    pub fn evaluable_test(&self) -> impl Iterator<Item = &LabeledArticle> {
        self.test.iter().filter(|a| a.is_evaluable())
    }

    pub fn dev_ids(&self) -> HashSet<&str> {
        self.dev.iter().map(|a| a.article.id.as_str()).collect()
    }
}

/// Splits at `cutoff`: strictly earlier articles are dev, the rest test.
/// Both sides keep the input order sorted by `(timestamp, id)`.
pub fn temporal_split(
    labeled: &[LabeledArticle],
    cutoff: DateTime<Utc>,
) -> Result<SplitCorpus, CorpusError> {
    let mut sorted: Vec<&LabeledArticle> = labeled.iter().collect();
    sorted.sort_by(|a, b| {
        (a.article.timestamp, &a.article.id).cmp(&(b.article.timestamp, &b.article.id))
    });
    let (dev, test): (Vec<&LabeledArticle>, Vec<&LabeledArticle>) = sorted
        .into_iter()
        .partition(|a| a.article.timestamp < cutoff);
    if test.is_empty() {
        return Err(CorpusError::EmptyTestSide(cutoff));
    }
    if dev.is_empty() {
        return Err(CorpusError::EmptyDevSide(cutoff));
    }
    Ok(SplitCorpus {
        dev: dev.into_iter().cloned().collect(),
        test: test.into_iter().cloned().collect(),
        cutoff,
    })
}
