use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CorpusError, NewsArticle, PriceBar, PriceTable};

const NEWS_FIELDS: [&str; 6] = ["id", "timestamp", "ticker", "headline", "body", "source"];
const REQUIRED_NEWS_FIELDS: [&str; 4] = ["id", "timestamp", "ticker", "headline"];
const PRICE_FIELDS: [&str; 4] = ["ticker", "date", "open", "close"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewsFormat {
    Csv,
    Jsonl,
}

impl FromStr for NewsFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(NewsFormat::Csv),
            "jsonl" | "ndjson" => Ok(NewsFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl NewsFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        ext.parse()
    }
}

/// Maps canonical field names (`id`, `timestamp`, ...) to the column or key
/// names used by a particular dataset. Unmapped fields use their canonical
/// name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMap(pub BTreeMap<String, String>);

impl ColumnMap {
    pub fn source_name<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsIngest {
    pub articles: Vec<NewsArticle>,
    pub rejections: Vec<Rejection>,
}

pub fn load_news(
    path: &Path,
    format: NewsFormat,
    columns: &ColumnMap,
) -> Result<NewsIngest, CorpusError> {
    load_news_at(path, format, columns, Utc::now())
}

/// Loads news as of `ingested_at`; rows stamped later than that are rejected.
///
/// Rows failing validation are reported by 1-based row number: CSV counts
/// records after the header, JSONL uses the physical line number.
pub fn load_news_at(
    path: &Path,
    format: NewsFormat,
    columns: &ColumnMap,
    ingested_at: DateTime<Utc>,
) -> Result<NewsIngest, CorpusError> {
    let raw_rows = match format {
        NewsFormat::Csv => read_csv_rows(path, columns)?,
        NewsFormat::Jsonl => read_jsonl_rows(path, columns)?,
    };

    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    let mut rejections = Vec::new();
    for (row_number, row) in raw_rows {
        let parsed = row.and_then(|fields| validate_article(fields, ingested_at));
        match parsed {
            Ok(article) => {
                if seen.insert(article.id.clone()) {
                    articles.push(article);
                } else {
                    rejections.push(Rejection {
                        row_number,
                        reason: format!("duplicate id '{}'", article.id),
                    });
                }
            }
            Err(reason) => rejections.push(Rejection { row_number, reason }),
        }
    }

    if articles.is_empty() {
        return Err(CorpusError::ZeroValidRows {
            path: path.display().to_string(),
        });
    }
    Ok(NewsIngest {
        articles,
        rejections,
    })
}

type RawFields = BTreeMap<&'static str, String>;
type RawRow = (usize, Result<RawFields, String>);

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_csv_rows(path: &Path, columns: &ColumnMap) -> Result<Vec<RawRow>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(open(path)?);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        // An empty file has no header; treat it as zero rows.
        Err(_) => {
            return Err(CorpusError::ZeroValidRows {
                path: path.display().to_string(),
            })
        }
    };
    if headers.is_empty() {
        return Err(CorpusError::ZeroValidRows {
            path: path.display().to_string(),
        });
    }
    let mut index = BTreeMap::new();
    for field in NEWS_FIELDS {
        let name = columns.source_name(field);
        match headers.iter().position(|h| h.trim() == name) {
            Some(i) => {
                index.insert(field, i);
            }
            None if REQUIRED_NEWS_FIELDS.contains(&field) => {
                return Err(CorpusError::MissingColumn {
                    path: path.display().to_string(),
                    column: name.to_string(),
                })
            }
            None => {}
        }
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_number = i + 1;
        let row = record.map_err(|e| format!("malformed CSV record: {e}")).map(|rec| {
            index
                .iter()
                .map(|(field, col)| (*field, rec.get(*col).unwrap_or_default().to_string()))
                .collect::<RawFields>()
        });
        rows.push((row_number, row));
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path, columns: &ColumnMap) -> Result<Vec<RawRow>, CorpusError> {
    let reader = BufReader::new(open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str::<serde_json::Value>(&line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|value| {
                let obj = value
                    .as_object()
                    .ok_or_else(|| "line is not a JSON object".to_string())?;
                let mut fields = RawFields::new();
                for field in NEWS_FIELDS {
                    match obj.get(columns.source_name(field)) {
                        None | Some(serde_json::Value::Null) => {}
                        Some(serde_json::Value::String(s)) => {
                            fields.insert(field, s.clone());
                        }
                        Some(other) => {
                            fields.insert(field, other.to_string());
                        }
                    }
                }
                Ok(fields)
            });
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn validate_article(
    mut fields: RawFields,
    ingested_at: DateTime<Utc>,
) -> Result<NewsArticle, String> {
    let mut take = |name: &'static str| fields.remove(name).unwrap_or_default().trim().to_string();
    let id = take("id");
    let timestamp_raw = take("timestamp");
    let ticker = take("ticker");
    let headline = take("headline");
    let body = take("body");
    let source = take("source");

    if id.is_empty() {
        return Err("empty id".into());
    }
    if ticker.is_empty() {
        return Err("empty ticker".into());
    }
    if headline.is_empty() {
        return Err("empty headline".into());
    }
    let timestamp = parse_timestamp(&timestamp_raw)
        .ok_or_else(|| format!("unparseable timestamp '{timestamp_raw}'"))?;
    if timestamp > ingested_at {
        return Err(format!("timestamp {timestamp} is in the future"));
    }
    Ok(NewsArticle {
        id,
        timestamp,
        ticker,
        headline,
        body,
        source,
    })
}

/// RFC 3339, or `YYYY-MM-DD HH:MM:SS[ UTC]` read as UTC.
pub(crate) fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts.with_timezone(&Utc));
    }
    let naive = raw.strip_suffix(" UTC").unwrap_or(raw);
    NaiveDateTime::parse_from_str(naive, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|n| n.and_utc())
}

pub fn load_prices(path: &Path) -> Result<PriceTable, CorpusError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedPriceRow {
            path: display.clone(),
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let mut index = [0usize; 4];
    for (slot, field) in index.iter_mut().zip(PRICE_FIELDS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == field)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: display.clone(),
                column: field.to_string(),
            })?;
    }

    let mut table = PriceTable::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let malformed = |reason: String| CorpusError::MalformedPriceRow {
            path: display.clone(),
            row,
            reason,
        };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let get = |k: usize| record.get(index[k]).unwrap_or_default().trim();
        let ticker = get(0).to_string();
        if ticker.is_empty() {
            return Err(malformed("empty ticker".into()));
        }
        let date = NaiveDate::parse_from_str(get(1), "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date '{}': {e}", get(1))))?;
        let open: f64 = get(2)
            .parse()
            .map_err(|e| malformed(format!("bad open '{}': {e}", get(2))))?;
        let close: f64 = get(3)
            .parse()
            .map_err(|e| malformed(format!("bad close '{}': {e}", get(3))))?;
        // NaN fails both comparisons, so it is rejected here too.
        if !(open > 0.0 && close > 0.0 && open.is_finite() && close.is_finite()) {
            return Err(CorpusError::NonPositivePrice {
                path: display,
                row,
                ticker,
                date,
            });
        }
        if !table.insert(PriceBar::new(&ticker, date, open, close)) {
            return Err(CorpusError::DuplicatePriceKey {
                path: display,
                row,
                ticker,
                date,
            });
        }
    }
    Ok(table)
}

/// Writes the rejection report as JSONL of `{row_number, reason}`.
pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for r in rejections {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
