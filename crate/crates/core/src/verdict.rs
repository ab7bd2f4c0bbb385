//! Extracting a sentiment label from free-text completions and combining
//! self-consistency samples.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt_forge::{Sentiment, Strategy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("cannot vote over an empty sample list")]
    EmptySamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseMethod {
    FinalAnswerLine,
    LastKeyword,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub sentiment: Option<Sentiment>,
    pub rationale: String,
    pub method: ParseMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub article_id: String,
    pub strategy: Strategy,
    /// `None` iff `parse_method` is `Unparseable`.
    pub sentiment: Option<Sentiment>,
    pub rationale: String,
    pub raw_completion: String,
    pub parse_method: ParseMethod,
    pub samples_used: usize,
    /// Per-sample labels when more than one sample was drawn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_sentiments: Vec<Option<Sentiment>>,
}

fn final_answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)final\s+answer\s*:[\s*_`]*(positive|negative|neutral)\b")
            .expect("valid regex")
    })
}

fn keyword_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(positive|negative|neutral)\b").expect("valid regex"))
}

/// Rule cascade: the last `Final answer: <label>` wins; otherwise the last
/// standalone label word; otherwise unparseable. The rationale is the text
/// before the matched region, trimmed.
pub fn parse_sentiment(completion: &str) -> ParsedVerdict {
    let matched = final_answer_re()
        .captures_iter(completion)
        .last()
        .map(|c| (c, ParseMethod::FinalAnswerLine))
        .or_else(|| {
            keyword_re()
                .captures_iter(completion)
                .last()
                .map(|c| (c, ParseMethod::LastKeyword))
        });
    match matched {
        Some((caps, method)) => {
            let whole = caps.get(0).expect("group 0 always present");
            let label = caps[1].parse().expect("regex only admits known labels");
            ParsedVerdict {
                sentiment: Some(label),
                rationale: completion[..whole.start()].trim().to_string(),
                method,
            }
        }
        None => ParsedVerdict {
            sentiment: None,
            rationale: completion.trim().to_string(),
            method: ParseMethod::Unparseable,
        },
    }
}

/// Plurality vote; any tie for first place resolves to Neutral.
pub fn self_consistency_vote(samples: &[Sentiment]) -> Result<Sentiment, VerdictError> {
    if samples.is_empty() {
        return Err(VerdictError::EmptySamples);
    }
    let mut counts: BTreeMap<Sentiment, usize> = BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    let mut leaders = counts.iter().filter(|(_, &c)| c == best).map(|(&s, _)| s);
    match (leaders.next(), leaders.next()) {
        (Some(only), None) => Ok(only),
        _ => Ok(Sentiment::Neutral),
    }
}

/// Votes over parsed samples, dropping unparseable ones. Returns `None` when
/// every sample was unparseable.
pub fn vote_parsed(samples: &[Option<Sentiment>]) -> Result<Option<Sentiment>, VerdictError> {
    if samples.is_empty() {
        return Err(VerdictError::EmptySamples);
    }
    let parsed: Vec<Sentiment> = samples.iter().flatten().copied().collect();
    if parsed.is_empty() {
        return Ok(None);
    }
    self_consistency_vote(&parsed).map(Some)
}

/// Builds the prediction for one article from its sample completions. The
/// stored rationale and raw text come from the first sample that agrees
/// with the vote, or the first sample if none does.
pub fn aggregate(
    article_id: &str,
    strategy: Strategy,
    completions: &[String],
) -> Result<PredictionRecord, VerdictError> {
    if completions.is_empty() {
        return Err(VerdictError::EmptySamples);
    }
    let parsed: Vec<ParsedVerdict> = completions.iter().map(|c| parse_sentiment(c)).collect();
    let labels: Vec<Option<Sentiment>> = parsed.iter().map(|p| p.sentiment).collect();
    let vote = vote_parsed(&labels)?;
    let pick = parsed
        .iter()
        .position(|p| p.sentiment.is_some() && p.sentiment == vote)
        .unwrap_or(0);
    let chosen = &parsed[pick];
    let parse_method = match vote {
        None => ParseMethod::Unparseable,
        Some(_) if chosen.sentiment.is_some() => chosen.method,
        // A tie resolved to Neutral that no sample voted for.
        Some(_) => parsed
            .iter()
            .find(|p| p.sentiment.is_some())
            .map(|p| p.method)
            .unwrap_or(ParseMethod::LastKeyword),
    };
    Ok(PredictionRecord {
        article_id: article_id.to_string(),
        strategy,
        sentiment: vote,
        rationale: chosen.rationale.clone(),
        raw_completion: completions[pick].clone(),
        parse_method,
        samples_used: completions.len(),
        sample_sentiments: if completions.len() > 1 { labels } else { Vec::new() },
    })
}
