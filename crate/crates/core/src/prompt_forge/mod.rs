//! Prompt construction for every strategy, exemplar selection, retrieval
//! augmentation, and the token budget.
//!
//! Builders are pure: the same article, exemplars and configuration always
//! render byte-identical text. A prompt that does not fit the budget is an
//! error; nothing is truncated to make it fit.

mod exemplars;
mod template;
pub mod tfidf;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NewsArticle;

pub use exemplars::{
    load_exemplar_pool, load_knowledge, select_exemplars, Exemplar, ExemplarSelector,
    KnowledgeBlock, MAX_FACT_CHARS,
};
pub use template::{default_template_source, Placeholder, Template, TemplateSet, ANALOGY_CUE, COT_CUE};
pub use tfidf::{SimilarityScorer, TfIdfIndex};

/// Default prompt budget in estimated tokens (exclusive upper bound).
pub const DEFAULT_BUDGET: usize = 1024;
/// Default character limit for a retrieved snippet.
pub const DEFAULT_SNIPPET_CHARS: usize = 280;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{strategy} prompt for {article_id} needs ~{estimate} tokens, budget is {budget}")]
    BudgetExceeded {
        strategy: Strategy,
        article_id: String,
        estimate: usize,
        budget: usize,
    },
    #[error("{strategy} template lacks placeholder {placeholder}")]
    MissingPlaceholder {
        strategy: Strategy,
        placeholder: String,
    },
    #[error("unknown template placeholder '{0}'")]
    UnknownPlaceholder(String),
    #[error("exemplar pool is empty")]
    EmptyPool,
    #[error("few-shot prompt needs at least one exemplar")]
    NoExemplars,
    #[error("invalid exemplar count {0}")]
    InvalidK(usize),
    #[error("no {0} exemplar available in the pool")]
    UnsatisfiableConstraint(Sentiment),
    #[error("{source_id} is not earlier than target {target_id}")]
    TemporalViolation { source_id: String, target_id: String },
    #[error("exemplar {0} has no rationale steps")]
    EmptyRationale(String),
    #[error("knowledge for {knowledge} used with a {article} article")]
    TickerMismatch { knowledge: String, article: String },
    #[error("fact for {ticker} is {len} characters (max {max})", max = MAX_FACT_CHARS)]
    FactTooLong { ticker: String, len: usize },
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "Positive",
            Sentiment::Negative => "Negative",
            Sentiment::Neutral => "Neutral",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            other => Err(format!("unknown sentiment '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    ZeroShot,
    FewShot,
    CoT,
    DKCoT,
    ADFCoT,
}

impl Strategy {
    /// Report order.
    pub const ALL: [Strategy; 5] = [
        Strategy::ZeroShot,
        Strategy::FewShot,
        Strategy::CoT,
        Strategy::DKCoT,
        Strategy::ADFCoT,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "Zero-Shot",
            Strategy::FewShot => "Few-Shot",
            Strategy::CoT => "CoT",
            Strategy::DKCoT => "DK-CoT",
            Strategy::ADFCoT => "AD-FCoT",
        }
    }

    /// File-name friendly form, e.g. `dk-cot`.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero-shot",
            Strategy::FewShot => "few-shot",
            Strategy::CoT => "cot",
            Strategy::DKCoT => "dk-cot",
            Strategy::ADFCoT => "ad-fcot",
        }
    }

    pub fn uses_exemplars(self) -> bool {
        matches!(self, Strategy::FewShot | Strategy::ADFCoT)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    /// Accepts `ZeroShot`, `zero-shot`, `Zero-Shot`, `zero_shot`, ...
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "zeroshot" => Ok(Strategy::ZeroShot),
            "fewshot" => Ok(Strategy::FewShot),
            "cot" => Ok(Strategy::CoT),
            "dkcot" => Ok(Strategy::DKCoT),
            "adfcot" => Ok(Strategy::ADFCoT),
            _ => Err(PromptError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Exemplar,
    Retrieved,
    Knowledge,
}

/// A piece of dated material included in a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub id: String,
    pub kind: SourceKind,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub target_article_id: String,
    pub target_timestamp: DateTime<Utc>,
    pub text: String,
    pub token_estimate: usize,
    pub exemplar_ids: Vec<String>,
    pub retrieved_ids: Vec<String>,
    pub knowledge_used: bool,
    pub sources: Vec<SourceRef>,
}

/// A retrieved historical article, cut to the configured length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub source_id: String,
    pub ticker: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

/// Character count divided by four, rounded up. A rough stand-in for
/// subword tokenization that does not depend on any model's tokenizer.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// TF-IDF retrieval over a fixed history of articles.
pub struct ContextRetriever {
    history: Vec<NewsArticle>,
    index: TfIdfIndex,
}

impl ContextRetriever {
    pub fn new(history: Vec<NewsArticle>) -> Self {
        let texts: Vec<String> = history.iter().map(NewsArticle::full_text).collect();
        let index = TfIdfIndex::new(&texts);
        Self { history, index }
    }

    /// Top `k` history articles by similarity to `target`, each cut to
    /// `char_limit` characters. Every history article must predate the
    /// target.
    pub fn retrieve(
        &self,
        target: &NewsArticle,
        k: usize,
        char_limit: usize,
    ) -> Result<Vec<Snippet>, PromptError> {
        if let Some(late) = self
            .history
            .iter()
            .filter(|a| a.timestamp >= target.timestamp)
            .min_by(|a, b| a.id.cmp(&b.id))
        {
            return Err(PromptError::TemporalViolation {
                source_id: late.id.clone(),
                target_id: target.id.clone(),
            });
        }
        let scores = self.index.similarities(&target.full_text());
        let ranked = tfidf::rank_by(&scores, |i| self.history[i].id.as_str());
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|i| {
                let a = &self.history[i];
                Snippet {
                    source_id: a.id.clone(),
                    ticker: a.ticker.clone(),
                    timestamp: a.timestamp,
                    text: truncate_chars(&a.full_text(), char_limit),
                }
            })
            .collect())
    }
}

pub fn retrieve_context(
    history: &[NewsArticle],
    target: &NewsArticle,
    k: usize,
    char_limit: usize,
) -> Result<Vec<Snippet>, PromptError> {
    ContextRetriever::new(history.to_vec()).retrieve(target, k, char_limit)
}

fn truncate_chars(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => text[..byte].trim_end().to_string(),
        None => text.to_string(),
    }
}

/// Renders prompts for all strategies under one template set and budget.
#[derive(Debug, Clone)]
pub struct PromptForge {
    pub templates: TemplateSet,
    pub budget: usize,
    /// Class order of analogical exemplars.
    pub exemplar_order: Vec<Sentiment>,
}

impl Default for PromptForge {
    fn default() -> Self {
        Self {
            templates: TemplateSet::default(),
            budget: DEFAULT_BUDGET,
            exemplar_order: vec![Sentiment::Negative, Sentiment::Positive],
        }
    }
}

struct Parts<'a> {
    article: &'a NewsArticle,
    context: &'a [Snippet],
    exemplars: &'a [Exemplar],
    knowledge: Option<&'a KnowledgeBlock>,
}

impl PromptForge {
    pub fn build_zero_shot(
        &self,
        article: &NewsArticle,
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        self.assemble(
            Strategy::ZeroShot,
            &[Placeholder::Article],
            Parts {
                article,
                context,
                exemplars: &[],
                knowledge: None,
            },
        )
    }

    /// Exemplars are shown with their labels only, never their rationale.
    pub fn build_few_shot(
        &self,
        article: &NewsArticle,
        exemplars: &[Exemplar],
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        if exemplars.is_empty() {
            return Err(PromptError::NoExemplars);
        }
        self.assemble(
            Strategy::FewShot,
            &[Placeholder::Article, Placeholder::Exemplars],
            Parts {
                article,
                context,
                exemplars,
                knowledge: None,
            },
        )
    }

    pub fn build_cot(
        &self,
        article: &NewsArticle,
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        self.assemble(
            Strategy::CoT,
            &[Placeholder::Article, Placeholder::Cue],
            Parts {
                article,
                context,
                exemplars: &[],
                knowledge: None,
            },
        )
    }

    pub fn build_dk_cot(
        &self,
        article: &NewsArticle,
        knowledge: &KnowledgeBlock,
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        if knowledge.ticker != article.ticker {
            return Err(PromptError::TickerMismatch {
                knowledge: knowledge.ticker.clone(),
                article: article.ticker.clone(),
            });
        }
        knowledge.validate()?;
        if let Some(as_of) = knowledge.as_of {
            if as_of >= article.timestamp {
                return Err(PromptError::TemporalViolation {
                    source_id: format!("knowledge:{}", knowledge.ticker),
                    target_id: article.id.clone(),
                });
            }
        }
        self.assemble(
            Strategy::DKCoT,
            &[Placeholder::Article, Placeholder::Knowledge, Placeholder::Cue],
            Parts {
                article,
                context,
                exemplars: &[],
                knowledge: Some(knowledge),
            },
        )
    }

    /// Selects one exemplar per class in `exemplar_order` and renders the
    /// analogical chain-of-thought prompt.
    pub fn build_ad_fcot(
        &self,
        article: &NewsArticle,
        selector: &ExemplarSelector,
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        let chosen = self.select_analogies(article, selector)?;
        self.build_ad_fcot_with(article, &chosen, context)
    }

    /// Renders the analogical prompt from already selected exemplars.
    pub fn build_ad_fcot_with(
        &self,
        article: &NewsArticle,
        exemplars: &[Exemplar],
        context: &[Snippet],
    ) -> Result<PromptBundle, PromptError> {
        if exemplars.is_empty() {
            return Err(PromptError::NoExemplars);
        }
        if let Some(e) = exemplars.iter().find(|e| e.rationale.is_empty()) {
            return Err(PromptError::EmptyRationale(e.source_article_id.clone()));
        }
        self.assemble(
            Strategy::ADFCoT,
            &[Placeholder::Article, Placeholder::Exemplars, Placeholder::Cue],
            Parts {
                article,
                context,
                exemplars,
                knowledge: None,
            },
        )
    }

    /// The class-balanced exemplar pair shared by few-shot and analogical
    /// prompts.
    pub fn select_analogies(
        &self,
        article: &NewsArticle,
        selector: &ExemplarSelector,
    ) -> Result<Vec<Exemplar>, PromptError> {
        selector.select(article, self.exemplar_order.len(), Some(&self.exemplar_order))
    }

    fn assemble(
        &self,
        strategy: Strategy,
        required: &[Placeholder],
        parts: Parts<'_>,
    ) -> Result<PromptBundle, PromptError> {
        let template = self.templates.get(strategy);
        template.require(strategy, required)?;
        let article = parts.article;

        let mut sources = Vec::new();
        for e in parts.exemplars {
            if e.timestamp >= article.timestamp {
                return Err(PromptError::TemporalViolation {
                    source_id: e.source_article_id.clone(),
                    target_id: article.id.clone(),
                });
            }
            sources.push(SourceRef {
                id: e.source_article_id.clone(),
                kind: SourceKind::Exemplar,
                timestamp: e.timestamp,
            });
        }
        for s in parts.context {
            if s.timestamp >= article.timestamp {
                return Err(PromptError::TemporalViolation {
                    source_id: s.source_id.clone(),
                    target_id: article.id.clone(),
                });
            }
            sources.push(SourceRef {
                id: s.source_id.clone(),
                kind: SourceKind::Retrieved,
                timestamp: s.timestamp,
            });
        }
        if let Some(as_of) = parts.knowledge.and_then(|k| k.as_of) {
            sources.push(SourceRef {
                id: format!("knowledge:{}", article.ticker),
                kind: SourceKind::Knowledge,
                timestamp: as_of,
            });
        }

        let text = template.render(|p| match p {
            Placeholder::Article => render_target(article, parts.context),
            Placeholder::Exemplars => {
                if strategy == Strategy::ADFCoT {
                    render_analogies(parts.exemplars)
                } else {
                    render_labeled(parts.exemplars)
                }
            }
            Placeholder::Knowledge => parts
                .knowledge
                .map(|k| render_knowledge(k, &article.ticker))
                .unwrap_or_else(|| render_knowledge_header(&article.ticker)),
            Placeholder::Cue => match strategy {
                Strategy::ADFCoT => ANALOGY_CUE.to_string(),
                _ => COT_CUE.to_string(),
            },
        });

        let token_estimate = estimate_tokens(&text);
        if token_estimate >= self.budget {
            return Err(PromptError::BudgetExceeded {
                strategy,
                article_id: article.id.clone(),
                estimate: token_estimate,
                budget: self.budget,
            });
        }
        Ok(PromptBundle {
            strategy,
            target_article_id: article.id.clone(),
            target_timestamp: article.timestamp,
            text,
            token_estimate,
            exemplar_ids: parts
                .exemplars
                .iter()
                .map(|e| e.source_article_id.clone())
                .collect(),
            retrieved_ids: parts.context.iter().map(|s| s.source_id.clone()).collect(),
            knowledge_used: parts.knowledge.is_some(),
            sources,
        })
    }
}

fn render_target(article: &NewsArticle, context: &[Snippet]) -> String {
    let mut out = String::new();
    if !context.is_empty() {
        out.push_str("Related past news:\n");
        for s in context {
            out.push_str(&format!(
                "- [{} {}] {}\n",
                s.timestamp.format("%Y-%m-%d"),
                s.ticker,
                s.text
            ));
        }
        out.push('\n');
    }
    out.push_str("News to classify:\n");
    out.push_str(&format!("Ticker: {}\nHeadline: {}", article.ticker, article.headline));
    if !article.body.is_empty() {
        out.push_str(&format!("\nBody: {}", article.body));
    }
    out
}

fn render_labeled(exemplars: &[Exemplar]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| format!("Example {}:\nNews: {}\nSentiment: {}", i + 1, e.excerpt, e.label))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_analogies(exemplars: &[Exemplar]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let steps: String = e
                .rationale
                .iter()
                .enumerate()
                .map(|(j, step)| format!("{}. {}\n", j + 1, step))
                .collect();
            format!(
                "Example {} ({}):\nNews: {}\nReasoning:\n{}Sentiment: {}",
                i + 1,
                e.label,
                e.excerpt,
                steps,
                e.label
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_knowledge_header(ticker: &str) -> String {
    format!("Background knowledge ({ticker}):")
}

fn render_knowledge(knowledge: &KnowledgeBlock, ticker: &str) -> String {
    let mut out = render_knowledge_header(ticker);
    for fact in &knowledge.facts {
        out.push_str("\n- ");
        out.push_str(fact);
    }
    out
}
