use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::HarnessError;
use crate::corpus::{ColumnMap, LabelOptions, NewsFormat, DEFAULT_THRESHOLD};
use crate::evalkit::{ScoringMode, UnparseablePolicy};
use crate::gateway::{GenerationParams, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_TOKENS};
use crate::prompt_forge::{Sentiment, Strategy, DEFAULT_BUDGET, DEFAULT_SNIPPET_CHARS};

/// One experiment, read from a single JSON file. Relative paths resolve
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Mandatory; kept optional here so a missing value is reported as a
    /// validation error rather than a parse error.
    #[serde(default)]
    pub cutoff: Option<DateTime<Utc>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub shift_after_close: bool,
    #[serde(default = "all_strategies", with = "strategy_names")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub self_consistency: SelfConsistencyConfig,
    #[serde(default)]
    pub rag: RagConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub scoring_mode: ScoringMode,
    #[serde(default)]
    pub unparseable: UnparseablePolicy,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Defaults to `cache.jsonl` inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    /// Seed for randomized fixtures; the run itself is deterministic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Optional template overrides keyed by strategy slug.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<String, PathBuf>,
    #[serde(default = "default_exemplar_order")]
    pub exemplar_order: Vec<Sentiment>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub news: PathBuf,
    /// Inferred from the file extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub news_format: Option<String>,
    pub prices: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<PathBuf>,
    #[serde(default)]
    pub column_map: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfConsistencyConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_sc_n")]
    pub n: u32,
    #[serde(default = "default_sc_temperature")]
    pub temperature: f64,
}

impl Default for SelfConsistencyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            n: default_sc_n(),
            temperature: default_sc_temperature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_rag_k")]
    pub k: usize,
    #[serde(default = "default_snippet_chars")]
    pub snippet_chars: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k: default_rag_k(),
            snippet_chars: default_snippet_chars(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rulebook: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: None,
            seed: None,
        }
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn default_exemplar_order() -> Vec<Sentiment> {
    vec![Sentiment::Negative, Sentiment::Positive]
}
fn default_workers() -> usize {
    4
}
fn default_sc_n() -> u32 {
    5
}
fn default_sc_temperature() -> f64 {
    0.7
}
fn default_rag_k() -> usize {
    3
}
fn default_snippet_chars() -> usize {
    DEFAULT_SNIPPET_CHARS
}
fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// Strategies are written as slugs (`dk-cot`) and read with the lenient
/// strategy parser.
mod strategy_names {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Strategy], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|st| st.slug()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Strategy>, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| HarnessError::Validation(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.cutoff.is_none() {
            return bad("cutoff is required; there is no default split date".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy must be selected".into());
        }
        let mut seen = Vec::new();
        for s in &self.strategies {
            if seen.contains(s) {
                return bad(format!("strategy {s} listed twice"));
            }
            seen.push(*s);
        }
        self.label_options()
            .validate()
            .map_err(|e| HarnessError::Validation(e.to_string()))?;
        if self.self_consistency.enabled && self.self_consistency.n == 0 {
            return bad("self_consistency.n must be at least 1".into());
        }
        if self.rag.enabled && self.rag.k == 0 {
            return bad("rag.k must be at least 1".into());
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if self.workers == 0 || self.provider.max_in_flight == 0 {
            return bad("workers and max_in_flight must be positive".into());
        }
        if self.exemplar_order.is_empty() {
            return bad("exemplar_order must name at least one class".into());
        }
        if let Some(f) = &self.data.news_format {
            f.parse::<NewsFormat>()
                .map_err(|e| HarnessError::Validation(e.to_string()))?;
        }
        for key in self.templates.keys() {
            key.parse::<Strategy>()
                .map_err(|e| HarnessError::Validation(e.to_string()))?;
        }
        let uses_pool = self.strategies.iter().any(|s| s.uses_exemplars());
        if uses_pool && self.data.exemplars.is_none() {
            return bad("few-shot and AD-FCoT need data.exemplars".into());
        }
        match self.provider.kind {
            ProviderKind::Stub if self.provider.rulebook.is_none() => {
                return bad("stub provider needs a rulebook".into())
            }
            ProviderKind::Openai if self.provider.base_url.is_none() => {
                return bad("openai provider needs base_url".into())
            }
            _ => {}
        }
        self.generation_params().validate()?;
        if self.self_consistency.enabled {
            self.sample_params().validate()?;
        }
        Ok(())
    }

    pub fn cutoff(&self) -> DateTime<Utc> {
        self.cutoff.expect("validated config has a cutoff")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn news_format(&self) -> Result<NewsFormat, HarnessError> {
        let parsed = match &self.data.news_format {
            Some(f) => f.parse(),
            None => NewsFormat::from_path(&self.data.news),
        };
        parsed.map_err(|e| HarnessError::Validation(e.to_string()))
    }

    pub fn label_options(&self) -> LabelOptions {
        LabelOptions {
            threshold: self.threshold,
            shift_after_close: self.shift_after_close,
            ..LabelOptions::default()
        }
    }

    /// Parameters of the single deterministic sample.
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            model_name: self.provider.model_name.clone(),
            temperature: self.generation.temperature,
            max_tokens: self.generation.max_tokens,
            top_p: self.generation.top_p,
            seed: self.generation.seed,
        }
    }

    /// Parameters of self-consistency samples: the base parameters at the
    /// sampling temperature.
    pub fn sample_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.self_consistency.temperature,
            ..self.generation_params()
        }
    }

    pub fn samples_per_prompt(&self) -> u32 {
        if self.self_consistency.enabled {
            self.self_consistency.n
        } else {
            1
        }
    }

    /// SHA-256 of the canonical JSON form (fixed field order, no
    /// whitespace).
    pub fn digest(&self) -> String {
        crate::gateway::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
