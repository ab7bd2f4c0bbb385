use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::audit::{audit_leakage, AuditReport};
use super::config::{ExperimentConfig, ProviderKind};
use super::report::report;
use super::HarnessError;
use crate::corpus::{
    attach_labels, load_news, load_prices, temporal_split, write_rejections, Direction,
    LabelSummary, LabeledArticle, NewsArticle, NewsIngest, PriceTable, SplitCorpus,
};
use crate::evalkit::{evaluate, MetricsReport};
use crate::gateway::openai::DEFAULT_API_KEY_ENV;
use crate::gateway::{
    sha256_hex, ModelGateway, OfflineGuard, OpenAiProvider, Provider, ResponseCache, Rulebook,
    StubProvider,
};
use crate::prompt_forge::{
    load_exemplar_pool, load_knowledge, ContextRetriever, Exemplar, ExemplarSelector,
    KnowledgeBlock, PromptBundle, PromptForge, Snippet, Strategy, Template,
};
use crate::verdict::{aggregate, PredictionRecord};

/// Everything a run reads from disk, already labeled and split.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub ingest: NewsIngest,
    pub prices: PriceTable,
    pub labeled: Vec<LabeledArticle>,
    pub split: SplitCorpus,
    pub pool: Vec<Exemplar>,
    pub knowledge: BTreeMap<String, KnowledgeBlock>,
    /// SHA-256 of each input file, keyed by role.
    pub corpus_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub dev: usize,
    pub test: usize,
    pub evaluable_test: usize,
}

impl SplitSummary {
    pub fn of(split: &SplitCorpus) -> Self {
        Self {
            dev: split.dev.len(),
            test: split.test.len(),
            evaluable_test: split.evaluable_test().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Relative to the run directory.
    pub prompts_path: String,
    pub predictions_path: String,
    pub metrics: MetricsReport,
    /// Predicted class counts, with `Unparseable` for unparsed output.
    pub prediction_mix: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub corpus_digests: BTreeMap<String, String>,
    pub provider: String,
    pub model_name: String,
    pub cutoff: DateTime<Utc>,
    pub labels: LabelSummary,
    pub split: SplitSummary,
    pub rejected_rows: usize,
    pub samples_per_prompt: u32,
    pub strategies: Vec<StrategyResult>,
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    /// Copy with timestamps and call counters zeroed, for comparing runs.
    pub fn without_volatile(&self) -> Self {
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        Self {
            provider_calls: 0,
            cache_hits: 0,
            started_at: epoch,
            finished_at: epoch,
            ..self.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Validation(format!("bad manifest {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Refuse network calls; cached completions are still served.
    pub offline: bool,
    /// Replaces the configured strategy list.
    pub strategies: Option<Vec<Strategy>>,
    /// Replaces the configured output directory.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub audit: AuditReport,
    pub out_dir: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_SUFFIX: &str = ".partial";

fn file_digest(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<RunInputs, HarnessError> {
    let mut corpus_digests = BTreeMap::new();

    let news_path = config.resolve(&config.data.news);
    let ingest = load_news(&news_path, config.news_format()?, &config.data.column_map)?;
    corpus_digests.insert("news".to_string(), file_digest(&news_path)?);

    let prices_path = config.resolve(&config.data.prices);
    let prices = load_prices(&prices_path)?;
    corpus_digests.insert("prices".to_string(), file_digest(&prices_path)?);

    let cutoff = config.cutoff();
    let pool = match &config.data.exemplars {
        Some(p) => {
            let path = config.resolve(p);
            let pool = load_exemplar_pool(&path).map_err(HarnessError::validation)?;
            corpus_digests.insert("exemplars".to_string(), file_digest(&path)?);
            if let Some(late) = pool.iter().find(|e| e.timestamp >= cutoff) {
                return Err(HarnessError::Validation(format!(
                    "exemplar {} is dated {}, not before the cutoff {cutoff}",
                    late.source_article_id, late.timestamp
                )));
            }
            pool
        }
        None => Vec::new(),
    };
    let knowledge = match &config.data.knowledge {
        Some(p) => {
            let path = config.resolve(p);
            let k = load_knowledge(&path).map_err(HarnessError::validation)?;
            corpus_digests.insert("knowledge".to_string(), file_digest(&path)?);
            k
        }
        None => BTreeMap::new(),
    };
    if let (ProviderKind::Stub, Some(p)) = (config.provider.kind, &config.provider.rulebook) {
        let path = config.resolve(p);
        corpus_digests.insert("rulebook".to_string(), file_digest(&path)?);
    }

    let labeled = attach_labels(&ingest.articles, &prices, &config.label_options());
    let split = temporal_split(&labeled, cutoff)?;
    Ok(RunInputs {
        ingest,
        prices,
        labeled,
        split,
        pool,
        knowledge,
        corpus_digests,
    })
}

pub fn build_forge(config: &ExperimentConfig) -> Result<PromptForge, HarnessError> {
    let mut forge = PromptForge {
        budget: config.budget,
        exemplar_order: config.exemplar_order.clone(),
        ..PromptForge::default()
    };
    for (name, path) in &config.templates {
        let strategy: Strategy = name.parse().map_err(HarnessError::validation)?;
        let template = Template::from_file(&config.resolve(path)).map_err(HarnessError::validation)?;
        forge.templates.set(strategy, template);
    }
    Ok(forge)
}

/// Test articles that get a prediction, ordered by id.
pub fn evaluable_targets(split: &SplitCorpus) -> Vec<&NewsArticle> {
    let mut targets: Vec<&NewsArticle> = split.evaluable_test().map(|a| &a.article).collect();
    targets.sort_by(|a, b| a.id.cmp(&b.id));
    targets
}

/// Renders every prompt of the run, grouped by strategy in report order and
/// by article id within a strategy.
pub fn build_bundles(
    config: &ExperimentConfig,
    inputs: &RunInputs,
) -> Result<Vec<PromptBundle>, HarnessError> {
    let forge = build_forge(config)?;
    let targets = evaluable_targets(&inputs.split);
    let selector = (!inputs.pool.is_empty()).then(|| ExemplarSelector::new(inputs.pool.clone()));

    let contexts: Vec<Vec<Snippet>> = if config.rag.enabled {
        let history: Vec<NewsArticle> = inputs.split.dev.iter().map(|a| a.article.clone()).collect();
        let retriever = ContextRetriever::new(history);
        targets
            .iter()
            .map(|t| {
                retriever
                    .retrieve(t, config.rag.k, config.rag.snippet_chars)
                    .map_err(|e| HarnessError::prompt(None, &t.id, e))
            })
            .collect::<Result<_, _>>()?
    } else {
        vec![Vec::new(); targets.len()]
    };

    let mut strategies = config.strategies.clone();
    strategies.sort_by_key(|s| s.index());

    let mut bundles = Vec::with_capacity(strategies.len() * targets.len());
    for &strategy in &strategies {
        for (target, context) in targets.iter().zip(&contexts) {
            let built = match strategy {
                Strategy::ZeroShot => forge.build_zero_shot(target, context),
                Strategy::CoT => forge.build_cot(target, context),
                Strategy::DKCoT => {
                    let empty;
                    let block = match inputs.knowledge.get(&target.ticker) {
                        Some(b) => b,
                        None => {
                            empty = KnowledgeBlock {
                                ticker: target.ticker.clone(),
                                facts: Vec::new(),
                                as_of: None,
                            };
                            &empty
                        }
                    };
                    forge.build_dk_cot(target, block, context)
                }
                Strategy::FewShot | Strategy::ADFCoT => {
                    let selector = selector.as_ref().ok_or_else(|| {
                        HarnessError::Validation(format!("{strategy} needs a non-empty exemplar pool"))
                    })?;
                    forge.select_analogies(target, selector).and_then(|chosen| {
                        if strategy == Strategy::FewShot {
                            forge.build_few_shot(target, &chosen, context)
                        } else {
                            forge.build_ad_fcot_with(target, &chosen, context)
                        }
                    })
                }
            };
            bundles.push(built.map_err(|e| HarnessError::prompt(Some(strategy), &target.id, e))?);
        }
    }
    Ok(bundles)
}

pub fn build_provider(config: &ExperimentConfig, offline: bool) -> Result<Box<dyn Provider>, HarnessError> {
    let p = &config.provider;
    match p.kind {
        ProviderKind::Stub => {
            let path = config.resolve(p.rulebook.as_deref().expect("validated stub rulebook"));
            let rulebook = Rulebook::from_file(&path)?;
            Ok(Box::new(StubProvider::new(rulebook)?))
        }
        ProviderKind::Openai => {
            let base_url = p.base_url.as_deref().expect("validated base_url");
            let env = p.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
            let key = std::env::var(env).ok().filter(|k| !k.is_empty());
            let provider = OpenAiProvider::new(base_url, key, Duration::from_millis(p.timeout_ms));
            if offline {
                Ok(Box::new(OfflineGuard::new(provider)))
            } else {
                Ok(Box::new(provider))
            }
        }
    }
}

pub fn cache_path(config: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    match &config.cache_path {
        Some(p) => config.resolve(p),
        None => out_dir.join("cache.jsonl"),
    }
}

pub fn open_gateway(
    config: &ExperimentConfig,
    out_dir: &Path,
    provider: Box<dyn Provider>,
) -> Result<ModelGateway, HarnessError> {
    let path = cache_path(config, out_dir);
    let cache = ResponseCache::open(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(ModelGateway::new(provider, cache, config.provider.max_in_flight))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| HarnessError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct MetricsEntry<'a> {
    strategy: Strategy,
    method: &'a str,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

/// Completes, parses and scores `bundles`, writing all run artifacts under
/// `out_dir`. Predictions are streamed to `*.partial` files as they finish;
/// the sorted prediction files, metrics, report and finally the manifest
/// are written once every completion is in.
pub fn execute(
    config: &ExperimentConfig,
    inputs: &RunInputs,
    bundles: &[PromptBundle],
    gateway: &ModelGateway,
    out_dir: &Path,
) -> Result<RunManifest, HarnessError> {
    let started_at = Utc::now();
    let before = gateway.stats();

    create_dir(&out_dir.join("prompts"))?;
    create_dir(&out_dir.join("predictions"))?;
    write_rejections(&out_dir.join("rejections.jsonl"), &inputs.ingest.rejections)
        .map_err(|e| HarnessError::io(&out_dir.join("rejections.jsonl"), e))?;

    let mut strategies: Vec<Strategy> = bundles.iter().map(|b| b.strategy).collect();
    strategies.sort_by_key(|s| s.index());
    strategies.dedup();
    for &s in &strategies {
        let of_s: Vec<&PromptBundle> = bundles.iter().filter(|b| b.strategy == s).collect();
        write_jsonl(&out_dir.join("prompts").join(format!("{}.jsonl", s.slug())), &of_s)?;
    }

    let predictions = complete_all(config, bundles, gateway, out_dir, &strategies)?;

    let labels: HashMap<String, Direction> = inputs
        .split
        .test
        .iter()
        .filter_map(|a| a.direction().map(|d| (a.article.id.clone(), d)))
        .collect();

    let mut results = Vec::new();
    for &s in &strategies {
        let mut preds: Vec<PredictionRecord> = predictions
            .iter()
            .filter(|p| p.strategy == s)
            .cloned()
            .collect();
        preds.sort_by(|a, b| a.article_id.cmp(&b.article_id));
        let rel = format!("predictions/{}.jsonl", s.slug());
        write_jsonl(&out_dir.join(&rel), &preds)?;
        let partial = out_dir.join(format!("{rel}{PARTIAL_SUFFIX}"));
        if partial.exists() {
            std::fs::remove_file(&partial).map_err(|e| HarnessError::io(&partial, e))?;
        }
        let metrics = evaluate(&preds, &labels, config.scoring_mode, config.unparseable)
            .map_err(|e| HarnessError::Eval { strategy: s, source: e })?;
        let mut mix = BTreeMap::new();
        for p in &preds {
            let key = p.sentiment.map(|x| x.as_str()).unwrap_or("Unparseable");
            *mix.entry(key.to_string()).or_insert(0) += 1;
        }
        results.push(StrategyResult {
            strategy: s,
            prompts_path: format!("prompts/{}.jsonl", s.slug()),
            predictions_path: rel,
            metrics,
            prediction_mix: mix,
        });
    }

    let entries: Vec<MetricsEntry<'_>> = results
        .iter()
        .map(|r| MetricsEntry {
            strategy: r.strategy,
            method: r.strategy.display_name(),
            metrics: &r.metrics,
        })
        .collect();
    let metrics_json = serde_json::to_string_pretty(&entries).expect("metrics serialize") + "\n";
    write_text(&out_dir.join("metrics.json"), &metrics_json)?;

    let after = gateway.stats();
    let manifest = RunManifest {
        config_digest: config.digest(),
        corpus_digests: inputs.corpus_digests.clone(),
        provider: gateway.provider_name().to_string(),
        model_name: config.provider.model_name.clone(),
        cutoff: inputs.split.cutoff,
        labels: LabelSummary::of(&inputs.labeled),
        split: SplitSummary::of(&inputs.split),
        rejected_rows: inputs.ingest.rejections.len(),
        samples_per_prompt: config.samples_per_prompt(),
        strategies: results,
        provider_calls: after.provider_calls - before.provider_calls,
        cache_hits: after.cache_hits - before.cache_hits,
        started_at,
        finished_at: Utc::now(),
    };
    write_text(
        &out_dir.join("report.txt"),
        &report(std::slice::from_ref(&manifest)).to_text(),
    )?;
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&out_dir.join(MANIFEST_FILE), &manifest_json)?;
    Ok(manifest)
}

/// Runs every (bundle, sample) work item on a bounded pool of workers and
/// returns one aggregated prediction per bundle, in bundle order.
fn complete_all(
    config: &ExperimentConfig,
    bundles: &[PromptBundle],
    gateway: &ModelGateway,
    out_dir: &Path,
    strategies: &[Strategy],
) -> Result<Vec<PredictionRecord>, HarnessError> {
    let samples = config.samples_per_prompt();
    let params = if config.self_consistency.enabled {
        config.sample_params()
    } else {
        config.generation_params()
    };
    let items: Vec<(usize, u32)> = (0..bundles.len())
        .flat_map(|b| (0..samples).map(move |k| (b, k)))
        .collect();

    let mut partial_writers: Vec<Option<Mutex<BufWriter<File>>>> = (0..Strategy::ALL.len()).map(|_| None).collect();
    for &s in strategies {
        let path = out_dir.join("predictions").join(format!("{}.jsonl{PARTIAL_SUFFIX}", s.slug()));
        let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        partial_writers[s.index()] = Some(Mutex::new(BufWriter::new(file)));
    }

    let texts: Vec<Mutex<Vec<Option<String>>>> = bundles
        .iter()
        .map(|_| Mutex::new(vec![None; samples as usize]))
        .collect();
    let remaining: Vec<AtomicU32> = bundles.iter().map(|_| AtomicU32::new(samples)).collect();
    let done: Vec<Mutex<Option<PredictionRecord>>> = bundles.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);

    let fail = |e: HarnessError| {
        abort.store(true, Ordering::SeqCst);
        failure.lock().expect("failure slot poisoned").get_or_insert(e);
    };

    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(items.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(b, k)) = items.get(i) else { break };
                let bundle = &bundles[b];
                let record = match gateway.complete(&bundle.text, &params, k) {
                    Ok(r) => r,
                    Err(e) => {
                        fail(HarnessError::Gateway {
                            strategy: bundle.strategy,
                            article_id: bundle.target_article_id.clone(),
                            source: e,
                        });
                        break;
                    }
                };
                texts[b].lock().expect("sample slot poisoned")[k as usize] = Some(record.completion_text);
                if remaining[b].fetch_sub(1, Ordering::SeqCst) != 1 {
                    continue;
                }
                let completions: Vec<String> = texts[b]
                    .lock()
                    .expect("sample slot poisoned")
                    .iter()
                    .map(|t| t.clone().expect("all samples present"))
                    .collect();
                let prediction = aggregate(&bundle.target_article_id, bundle.strategy, &completions)
                    .expect("at least one sample per bundle");
                if let Some(w) = &partial_writers[bundle.strategy.index()] {
                    let mut w = w.lock().expect("partial writer poisoned");
                    let line = serde_json::to_string(&prediction).expect("prediction serializes");
                    if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                        fail(HarnessError::io(out_dir, e));
                        break;
                    }
                }
                *done[b].lock().expect("prediction slot poisoned") = Some(prediction);
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("failure slot poisoned") {
        return Err(e);
    }
    Ok(done
        .into_iter()
        .map(|d| d.into_inner().expect("prediction slot poisoned").expect("every bundle completed"))
        .collect())
}

/// Selects the strategies and output directory, runs the experiment and
/// audits the prompts it built.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, HarnessError> {
    let mut config = config.clone();
    if let Some(filter) = &options.strategies {
        config.strategies = filter.clone();
        config.validate()?;
    }
    let out_dir = options
        .out_dir
        .clone()
        .unwrap_or_else(|| config.resolve(&config.output_dir));
    let inputs = load_inputs(&config)?;
    let bundles = build_bundles(&config, &inputs)?;
    let provider = build_provider(&config, options.offline)?;
    create_dir(&out_dir)?;
    let gateway = open_gateway(&config, &out_dir, provider)?;
    let manifest = execute(&config, &inputs, &bundles, &gateway, &out_dir)?;
    let audit = audit_leakage(&inputs.split, &bundles);
    let audit_json = serde_json::to_string_pretty(&audit).expect("audit serializes") + "\n";
    write_text(&out_dir.join("audit.json"), &audit_json)?;
    Ok(RunOutcome {
        manifest,
        audit,
        out_dir,
    })
}

/// Reads the prompt files of a finished run.
pub fn load_bundles(out_dir: &Path) -> Result<Vec<PromptBundle>, HarnessError> {
    let mut bundles = Vec::new();
    for s in Strategy::ALL {
        let path = out_dir.join("prompts").join(format!("{}.jsonl", s.slug()));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            bundles.push(serde_json::from_str(line).map_err(|e| {
                HarnessError::Validation(format!("{}:{}: {e}", path.display(), i + 1))
            })?);
        }
    }
    Ok(bundles)
}
