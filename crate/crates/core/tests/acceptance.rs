//! Acceptance gate: one PASS/FAIL line per criterion. Run with
//! `cargo test --test acceptance`.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::*;
use sentiment_harness::corpus::{temporal_split, Direction, LabelStatus, LabeledArticle, NewsArticle};
use sentiment_harness::evalkit::{
    metrics, mutual_information, score, ConfusionCounts, MetricsReport, ScoringMode, UnparseablePolicy,
};
use sentiment_harness::harness::run::{load_bundles, SplitSummary, StrategyResult};
use sentiment_harness::harness::{
    audit_leakage, load_inputs, report, run, ExperimentConfig, HarnessError, RunManifest, RunOptions,
};
use sentiment_harness::prompt_forge::{Sentiment, SourceKind, SourceRef, Strategy};
use sentiment_harness::verdict::{self_consistency_vote, ParseMethod, PredictionRecord};

const METRICS_SETS: usize = 1_000;
const METRICS_MAX_SIZE: usize = 10_000;
const METRICS_TIME_LIMIT_S: f64 = 10.0;
const MI_SAMPLES: usize = 500;
const MI_INDEPENDENT_TOL: f64 = 1e-9;
const MI_BIJECTIVE_TOL: f64 = 1e-12;
const MI_BOUND_TOL: f64 = 1e-9;
const MI_IDENTITY_TOL: f64 = 1e-12;
const LEAKAGE_CORPORA: usize = 100;
const TOKEN_BUDGET: usize = 1024;
const OFFLINE_TIME_LIMIT_S: f64 = 30.0;
const VOTE_MAX_SIZE: usize = 5;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Metrics oracle

fn random_set(rng: &mut ChaCha8Rng, ids: &[String], size: usize) -> (Vec<PredictionRecord>, HashMap<String, Direction>) {
    let mut preds = Vec::with_capacity(size);
    let mut labels = HashMap::with_capacity(size);
    for id in &ids[..size] {
        let sentiment = match rng.random_range(0..4) {
            0 => Some(Sentiment::Positive),
            1 => Some(Sentiment::Negative),
            2 => Some(Sentiment::Neutral),
            _ => None,
        };
        let label = [Direction::Up, Direction::Down, Direction::Flat][rng.random_range(0..3)];
        labels.insert(id.clone(), label);
        preds.push(PredictionRecord {
            article_id: id.clone(),
            strategy: Strategy::ZeroShot,
            sentiment,
            rationale: String::new(),
            raw_completion: String::new(),
            parse_method: if sentiment.is_some() { ParseMethod::FinalAnswerLine } else { ParseMethod::Unparseable },
            samples_used: 1,
            sample_sentiments: Vec::new(),
        });
    }
    (preds, labels)
}

/// Per-item count written out case by case: [tp, fp, tn, fn, flat, unparseable_dropped, neutral_dropped].
fn brute_force_counts(
    preds: &[PredictionRecord],
    labels: &HashMap<String, Direction>,
    mode: ScoringMode,
    policy: UnparseablePolicy,
) -> [u64; 7] {
    let mut c = [0u64; 7];
    for p in preds {
        let label = labels[&p.article_id];
        if label == Direction::Flat {
            c[4] += 1;
            continue;
        }
        let call = match (p.sentiment, policy) {
            (None, UnparseablePolicy::Excluded) => {
                c[5] += 1;
                continue;
            }
            (None, UnparseablePolicy::AsNeutral) => "neutral",
            (Some(Sentiment::Positive), _) => "up",
            (Some(Sentiment::Negative), _) => "down",
            (Some(Sentiment::Neutral), _) => "neutral",
        };
        let call = match (call, mode) {
            ("neutral", ScoringMode::NeutralExcluded) => {
                c[6] += 1;
                continue;
            }
            ("neutral", ScoringMode::NeutralAsNegativeSignal) => "down",
            (other, _) => other,
        };
        match (call, label) {
            ("up", Direction::Up) => c[0] += 1,
            ("up", Direction::Down) => c[1] += 1,
            ("down", Direction::Down) => c[2] += 1,
            ("down", Direction::Up) => c[3] += 1,
            _ => unreachable!(),
        }
    }
    c
}

fn criterion_metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<String> = (0..METRICS_MAX_SIZE).map(|i| format!("a{i}")).collect();
    let modes = [ScoringMode::NeutralAsNegativeSignal, ScoringMode::NeutralExcluded];
    let policies = [UnparseablePolicy::AsNeutral, UnparseablePolicy::Excluded];
    let mut timed = std::time::Duration::ZERO;
    let mut items = 0usize;
    let wall = Instant::now();
    for set in 0..METRICS_SETS {
        let size = match set {
            0 => 1,
            1 => METRICS_MAX_SIZE,
            _ => rng.random_range(1..=METRICS_MAX_SIZE),
        };
        items += size;
        let (preds, labels) = random_set(&mut rng, &ids, size);
        let (mode, policy) = (modes[set % 2], policies[(set / 2) % 2]);

        let started = Instant::now();
        let outcome = score(&preds, &labels, mode, policy).map_err(|e| e.to_string())?;
        let m = metrics(&outcome.counts);
        timed += started.elapsed();

        let want = brute_force_counts(&preds, &labels, mode, policy);
        let c = outcome.counts;
        let got = [c.tp, c.fp, c.tn, c.fn_, outcome.excluded_flat, outcome.excluded_unparseable, outcome.excluded_neutral];
        check(got == want, || format!("set {set}: counts {got:?} != oracle {want:?}"))?;

        let [tp, fp, tn, fn_, ..] = want;
        let total = tp + fp + tn + fn_;
        if total == 0 {
            check(m.is_err(), || format!("set {set}: metrics on zero items must fail"))?;
            continue;
        }
        let m = m.map_err(|e| e.to_string())?;
        let accuracy = (tp + tn) as f64 / total as f64;
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        check(m.accuracy == accuracy && m.precision == precision && m.recall == recall, || {
            format!("set {set}: metrics {m:?} != ({accuracy}, {precision:?}, {recall:?})")
        })?;
        check((m.accuracy * total as f64).round() as u64 == tp + tn, || format!("set {set}: accuracy identity"))?;
    }
    let secs = timed.as_secs_f64();
    check(secs < METRICS_TIME_LIMIT_S, || format!("score+metrics took {secs:.2} s"))?;
    Ok(format!(
        "{METRICS_SETS} sets, {items} items, exact match; score+metrics {secs:.2} s (wall {:.2} s)",
        wall.elapsed().as_secs_f64()
    ))
}

// 2. Mutual information

fn criterion_mutual_information() -> Outcome {
    let indep = mutual_information(&["a", "a", "b", "b"], &["u", "d", "u", "d"]).map_err(|e| e.to_string())?;
    check(indep.bits.abs() <= MI_INDEPENDENT_TOL, || format!("independent gave {}", indep.bits))?;
    let bij = mutual_information(&["a", "a", "b", "b"], &["u", "u", "d", "d"]).map_err(|e| e.to_string())?;
    check((bij.bits - 1.0).abs() <= MI_BIJECTIVE_TOL, || format!("bijective gave {}", bij.bits))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_identity: f64 = 0.0;
    for sample in 0..MI_SAMPLES {
        let n = rng.random_range(1..=400);
        let kx = rng.random_range(1..=6u8);
        let ky = rng.random_range(1..=6u8);
        let coupled = rng.random_bool(0.5);
        let x: Vec<u8> = (0..n).map(|_| rng.random_range(0..kx)).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|&xi| {
                if coupled && rng.random_bool(0.7) {
                    xi % ky
                } else {
                    rng.random_range(0..ky)
                }
            })
            .collect();
        let fwd = mutual_information(&x, &y).map_err(|e| e.to_string())?;
        let rev = mutual_information(&y, &x).map_err(|e| e.to_string())?;
        check(fwd.bits >= 0.0, || format!("sample {sample}: negative I {}", fwd.bits))?;
        check(fwd.bits <= fwd.h_x.min(fwd.h_y) + MI_BOUND_TOL, || {
            format!("sample {sample}: I {} above min(H(X)={}, H(Y)={})", fwd.bits, fwd.h_x, fwd.h_y)
        })?;
        check(fwd.bits == rev.bits, || format!("sample {sample}: I(X;Y) {} != I(Y;X) {}", fwd.bits, rev.bits))?;
        let gap = (fwd.h_y - fwd.h_y_given_x - fwd.bits).abs();
        worst_identity = worst_identity.max(gap);
        check(gap <= MI_IDENTITY_TOL, || format!("sample {sample}: H(Y)-H(Y|X) off by {gap:e}"))?;
    }
    Ok(format!(
        "independent {:.1e}, bijective {}, {MI_SAMPLES} samples bounded and symmetric, identity gap <= {worst_identity:.1e}",
        indep.bits.abs(),
        bij.bits
    ))
}

// 3. Leakage fuzzing

const WORDS: [&str; 32] = [
    "contract", "outage", "earnings", "guidance", "merger", "lawsuit", "launch", "recall", "dividend",
    "buyback", "upgrade", "downgrade", "supplier", "factory", "demand", "margin", "pricing", "expansion",
    "delay", "approval", "warning", "partnership", "layoffs", "record", "weak", "strong", "quarter",
    "forecast", "shipment", "order", "debt", "patent",
];
const TICKERS: [&str; 5] = ["ALFA", "BRVO", "CHRL", "DLTA", "ECHO"];

fn words(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

struct FuzzCorpus {
    articles: Vec<NewsArticle>,
    cutoff: DateTime<Utc>,
}

fn random_corpus(rng: &mut ChaCha8Rng) -> FuzzCorpus {
    let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    let n = rng.random_range(20..=80);
    let mut articles: Vec<NewsArticle> = (0..n)
        .map(|i| {
            let ticker = *TICKERS.choose(rng).unwrap();
            NewsArticle {
                id: format!("n{i:03}"),
                timestamp: start + Duration::seconds(rng.random_range(0..2 * 365 * 86_400)),
                ticker: ticker.to_string(),
                headline: format!("{ticker} {}", words(rng, 3..9)),
                body: words(rng, 0..15),
                source: String::new(),
            }
        })
        .collect();
    articles.sort_by_key(|a| a.timestamp);
    // Sometimes cut exactly on an article to exercise the tie rule.
    let pivot = &articles[rng.random_range(n / 5..4 * n / 5)];
    let cutoff = if rng.random_bool(0.3) {
        pivot.timestamp
    } else {
        pivot.timestamp - Duration::seconds(rng.random_range(1..86_400))
    };
    FuzzCorpus { articles, cutoff }
}

fn write_fuzz_files(dir: &Path, corpus: &FuzzCorpus, rng: &mut ChaCha8Rng, plant: bool) -> Result<Option<String>, String> {
    let io = |e: std::io::Error| e.to_string();
    let mut news = csv::Writer::from_path(dir.join("news.csv")).map_err(|e| e.to_string())?;
    news.write_record(["id", "timestamp", "ticker", "headline", "body", "source"]).map_err(|e| e.to_string())?;
    let mut bars = BTreeMap::new();
    for (i, a) in corpus.articles.iter().enumerate() {
        news.write_record([&a.id, &a.timestamp.to_rfc3339(), &a.ticker, &a.headline, &a.body, &a.source])
            .map_err(|e| e.to_string())?;
        if i % 9 == 4 {
            continue; // no price bar: unlabeled
        }
        let open = rng.random_range(10.0..200.0f64);
        let mv = match rng.random_range(0..10) {
            0 => 0.0002,
            1..=5 => 0.02,
            _ => -0.02,
        };
        bars.entry((a.ticker.clone(), a.timestamp.date_naive()))
            .or_insert((open, open * (1.0 + mv)));
    }
    news.flush().map_err(io)?;
    let mut prices = String::from("ticker,date,open,close\n");
    for ((t, d), (o, c)) in &bars {
        prices.push_str(&format!("{t},{d},{o:.4},{c:.4}\n"));
    }
    std::fs::write(dir.join("prices.csv"), prices).map_err(io)?;

    let dev: Vec<&NewsArticle> = corpus.articles.iter().filter(|a| a.timestamp < corpus.cutoff).collect();
    let mut pool = String::new();
    let picks = rng.random_range(2..=6.min(dev.len()).max(2));
    for (i, a) in dev.choose_multiple(rng, picks).enumerate() {
        let label = match i {
            0 => "Negative",
            1 => "Positive",
            _ => ["Positive", "Negative", "Neutral"][rng.random_range(0..3)],
        };
        pool.push_str(&json!({
            "source_article_id": a.id, "excerpt": format!("{}. {}", a.headline, a.body),
            "rationale": ["The event changes expected cash flows.", "The price follows."],
            "label": label, "timestamp": a.timestamp,
        }).to_string());
        pool.push('\n');
    }
    let planted = plant.then(|| {
        let late = corpus.articles.iter().filter(|a| a.timestamp >= corpus.cutoff).last().unwrap();
        pool.push_str(&json!({
            "source_article_id": "planted-future", "excerpt": "ALFA future event",
            "rationale": ["x"], "label": "Positive", "timestamp": late.timestamp,
        }).to_string());
        pool.push('\n');
        "planted-future".to_string()
    });
    std::fs::write(dir.join("exemplars.jsonl"), pool).map_err(io)?;

    let rulebook = json!({
        "rules": [
            {"pattern": "contract", "completion": "Final answer: Positive"},
            {"pattern": "lawsuit", "completion": "Final answer: Negative"},
            {"pattern": "Example 1 (", "completion": "1. analogy\nFinal answer: Positive"}
        ],
        "fallback": "no view"
    });
    std::fs::write(dir.join("rulebook.json"), rulebook.to_string()).map_err(io)?;
    let config = json!({
        "data": {"news": "news.csv", "prices": "prices.csv", "exemplars": "exemplars.jsonl"},
        "cutoff": corpus.cutoff,
        "provider": {"kind": "stub", "model_name": "stub", "rulebook": "rulebook.json"},
        "rag": {"enabled": rng.random_bool(0.5), "k": rng.random_range(1..4)},
        "output_dir": "out",
        "seed": rng.random::<u32>(),
    });
    std::fs::write(dir.join("config.json"), config.to_string()).map_err(io)?;
    Ok(planted)
}

fn criterion_leakage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut runs = 0;
    let mut bundles_checked = 0;
    let mut caught = 0;
    for round in 0..LEAKAGE_CORPORA {
        let corpus = random_corpus(&mut rng);

        let labeled: Vec<LabeledArticle> = corpus
            .articles
            .iter()
            .map(|a| LabeledArticle { article: a.clone(), label: LabelStatus::Unlabeled })
            .collect();
        let split = temporal_split(&labeled, corpus.cutoff).map_err(|e| format!("round {round}: {e}"))?;
        check(split.test.iter().all(|a| a.article.timestamp >= corpus.cutoff), || {
            format!("round {round}: pre-cutoff article in test")
        })?;
        check(split.dev.iter().all(|a| a.article.timestamp < corpus.cutoff), || {
            format!("round {round}: post-cutoff article in dev")
        })?;
        check(split.dev.len() + split.test.len() == corpus.articles.len(), || format!("round {round}: lost articles"))?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_fuzz_files(dir.path(), &corpus, &mut rng, false)?;
        let config = ExperimentConfig::load(&dir.path().join("config.json")).map_err(|e| e.to_string())?;
        let inputs = load_inputs(&config).map_err(|e| format!("round {round}: {e}"))?;
        if SplitSummary::of(&inputs.split).evaluable_test == 0 {
            continue;
        }
        let outcome = run(&config, &RunOptions { offline: true, ..RunOptions::default() })
            .map_err(|e| format!("round {round}: {e}"))?;
        runs += 1;
        check(outcome.audit.passed, || format!("round {round}: violations {:?}", outcome.audit.violations))?;

        let mut bundles = load_bundles(&outcome.out_dir).map_err(|e| e.to_string())?;
        bundles_checked += bundles.len();
        check(audit_leakage(&inputs.split, &bundles).passed, || format!("round {round}: stored prompts fail audit"))?;
        let victim = rng.random_range(0..bundles.len());
        let target_time = bundles[victim].target_timestamp;
        bundles[victim].sources.push(SourceRef {
            id: format!("planted-{round}"),
            kind: SourceKind::Exemplar,
            timestamp: target_time + Duration::seconds(rng.random_range(0..86_400 * 30)),
        });
        let audit = audit_leakage(&inputs.split, &bundles);
        check(audit.violating_ids() == [format!("planted-{round}").as_str()], || {
            format!("round {round}: planted prompt source not isolated: {:?}", audit.violating_ids())
        })?;

        let planted_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let planted = write_fuzz_files(planted_dir.path(), &corpus, &mut rng, true)?.unwrap();
        let config = ExperimentConfig::load(&planted_dir.path().join("config.json")).map_err(|e| e.to_string())?;
        match load_inputs(&config) {
            Err(HarnessError::Validation(m)) if m.contains(&planted) => caught += 1,
            other => return Err(format!("round {round}: planted pool exemplar not caught: {:?}", other.err())),
        }
    }
    check(runs >= LEAKAGE_CORPORA * 9 / 10, || format!("only {runs} corpora were runnable"))?;
    Ok(format!(
        "{LEAKAGE_CORPORA} corpora split soundly; {runs} runs, {bundles_checked} prompts, 0 violations; planted exemplars caught {caught}/{LEAKAGE_CORPORA} in pools and {runs}/{runs} in prompts"
    ))
}

// 4. Golden prompts

fn criterion_golden() -> Outcome {
    let bundles = fixture_bundles();
    for s in Strategy::ALL {
        let path = golden_path(s);
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        check(golden_text(&bundles, s) == expected, || format!("{s} differs from {}", path.display()))?;
    }
    let mut max_tokens = 0;
    for b in &bundles {
        max_tokens = max_tokens.max(b.token_estimate);
        check(b.token_estimate < TOKEN_BUDGET, || format!("{} {}: {} tokens", b.strategy, b.target_article_id, b.token_estimate))?;
        if b.strategy != Strategy::ADFCoT {
            continue;
        }
        let headers: Vec<&str> = b.text.lines().filter(|l| l.starts_with("Example ")).collect();
        check(headers == ["Example 1 (Negative):", "Example 2 (Positive):"], || {
            format!("{}: exemplar sections {headers:?}", b.target_article_id)
        })?;
    }
    Ok(format!("{} prompts byte-identical across 5 strategies; max estimate {max_tokens} < {TOKEN_BUDGET}", bundles.len()))
}

// 5. Offline end-to-end

fn cli_run(config: &Path, out: &Path) -> Result<f64, String> {
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_sentiment-harness"))
        .args(["run", "--offline", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(status.status.success(), || {
        format!("run exited {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
    })?;
    Ok(secs)
}

fn criterion_offline_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = fixtures_dir().join("config.json");
    let secs = cli_run(&config, dir.path())?;
    check(secs < OFFLINE_TIME_LIMIT_S, || format!("first run took {secs:.2} s"))?;
    let first = RunManifest::load(&dir.path().join("manifest.json")).map_err(|e| e.to_string())?;

    let directions = oracle_directions("2023-01-01T00:00:00Z", 0.001);
    for (strategy, frozen) in FROZEN_COUNTS {
        let r = first.strategies.iter().find(|r| r.strategy == strategy).ok_or(format!("{strategy} missing"))?;
        let counted = oracle_counts(&dir.path().join(&r.predictions_path), &directions);
        check(counted == frozen, || format!("{strategy}: oracle {counted:?} != frozen {frozen:?}"))?;
    }
    let table = std::fs::read_to_string(dir.path().join("report.txt")).map_err(|e| e.to_string())?;
    for (line, want) in table.lines().skip(1).zip(FROZEN_TABLE) {
        let got: Vec<&str> = line.split_whitespace().collect();
        check(got == [want.0, want.1, want.2, want.3], || format!("row {got:?} != {want:?}"))?;
    }

    let before = snapshot(dir.path(), &["manifest.json"]);
    let again = cli_run(&config, dir.path())?;
    let second = RunManifest::load(&dir.path().join("manifest.json")).map_err(|e| e.to_string())?;
    check(second.provider_calls == 0, || format!("second run made {} provider calls", second.provider_calls))?;
    check(second.cache_hits == first.provider_calls, || {
        format!("cache hits {} != first-run calls {}", second.cache_hits, first.provider_calls)
    })?;
    let after = snapshot(dir.path(), &["manifest.json"]);
    check(before == after, || {
        let changed: Vec<&String> = after.keys().filter(|k| before.get(*k) != after.get(*k)).collect();
        format!("outputs changed: {changed:?}")
    })?;
    Ok(format!(
        "first run {secs:.2} s with {} provider calls; frozen table reproduced; rerun {again:.2} s, 0 calls, {} files byte-identical",
        first.provider_calls,
        after.len()
    ))
}

// 6. Report fidelity

const REFERENCE_ROWS: [(Strategy, &str, f64, f64, f64); 5] = [
    (Strategy::ZeroShot, "Zero-Shot 53.92 44.95 48.80", 0.5392, 0.4495, 0.4880),
    (Strategy::FewShot, "Few-Shot 54.70 54.11 51.42", 0.5470, 0.5411, 0.5142),
    (Strategy::CoT, "CoT 51.81 54.27 50.20", 0.5181, 0.5427, 0.5020),
    (Strategy::DKCoT, "DK-CoT 52.09 55.62 53.45", 0.5209, 0.5562, 0.5345),
    (Strategy::ADFCoT, "AD-FCoT 54.92 57.45 53.62", 0.5492, 0.5745, 0.5362),
];

fn manifest_with(rows: &[(Strategy, f64, f64, f64)]) -> RunManifest {
    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    RunManifest {
        config_digest: String::new(),
        corpus_digests: BTreeMap::new(),
        provider: "table".into(),
        model_name: "table".into(),
        cutoff: epoch,
        labels: Default::default(),
        split: SplitSummary { dev: 0, test: 0, evaluable_test: 0 },
        rejected_rows: 0,
        samples_per_prompt: 1,
        strategies: rows
            .iter()
            .map(|&(strategy, accuracy, precision, recall)| StrategyResult {
                strategy,
                prompts_path: String::new(),
                predictions_path: String::new(),
                metrics: MetricsReport {
                    accuracy,
                    precision: Some(precision),
                    recall: Some(recall),
                    counts: ConfusionCounts::default(),
                    excluded_flat: 0,
                    excluded_unparseable: 0,
                    excluded_neutral: 0,
                    unparseable: 0,
                    mutual_information_bits: 0.0,
                },
                prediction_mix: BTreeMap::new(),
            })
            .collect(),
        provider_calls: 0,
        cache_hits: 0,
        started_at: epoch,
        finished_at: epoch,
    }
}

fn criterion_report_fidelity() -> Outcome {
    // Fed in reverse so ordering is the report's doing.
    let rows: Vec<(Strategy, f64, f64, f64)> = REFERENCE_ROWS.iter().rev().map(|r| (r.0, r.2, r.3, r.4)).collect();
    let text = report(&[manifest_with(&rows)]).to_text();
    let lines: Vec<&str> = text.lines().collect();
    check(lines.len() == 6, || format!("expected header + 5 rows, got {}", lines.len()))?;
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    check(header == ["Method", "Accuracy", "Precision", "Recall"], || format!("header {header:?}"))?;
    for (line, want) in lines[1..].iter().zip(REFERENCE_ROWS) {
        let got = line.split_whitespace().collect::<Vec<_>>().join(" ");
        check(got == want.1, || format!("row '{got}' != '{}'", want.1))?;
    }
    let width = lines[1].chars().count();
    check(lines[1..].iter().all(|l| l.chars().count() == width), || "rows are not aligned".into())?;

    let single = report(&[manifest_with(&[(Strategy::ADFCoT, 0.5492, 0.5745, 0.5362)])]).to_text();
    check(single.lines().count() == 2, || "single-strategy report is not one row".into())?;
    let mut undefined = manifest_with(&[(Strategy::CoT, 0.5, 0.0, 0.0)]);
    undefined.strategies[0].metrics.precision = None;
    let row = report(&[undefined]).to_text();
    check(row.lines().nth(1).is_some_and(|l| l.split_whitespace().eq(["CoT", "50.00", "—", "0.00"])), || {
        format!("undefined precision rendered as {row:?}")
    })?;
    Ok("5 rows in method order, two decimals, aligned; single-row and undefined-cell cases".into())
}

// 7. Vote properties

fn permutations(items: &[Sentiment]) -> Vec<Vec<Sentiment>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn plurality_oracle(samples: &[Sentiment]) -> Sentiment {
    let count = |s: Sentiment| samples.iter().filter(|&&x| x == s).count();
    let counts = Sentiment::ALL.map(count);
    let best = *counts.iter().max().unwrap();
    let leaders: Vec<Sentiment> = Sentiment::ALL.into_iter().filter(|&s| count(s) == best).collect();
    if leaders.len() == 1 {
        leaders[0]
    } else {
        Sentiment::Neutral
    }
}

fn criterion_vote() -> Outcome {
    let mut sequences = 0;
    let mut orderings = 0;
    for len in 1..=VOTE_MAX_SIZE {
        for code in 0..3usize.pow(len as u32) {
            let samples: Vec<Sentiment> = (0..len).map(|i| Sentiment::ALL[(code / 3usize.pow(i as u32)) % 3]).collect();
            sequences += 1;
            let winner = self_consistency_vote(&samples).map_err(|e| e.to_string())?;
            check(winner == plurality_oracle(&samples), || format!("{samples:?}: vote {winner} != oracle"))?;
            for p in permutations(&samples) {
                orderings += 1;
                let v = self_consistency_vote(&p).map_err(|e| e.to_string())?;
                check(v == winner, || format!("{p:?} gives {v}, {samples:?} gives {winner}"))?;
            }
            let mut grown = samples.clone();
            grown.push(winner);
            let v = self_consistency_vote(&grown).map_err(|e| e.to_string())?;
            check(v == winner, || format!("adding {winner} to {samples:?} changed the vote to {v}"))?;
        }
    }
    check(self_consistency_vote(&[]).is_err(), || "empty vote must fail".into())?;
    Ok(format!("{sequences} sequences (3^1..3^{VOTE_MAX_SIZE}), {orderings} orderings, duplication-monotone"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("metrics oracle", criterion_metrics_oracle),
        ("mutual information", criterion_mutual_information),
        ("leakage fuzzing", criterion_leakage),
        ("prompt golden files", criterion_golden),
        ("offline end-to-end", criterion_offline_end_to_end),
        ("report fidelity", criterion_report_fidelity),
        ("vote properties", criterion_vote),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
