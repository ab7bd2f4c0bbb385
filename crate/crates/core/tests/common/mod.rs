#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sentiment_harness::harness::{build_bundles, load_inputs, ExperimentConfig};
use sentiment_harness::prompt_forge::{PromptBundle, Strategy};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn fixture_config() -> ExperimentConfig {
    ExperimentConfig::load(&fixtures_dir().join("config.json")).expect("fixture config loads")
}

pub fn fixture_bundles() -> Vec<PromptBundle> {
    let config = fixture_config();
    let inputs = load_inputs(&config).expect("fixture inputs load");
    build_bundles(&config, &inputs).expect("fixture prompts build")
}

/// All prompts of one strategy, each under a `### <article id>` line.
pub fn golden_text(bundles: &[PromptBundle], strategy: Strategy) -> String {
    let mut out = String::new();
    for b in bundles.iter().filter(|b| b.strategy == strategy) {
        out.push_str(&format!("### {}\n{}\n", b.target_article_id, b.text));
    }
    out
}

pub fn golden_path(strategy: Strategy) -> PathBuf {
    golden_dir().join(format!("{}.txt", strategy.slug()))
}

/// Expected confusion counts (tp, fp, tn, fn) of the fixture run under the
/// stub rulebook. Derived once by `oracle_counts` over the prediction files
/// and an independent reading of the price CSV, then frozen.
pub const FROZEN_COUNTS: [(Strategy, [u64; 4]); 5] = [
    (Strategy::ZeroShot, [4, 2, 14, 14]),
    (Strategy::FewShot, [12, 9, 7, 6]),
    (Strategy::CoT, [4, 2, 14, 14]),
    (Strategy::DKCoT, [4, 2, 14, 14]),
    (Strategy::ADFCoT, [16, 8, 8, 2]),
];

/// Expected table rows, accuracy / precision / recall in percent.
pub const FROZEN_TABLE: [(&str, &str, &str, &str); 5] = [
    ("Zero-Shot", "52.94", "66.67", "22.22"),
    ("Few-Shot", "55.88", "57.14", "66.67"),
    ("CoT", "52.94", "66.67", "22.22"),
    ("DK-CoT", "52.94", "66.67", "22.22"),
    ("AD-FCoT", "70.59", "66.67", "88.89"),
];

/// Up/Down/Flat for every test article with a price bar, computed from the
/// raw files without the library's loaders.
pub fn oracle_directions(cutoff: &str, threshold: f64) -> HashMap<String, &'static str> {
    let prices = std::fs::read_to_string(fixtures_dir().join("prices.csv")).unwrap();
    let mut bars = HashMap::new();
    for line in prices.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let open: f64 = f[2].parse().unwrap();
        let close: f64 = f[3].parse().unwrap();
        bars.insert((f[0].to_string(), f[1].to_string()), (open, close));
    }
    let mut reader = csv::Reader::from_path(fixtures_dir().join("news.csv")).unwrap();
    let mut out = HashMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let (id, ts, ticker, headline) = (&rec[0], &rec[1], &rec[2], &rec[3]);
        // RFC 3339 UTC strings with a fixed layout compare like timestamps.
        if headline.is_empty() || ts.len() != 20 || ts < cutoff {
            continue;
        }
        if let Some(&(open, close)) = bars.get(&(ticker.to_string(), ts[..10].to_string())) {
            let r = close / open - 1.0;
            let d = if r >= threshold {
                "Up"
            } else if r <= -threshold {
                "Down"
            } else {
                "Flat"
            };
            out.insert(id.to_string(), d);
        }
    }
    out
}

/// Per-item confusion counts over a predictions JSONL file.
pub fn oracle_counts(predictions: &Path, directions: &HashMap<String, &str>) -> [u64; 4] {
    let mut c = [0u64; 4];
    for line in std::fs::read_to_string(predictions).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["article_id"].as_str().unwrap();
        let says_up = v["sentiment"].as_str() == Some("Positive");
        match (directions[id], says_up) {
            ("Flat", _) => {}
            ("Up", true) => c[0] += 1,
            ("Down", true) => c[1] += 1,
            ("Down", false) => c[2] += 1,
            ("Up", false) => c[3] += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    c
}

pub fn percent(num: u64, den: u64) -> String {
    if den == 0 {
        "—".to_string()
    } else {
        format!("{:.2}", (num as f64 / den as f64 * 10_000.0).round() / 100.0)
    }
}

/// Every regular file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path, skip: &[&str]) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            if !skip.contains(&rel.as_str()) {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
