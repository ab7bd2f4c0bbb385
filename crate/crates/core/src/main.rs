use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sentiment_harness::corpus::{
    attach_labels, load_news, load_prices, temporal_split, write_rejections, LabelSummary,
};
use sentiment_harness::harness::run::{load_bundles, MANIFEST_FILE};
use sentiment_harness::harness::{
    audit_leakage, load_inputs, report, run, ExperimentConfig, HarnessError, RunManifest,
    RunOptions,
};
use sentiment_harness::prompt_forge::Strategy;

const EXIT_AUDIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "sentiment-harness", version, about = "Benchmark prompting strategies for news sentiment against price moves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate news and price files; write normalized news and rejections.
    Ingest(Common),
    /// Print the dev/test split summary.
    Split(Common),
    /// Run the full experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Only run this strategy; repeat for several.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        /// Never call a network provider; cached completions still apply.
        #[arg(long)]
        offline: bool,
    },
    /// Render the metrics table of one or more finished runs.
    Report {
        /// Manifest files. Defaults to the manifest in the run directory.
        manifests: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
    /// Check a finished run for look-ahead leakage.
    Audit(Common),
}

fn out_dir(config: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| config.resolve(&config.output_dir))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn ingest(common: &Common) -> Result<u8, HarnessError> {
    let config = ExperimentConfig::load(&common.config)?;
    let news = load_news(
        &config.resolve(&config.data.news),
        config.news_format()?,
        &config.data.column_map,
    )?;
    let prices = load_prices(&config.resolve(&config.data.prices))?;
    let labeled = attach_labels(&news.articles, &prices, &config.label_options());

    let dir = out_dir(&config, &common.out);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let rejections = dir.join("rejections.jsonl");
    write_rejections(&rejections, &news.rejections).map_err(|e| io_err(&rejections, e))?;
    let normalized = dir.join("news.normalized.jsonl");
    let mut lines = String::new();
    for a in &news.articles {
        lines.push_str(&serde_json::to_string(a).expect("article serializes"));
        lines.push('\n');
    }
    std::fs::write(&normalized, lines).map_err(|e| io_err(&normalized, e))?;

    print_json(&json!({
        "articles": news.articles.len(),
        "rejected_rows": news.rejections.len(),
        "price_bars": prices.len(),
        "labels": LabelSummary::of(&labeled),
        "normalized": normalized,
        "rejections": rejections,
    }));
    Ok(0)
}

fn split(common: &Common) -> Result<u8, HarnessError> {
    let config = ExperimentConfig::load(&common.config)?;
    let news = load_news(
        &config.resolve(&config.data.news),
        config.news_format()?,
        &config.data.column_map,
    )?;
    let prices = load_prices(&config.resolve(&config.data.prices))?;
    let labeled = attach_labels(&news.articles, &prices, &config.label_options());
    let split = temporal_split(&labeled, config.cutoff())?;
    print_json(&json!({
        "cutoff": split.cutoff,
        "dev": split.dev.len(),
        "test": split.test.len(),
        "evaluable_test": split.evaluable_test().count(),
        "dev_labels": LabelSummary::of(&split.dev),
        "test_labels": LabelSummary::of(&split.test),
        "last_dev": split.dev.last().map(|a| a.article.timestamp),
        "first_test": split.test.first().map(|a| a.article.timestamp),
    }));
    Ok(0)
}

fn run_cmd(common: &Common, strategies: &[String], offline: bool) -> Result<u8, HarnessError> {
    let config = ExperimentConfig::load(&common.config)?;
    let filter = if strategies.is_empty() {
        None
    } else {
        Some(
            strategies
                .iter()
                .map(|s| s.parse::<Strategy>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::Validation(e.to_string()))?,
        )
    };
    let outcome = run(
        &config,
        &RunOptions {
            offline,
            strategies: filter,
            out_dir: common.out.clone(),
        },
    )?;
    print!("{}", report(std::slice::from_ref(&outcome.manifest)).to_text());
    eprintln!(
        "run written to {}; provider calls {}, cache hits {}",
        outcome.out_dir.display(),
        outcome.manifest.provider_calls,
        outcome.manifest.cache_hits
    );
    if outcome.audit.passed {
        Ok(0)
    } else {
        eprintln!("leakage audit failed: {:?}", outcome.audit.violating_ids());
        Ok(EXIT_AUDIT_FAILED)
    }
}

fn report_cmd(
    manifests: &[PathBuf],
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
    as_json: bool,
) -> Result<u8, HarnessError> {
    let paths: Vec<PathBuf> = if !manifests.is_empty() {
        manifests.to_vec()
    } else if let Some(dir) = out {
        vec![dir.join(MANIFEST_FILE)]
    } else if let Some(cfg) = config {
        let config = ExperimentConfig::load(cfg)?;
        vec![out_dir(&config, &None).join(MANIFEST_FILE)]
    } else {
        return Err(HarnessError::Validation(
            "give manifest paths, --out or --config".into(),
        ));
    };
    let loaded = paths
        .iter()
        .map(|p| RunManifest::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let r = report(&loaded);
    if as_json {
        println!("{}", r.to_json());
    } else {
        print!("{}", r.to_text());
    }
    Ok(0)
}

fn audit(common: &Common) -> Result<u8, HarnessError> {
    let config = ExperimentConfig::load(&common.config)?;
    let inputs = load_inputs(&config)?;
    let bundles = load_bundles(&out_dir(&config, &common.out))?;
    let result = audit_leakage(&inputs.split, &bundles);
    print_json(&result);
    Ok(if result.passed { 0 } else { EXIT_AUDIT_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(c) => ingest(c),
        Command::Split(c) => split(c),
        Command::Run {
            common,
            strategies,
            offline,
        } => run_cmd(common, strategies, *offline),
        Command::Report {
            manifests,
            config,
            out,
            json,
        } => report_cmd(manifests, config, out, *json),
        Command::Audit(c) => audit(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
