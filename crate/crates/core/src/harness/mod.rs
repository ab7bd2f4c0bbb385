//! Config-driven experiment runs, reports and leakage audits.

pub mod audit;
pub mod config;
pub mod report;
pub mod run;

use std::path::Path;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evalkit::EvalError;
use crate::gateway::GatewayError;
use crate::prompt_forge::{PromptError, Strategy};

pub use audit::{audit_leakage, AuditCheck, AuditReport, Violation};
pub use config::ExperimentConfig;
pub use report::{render_table, report, Report, ReportRow};
pub use run::{
    build_bundles, execute, load_inputs, open_gateway, run, RunInputs, RunManifest, RunOptions,
    RunOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{}article {article_id}: {source}", strategy.map(|s| format!("{s}, ")).unwrap_or_default())]
    Prompt {
        strategy: Option<Strategy>,
        article_id: String,
        source: PromptError,
    },
    #[error("{strategy}, article {article_id}: {source}")]
    Gateway {
        strategy: Strategy,
        article_id: String,
        source: GatewayError,
    },
    #[error("provider setup: {0}")]
    Provider(#[from] GatewayError),
    #[error("{strategy}: {source}")]
    Eval { strategy: Strategy, source: EvalError },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn validation(e: impl std::fmt::Display) -> Self {
        HarnessError::Validation(e.to_string())
    }

    pub(crate) fn prompt(strategy: Option<Strategy>, article_id: &str, source: PromptError) -> Self {
        HarnessError::Prompt {
            strategy,
            article_id: article_id.to_string(),
            source,
        }
    }

    /// Process exit code: 1 for bad configuration or data, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::Corpus(_) => 1,
            HarnessError::Provider(GatewayError::Config(_) | GatewayError::InvalidParams(_)) => 1,
            _ => 2,
        }
    }
}
