use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitCorpus;
use crate::prompt_forge::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCheck {
    /// A test article is dated before the cutoff.
    TestBeforeCutoff,
    /// A prompt includes material dated at or after its target.
    SourceNotBeforeTarget,
    /// A dev article was used as a prediction target.
    DevTargeted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub check: AuditCheck,
    /// The offending article, exemplar or snippet id.
    pub id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub test_articles_checked: usize,
    pub bundles_checked: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn violating_ids(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.id.as_str()).collect()
    }
}

/// Checks a split and the prompts built from it for look-ahead leakage.
///
/// Target timestamps come from the split when the target is found there,
/// so a bundle cannot vouch for itself.
pub fn audit_leakage(split: &SplitCorpus, bundles: &[PromptBundle]) -> AuditReport {
    let mut violations = Vec::new();

    for a in &split.test {
        if a.article.timestamp < split.cutoff {
            violations.push(Violation {
                check: AuditCheck::TestBeforeCutoff,
                id: a.article.id.clone(),
                detail: format!("{} precedes cutoff {}", a.article.timestamp, split.cutoff),
            });
        }
    }

    let dev_ids: HashSet<&str> = split.dev_ids();
    let test_times: HashMap<&str, _> = split
        .test
        .iter()
        .map(|a| (a.article.id.as_str(), a.article.timestamp))
        .collect();

    for b in bundles {
        let target = b.target_article_id.as_str();
        if dev_ids.contains(target) {
            violations.push(Violation {
                check: AuditCheck::DevTargeted,
                id: target.to_string(),
                detail: format!("dev article used as {} target", b.strategy),
            });
        }
        let target_time = test_times.get(target).copied().unwrap_or(b.target_timestamp);
        for s in &b.sources {
            if s.timestamp >= target_time {
                violations.push(Violation {
                    check: AuditCheck::SourceNotBeforeTarget,
                    id: s.id.clone(),
                    detail: format!(
                        "{:?} dated {} used in {} prompt for {target} dated {target_time}",
                        s.kind, s.timestamp, b.strategy
                    ),
                });
            }
        }
    }

    violations.sort();
    violations.dedup();
    AuditReport {
        passed: violations.is_empty(),
        test_articles_checked: split.test.len(),
        bundles_checked: bundles.len(),
        violations,
    }
}
