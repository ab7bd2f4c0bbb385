use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, GatewayError, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    pub pattern: String,
    pub completion: String,
}

/// Canned completions keyed by prompt substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rulebook {
    pub rules: Vec<StubRule>,
    pub fallback: String,
}

impl Rulebook {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read rulebook {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("bad rulebook {}: {e}", path.display())))
    }
}

/// Offline provider: the first rule (in declaration order) whose pattern
/// occurs in the prompt supplies the completion, else the fallback.
#[derive(Debug, Clone)]
pub struct StubProvider {
    rulebook: Rulebook,
}

impl StubProvider {
    pub fn new(rulebook: Rulebook) -> Result<Self, GatewayError> {
        if rulebook.rules.is_empty() {
            return Err(GatewayError::Config("stub rulebook has no rules".into()));
        }
        Ok(Self { rulebook })
    }

    pub fn respond(&self, prompt: &str) -> &str {
        self.rulebook
            .rules
            .iter()
            .find(|r| prompt.contains(&r.pattern))
            .map(|r| r.completion.as_str())
            .unwrap_or(&self.rulebook.fallback)
    }
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        Ok(self.respond(request.prompt).to_string())
    }
}
