//! OpenAI-compatible `chat/completions` client.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{CompletionRequest, Provider, ProviderError};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

pub struct OpenAiProvider {
    name: String,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiProvider")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl OpenAiProvider {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let base = base_url.trim_end_matches('/');
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            name: format!("openai@{base}"),
            endpoint: format!("{base}/chat/completions"),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn body(request: &CompletionRequest<'_>) -> serde_json::Value {
        let p = request.params;
        let mut body = json!({
            "model": p.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
        });
        if let Some(top_p) = p.top_p {
            body["top_p"] = json!(top_p);
        }
        if let Some(seed) = p.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Provider for OpenAiProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_network(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(Self::body(request))
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => {
                let parsed: ChatResponse = serde_json::from_str(&text)
                    .map_err(|e| ProviderError::Malformed(format!("{e}: {}", snippet(&text))))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .ok_or_else(|| ProviderError::Malformed(format!("no message content: {}", snippet(&text))))
            }
            401 | 403 => Err(ProviderError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 | 409 | 429 | 500..=599 => {
                Err(ProviderError::Transient(format!("HTTP {status}: {}", snippet(&text))))
            }
            _ => Err(ProviderError::Http {
                status,
                body: snippet(&text),
            }),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}
