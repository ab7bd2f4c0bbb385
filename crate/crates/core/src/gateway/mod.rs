//! Uniform completion interface over interchangeable providers, with a
//! persistent content-addressed cache, bounded concurrency and retries.

mod cache;
pub mod openai;
pub mod stub;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use openai::OpenAiProvider;
pub use stub::{Rulebook, StubProvider, StubRule};

pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network call attempted in offline mode ({0})")]
    Offline(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: ProviderError },
    #[error(transparent)]
    Provider(ProviderError),
    #[error("cache journal write failed: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

impl GenerationParams {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: None,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidParams("model_name is empty".into()));
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GatewayError::InvalidParams(format!("top_p {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub prompt_digest: String,
    pub provider: String,
    pub params: GenerationParams,
    pub sample_index: u32,
    pub completion_text: String,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
}

pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a GenerationParams,
    pub sample_index: u32,
}

pub trait Provider: Send + Sync {
    /// Stable identifier; part of the cache key.
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;

    fn is_network(&self) -> bool {
        false
    }
}

/// Wraps a network provider so that any call fails. Cached completions keep
/// working because the wrapped provider's name is preserved.
pub struct OfflineGuard<P> {
    inner: P,
}

impl<P: Provider> OfflineGuard<P> {
    pub fn new(inner: P) -> Self {
        Self { inner }
    }
}

impl<P: Provider> Provider for OfflineGuard<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, _request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        Err(ProviderError::Offline(self.inner.name().to_string()))
    }

    fn is_network(&self) -> bool {
        false
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    provider: &'a str,
    model_name: &'a str,
    temperature: f64,
    max_tokens: u32,
    top_p: Option<f64>,
    seed: Option<u64>,
    sample_index: u32,
    prompt: &'a str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over a fixed-order JSON serialization of everything that can
/// change a completion.
pub fn cache_key(provider: &str, params: &GenerationParams, prompt: &str, sample_index: u32) -> String {
    let material = KeyMaterial {
        provider,
        model_name: &params.model_name,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        top_p: params.top_p,
        seed: params.seed,
        sample_index,
        prompt,
    };
    sha256_hex(&serde_json::to_vec(&material).expect("key material serializes"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

struct Pending {
    keys: Mutex<HashSet<String>>,
    cv: Condvar,
}

struct PendingGuard<'a> {
    pending: &'a Pending,
    key: String,
}

impl Drop for PendingGuard<'_> {
    fn drop(&mut self) {
        self.pending
            .keys
            .lock()
            .expect("pending set poisoned")
            .remove(&self.key);
        self.pending.cv.notify_all();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatewayStats {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

pub struct ModelGateway {
    provider: Box<dyn Provider>,
    cache: ResponseCache,
    retry: RetryPolicy,
    sleeper: Sleeper,
    slots: Semaphore,
    pending: Pending,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
}

impl ModelGateway {
    pub fn new(provider: Box<dyn Provider>, cache: ResponseCache, max_in_flight: usize) -> Self {
        Self {
            provider,
            cache,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
            slots: Semaphore::new(max_in_flight.max(1)),
            pending: Pending {
                keys: Mutex::new(HashSet::new()),
                cv: Condvar::new(),
            },
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replaces `thread::sleep` between retries, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            provider_calls: self.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }

    /// Returns the completion for `(prompt, params, sample_index)`, from the
    /// cache when present. Concurrent requests for the same key share one
    /// provider call.
    pub fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionRecord, GatewayError> {
        params.validate()?;
        let key = cache_key(self.provider.name(), params, prompt, sample_index);

        let _claim = loop {
            if let Some(hit) = self.cache.get(&key) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
            let mut keys = self.pending.keys.lock().expect("pending set poisoned");
            if keys.contains(&key) {
                let _unused = self.pending.cv.wait(keys).expect("pending set poisoned");
                continue;
            }
            keys.insert(key.clone());
            break PendingGuard {
                pending: &self.pending,
                key: key.clone(),
            };
        };

        let request = CompletionRequest {
            prompt,
            params,
            sample_index,
        };
        let (text, latency_ms) = self.call_with_retry(&request)?;
        let record = CompletionRecord {
            cache_key: key,
            prompt_digest: sha256_hex(prompt.as_bytes()),
            provider: self.provider.name().to_string(),
            params: params.clone(),
            sample_index,
            completion_text: text,
            latency_ms,
            created_at: Utc::now(),
        };
        self.cache.insert(record.clone())?;
        Ok(record)
    }

    fn call_with_retry(&self, request: &CompletionRequest<'_>) -> Result<(String, u64), GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.slots.acquire();
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                let started = Instant::now();
                let r = self.provider.complete(request);
                (r, started.elapsed().as_millis() as u64)
            };
            match outcome {
                (Ok(text), latency) => return Ok((text, latency)),
                (Err(e), _) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    (self.sleeper)(self.retry.delay_after(attempt));
                }
                (Err(e), _) if e.is_retryable() => {
                    return Err(GatewayError::RetriesExhausted { attempts: attempt, last: e });
                }
                (Err(e), _) => return Err(GatewayError::Provider(e)),
            }
        }
    }
}
