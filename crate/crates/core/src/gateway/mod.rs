//! Uniform access to chat LLMs.
//!
//! A [`Gateway`] owns one provider (remote chat-completion endpoint or the
//! deterministic [`MockProvider`]), a content-addressed [`ResponseCache`] and a
//! global in-flight limit. Every pipeline stage talks to the model through
//! [`Gateway::complete`] or [`Gateway::batch_complete`].

pub mod cache;
pub mod catalog;
pub mod mock;
pub mod provider;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Language, Setting};

pub use cache::{CacheEntry, ResponseCache};
pub use catalog::{vars, Catalog};
pub use mock::{MockProvider, ScriptRule};
pub use provider::{Provider, ProviderRequest, RemoteChatProvider, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("unbound placeholder '{0}'")]
    UnboundPlaceholder(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("provider failed after {attempts} attempts (last status {}): {message}", status.map_or_else(|| "none".to_string(), |s| s.to_string()))]
    Exhausted {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("cache error: {0}")]
    Cache(String),
    #[error("empty paragraph")]
    EmptyParagraph,
    #[error("invalid translation direction {0}")]
    InvalidDirection(Setting),
}

/// A chat prompt: system instructions, few-shot exchanges and the final user
/// turn. `template` and `language` are bookkeeping only and never enter the
/// cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub template: String,
    pub language: Language,
    pub system: String,
    pub exchanges: Vec<(String, String)>,
    pub final_user: String,
    pub pre_generation_prefix: Option<String>,
}

/// One message of the rendered conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl ChatPrompt {
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> ChatPrompt {
        self.pre_generation_prefix = Some(prefix.into());
        self
    }

    /// The conversation as chat messages, ending with the final user turn.
    pub fn messages(&self) -> Vec<Message> {
        let msg = |role: &str, content: &str| Message {
            role: role.to_string(),
            content: content.to_string(),
        };
        let mut out = vec![msg("system", &self.system)];
        for (u, a) in &self.exchanges {
            out.push(msg("user", u));
            out.push(msg("assistant", a));
        }
        out.push(msg("user", &self.final_user));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteChat,
    Mock,
}

impl ProviderKind {
    pub fn id(self) -> &'static str {
        match self {
            ProviderKind::RemoteChat => "remote_chat",
            ProviderKind::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_inflight: usize,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Run seed; feeds the mock provider and is forwarded to remote endpoints.
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub request_timeout_s: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            model: "gpt-4".to_string(),
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            max_inflight: 8,
            retry: RetryPolicy::default(),
            temperature: 0.0,
            max_tokens: None,
            seed: 17,
            cache_dir: None,
            request_timeout_s: 120,
        }
    }
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> ProviderConfig {
        ProviderConfig {
            kind: ProviderKind::Mock,
            model: "mock-1".to_string(),
            seed,
            ..ProviderConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

/// Result of one completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub response_text: String,
    pub latency_ms: u64,
    pub retrieved_from_cache: bool,
}

/// Content digest over provider, model, rendered prompt and decoding
/// parameters.
pub fn cache_key(provider: &str, model: &str, prompt: &ChatPrompt, decoding: &DecodingParams) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        provider: &'a str,
        model: &'a str,
        messages: Vec<Message>,
        prefix: &'a Option<String>,
        decoding: &'a DecodingParams,
    }
    let material = KeyMaterial {
        provider,
        model,
        messages: prompt.messages(),
        prefix: &prompt.pre_generation_prefix,
        decoding,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Counting semaphore bounding in-flight provider requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Limiter {
        Limiter {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Provider-call statistics for one gateway.
#[derive(Debug, Default)]
pub struct GatewayStats {
    pub provider_calls: AtomicU64,
    pub cache_hits: AtomicU64,
    pub failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub failures: u64,
}

pub struct Gateway {
    config: ProviderConfig,
    provider: Arc<dyn Provider>,
    cache: ResponseCache,
    limiter: Limiter,
    stats: GatewayStats,
    catalog: Catalog,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("model", &self.config.model)
            .field("max_inflight", &self.config.max_inflight)
            .finish()
    }
}

fn validate(config: &ProviderConfig) -> Result<(), GatewayError> {
    if config.max_inflight == 0 {
        return Err(GatewayError::Config("max_inflight must be at least 1".into()));
    }
    if config.retry.max_attempts == 0 {
        return Err(GatewayError::Config("retry.max_attempts must be at least 1".into()));
    }
    Ok(())
}

impl Gateway {
    /// Build a gateway for the configured provider kind. Remote providers
    /// resolve their credential here, before any request is made.
    pub fn new(config: ProviderConfig) -> Result<Gateway, GatewayError> {
        let provider: Arc<dyn Provider> = match config.kind {
            ProviderKind::Mock => Arc::new(MockProvider::new(config.seed)),
            ProviderKind::RemoteChat => Arc::new(RemoteChatProvider::from_config(&config)?),
        };
        Gateway::with_provider(config, provider)
    }

    pub fn with_provider(config: ProviderConfig, provider: Arc<dyn Provider>) -> Result<Gateway, GatewayError> {
        validate(&config)?;
        let cache = ResponseCache::new(config.cache_dir.clone())?;
        Ok(Gateway {
            limiter: Limiter::new(config.max_inflight),
            config,
            provider,
            cache,
            stats: GatewayStats::default(),
            catalog: Catalog::builtin(),
        })
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Gateway {
        self.catalog = catalog;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            provider_calls: self.stats.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.stats.cache_hits.load(Ordering::SeqCst),
            failures: self.stats.failures.load(Ordering::SeqCst),
        }
    }

    pub fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    pub fn key_for(&self, prompt: &ChatPrompt) -> String {
        cache_key(self.provider.id(), &self.config.model, prompt, &self.decoding())
    }

    /// Complete one prompt, consulting the cache first.
    pub fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionRecord, GatewayError> {
        let started = Instant::now();
        let decoding = self.decoding();
        let key = cache_key(self.provider.id(), &self.config.model, prompt, &decoding);
        if let Some(text) = self.cache.get(&key)? {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(CompletionRecord {
                cache_key: key,
                response_text: text,
                latency_ms: started.elapsed().as_millis() as u64,
                retrieved_from_cache: true,
            });
        }

        let request = ProviderRequest {
            prompt,
            model: &self.config.model,
            decoding: &decoding,
            cache_key: &key,
            seed: self.config.seed,
        };
        let continuation = {
            let _permit = self.limiter.acquire();
            self.send_with_retry(&request)?
        };
        let text = match &prompt.pre_generation_prefix {
            Some(prefix) => format!("{prefix}{continuation}"),
            None => continuation,
        };
        self.cache.put(&CacheEntry {
            key: key.clone(),
            provider: self.provider.id().to_string(),
            model: self.config.model.clone(),
            decoding,
            messages: prompt.messages(),
            prefix: prompt.pre_generation_prefix.clone(),
            response: text.clone(),
        })?;
        Ok(CompletionRecord {
            cache_key: key,
            response_text: text,
            latency_ms: started.elapsed().as_millis() as u64,
            retrieved_from_cache: false,
        })
    }

    fn send_with_retry(&self, request: &ProviderRequest<'_>) -> Result<String, GatewayError> {
        let max = self.config.retry.max_attempts;
        let mut attempts = 0;
        let mut last: Option<TransportError> = None;
        while attempts < max {
            attempts += 1;
            self.stats.provider_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.send(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("attempt {attempts}/{max} failed: {e}");
                    let retryable = e.retryable;
                    last = Some(e);
                    if !retryable {
                        break;
                    }
                    if attempts < max && self.config.retry.backoff_base_ms > 0 {
                        let wait = self.config.retry.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                }
            }
        }
        self.stats.failures.fetch_add(1, Ordering::SeqCst);
        let last = last.expect("at least one attempt");
        Err(GatewayError::Exhausted {
            attempts,
            status: last.status,
            message: last.message,
        })
    }

    /// Complete many prompts with at most `max_inflight` requests outstanding.
    /// Results come back in input order; failures are reported per item.
    pub fn batch_complete(&self, prompts: &[ChatPrompt]) -> Vec<Result<CompletionRecord, GatewayError>> {
        self.map_bounded(prompts, |p| self.complete(p))
    }

    /// Run `f` over `items` on up to `max_inflight` worker threads, keeping
    /// input order in the output.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        if items.is_empty() {
            return Vec::new();
        }
        let workers = self.config.max_inflight.min(items.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    *slots[i].lock() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("every slot filled"))
            .collect()
    }

    /// Render and run the paragraph-level translation prompt. The model output
    /// is returned verbatim.
    pub fn translate_paragraph(&self, text: &str, direction: Setting) -> Result<String, GatewayError> {
        let prompt = self.translation_prompt(text, direction)?;
        Ok(self.complete(&prompt)?.response_text)
    }

    pub fn translation_prompt(&self, text: &str, direction: Setting) -> Result<ChatPrompt, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyParagraph);
        }
        let template = match direction {
            Setting::En2Ru => "mt_en2ru",
            Setting::Ru2En => "mt_ru2en",
            other => return Err(GatewayError::InvalidDirection(other)),
        };
        self.catalog.render(template, None, &vars([("text", text.to_string())]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str) -> ChatPrompt {
        Catalog::builtin()
            .render("mt_ru2en", None, &vars([("text", text.to_string())]))
            .unwrap()
    }

    #[test]
    fn second_call_hits_cache() {
        let gw = Gateway::new(ProviderConfig::mock(7)).unwrap();
        let a = gw.complete(&prompt("Привет")).unwrap();
        let b = gw.complete(&prompt("Привет")).unwrap();
        assert!(!a.retrieved_from_cache);
        assert!(b.retrieved_from_cache);
        assert_eq!(a.response_text, b.response_text);
        assert_eq!(a.cache_key, b.cache_key);
        assert_eq!(gw.stats().provider_calls, 1);
        assert_eq!(gw.stats().cache_hits, 1);
    }

    #[test]
    fn key_ignores_template_name() {
        let p = prompt("x");
        let mut renamed = p.clone();
        renamed.template = "something_else".into();
        let d = DecodingParams {
            temperature: 0.0,
            max_tokens: None,
        };
        assert_eq!(cache_key("mock", "m", &p, &d), cache_key("mock", "m", &renamed, &d));
        let d2 = DecodingParams {
            temperature: 0.5,
            max_tokens: None,
        };
        assert_ne!(cache_key("mock", "m", &p, &d), cache_key("mock", "m", &p, &d2));
        assert_ne!(cache_key("mock", "m", &p, &d), cache_key("mock", "m2", &p, &d));
    }

    #[test]
    fn empty_batch() {
        let gw = Gateway::new(ProviderConfig::mock(1)).unwrap();
        assert!(gw.batch_complete(&[]).is_empty());
    }

    #[test]
    fn zero_inflight_rejected() {
        let cfg = ProviderConfig {
            max_inflight: 0,
            ..ProviderConfig::mock(1)
        };
        assert!(matches!(Gateway::new(cfg), Err(GatewayError::Config(_))));
    }

    #[test]
    fn translate_rejects_empty() {
        let gw = Gateway::new(ProviderConfig::mock(1)).unwrap();
        assert_eq!(gw.translate_paragraph("  ", Setting::En2Ru).unwrap_err().to_string(), "empty paragraph");
        assert!(gw.translate_paragraph("x", Setting::En).is_err());
    }

    #[test]
    fn prefix_is_prepended() {
        let gw = Gateway::new(ProviderConfig::mock(1)).unwrap();
        let p = prompt("Текст").with_prefix("\"");
        let r = gw.complete(&p).unwrap();
        assert!(r.response_text.starts_with('"'));
    }
}
