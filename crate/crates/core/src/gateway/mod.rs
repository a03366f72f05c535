//! Provider-agnostic access to chat-completion and embedding endpoints.
//!
//! Every model call in the crate goes through a [`Gateway`]. The gateway
//! owns the in-flight bound, the retry policy and the fixture store:
//!
//! * with a cache directory, every live or mock exchange is written as one
//!   fixture file named by the request fingerprint, and later identical
//!   requests are answered from it;
//! * the `replay` backend answers only from fixtures and fails with
//!   [`GatewayError::Unrecorded`] on a miss.

mod http;
mod limiter;
pub mod mock;
mod request;
mod store;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, OpenAiCompatible, ProviderDialect};
pub use limiter::InFlightLimiter;
pub use request::{
    Attachment, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, Message, Role,
    TaskContext, TokenUsage,
};
pub use store::{Fixture, FixtureStore};

use crate::metrics::Embedder;

pub const ENV_API_KEY: &str = "IDTRACE_API_KEY";
pub const ENV_ENDPOINT: &str = "IDTRACE_ENDPOINT";
pub const ENV_CACHE_DIR: &str = "IDTRACE_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unrecorded exchange {fingerprint}")]
    Unrecorded { fingerprint: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {message}")]
    Transport { message: String, transient: bool },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("fixture store error: {0}")]
    Store(String),
    #[error("backend '{backend}' does not support {operation}")]
    Unsupported { backend: String, operation: String },
}

impl GatewayError {
    /// Whether the retry policy should try again.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport { transient, .. } => *transient,
            GatewayError::Status { status, .. } => matches!(status, 408 | 429 | 500..=599),
            _ => false,
        }
    }
}

/// Which backend answers requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendKind {
    HttpChat,
    Replay,
    Mock(String),
}

impl TryFrom<String> for BackendKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendKind> for String {
    fn from(b: BackendKind) -> String {
        b.to_string()
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http_chat" | "http" => Ok(Self::HttpChat),
            "replay" => Ok(Self::Replay),
            other => match other.strip_prefix("mock:") {
                Some(name) if !name.is_empty() => Ok(Self::Mock(name.to_string())),
                _ => Err(format!(
                    "unknown backend '{other}' (expected http_chat, replay or mock:<name>)"
                )),
            },
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::HttpChat => f.write_str("http_chat"),
            Self::Replay => f.write_str("replay"),
            Self::Mock(n) => write!(f, "mock:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub count: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            count: 3,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1 << attempt.min(10)))
    }
}

/// Gateway settings. Holds the name of the credential variable, never the
/// credential itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    pub credential_env: String,
    pub model: String,
    pub embed_model: String,
    pub in_flight: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::HttpChat,
            endpoint: "https://api.openai.com/v1".into(),
            credential_env: ENV_API_KEY.into(),
            model: "gpt-4o".into(),
            embed_model: "text-embedding-3-small".into(),
            in_flight: 4,
            retry: RetryPolicy::default(),
            cache_dir: None,
            timeout_secs: 120,
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

impl GatewayConfig {
    pub fn mock(name: &str) -> Self {
        Self {
            backend: BackendKind::Mock(name.into()),
            model: format!("mock-{name}"),
            embed_model: format!("mock-{name}"),
            retry: RetryPolicy {
                count: 0,
                backoff_ms: 0,
            },
            ..Self::default()
        }
    }

    pub fn replay(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            backend: BackendKind::Replay,
            cache_dir: Some(cache_dir.into()),
            ..Self::default()
        }
    }

    /// Applies `IDTRACE_ENDPOINT` and `IDTRACE_CACHE_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Ok(e) = std::env::var(ENV_ENDPOINT) {
            if !e.is_empty() {
                self.endpoint = e;
            }
        }
        if let Ok(d) = std::env::var(ENV_CACHE_DIR) {
            if !d.is_empty() {
                self.cache_dir = Some(PathBuf::from(d));
            }
        }
    }
}

/// A source of model responses.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        let _ = req;
        Err(GatewayError::Unsupported {
            backend: self.name(),
            operation: "embeddings".into(),
        })
    }
}

struct ReplayOnly;

impl Backend for ReplayOnly {
    fn name(&self) -> String {
        "replay".into()
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Err(GatewayError::Unrecorded {
            fingerprint: req.fingerprint(),
        })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        Err(GatewayError::Unrecorded {
            fingerprint: req.fingerprint(),
        })
    }
}

/// Counters exposed for tests and run summaries.
#[derive(Debug, Default)]
struct Counters {
    calls: AtomicU64,
    backend_calls: AtomicU64,
    retries: AtomicU64,
    cache_hits: AtomicU64,
    recorded: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub calls: u64,
    pub backend_calls: u64,
    pub retries: u64,
    pub cache_hits: u64,
    pub recorded: u64,
    pub max_in_flight: usize,
}

/// Thread-safe entry point for every model call.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    store: Option<FixtureStore>,
    replay_only: bool,
    limiter: InFlightLimiter,
    retry: RetryPolicy,
    model: String,
    embed_model: String,
    temperature: f32,
    max_tokens: u32,
    counters: Counters,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("model", &self.model)
            .field("replay_only", &self.replay_only)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds the backend named by `config`. Mock backends that need clip
    /// data are built with [`Gateway::with_backend`] instead.
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match &config.backend {
            BackendKind::HttpChat => Arc::new(HttpBackend::from_config(config)?),
            BackendKind::Replay => Arc::new(ReplayOnly),
            BackendKind::Mock(name) => mock::builtin(name, None)?,
        };
        Self::with_backend(config, backend)
    }

    pub fn with_backend(
        config: &GatewayConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, GatewayError> {
        let replay_only = config.backend == BackendKind::Replay;
        if replay_only && config.cache_dir.is_none() {
            return Err(GatewayError::Config(
                "replay backend requires a cache directory".into(),
            ));
        }
        if config.in_flight == 0 {
            return Err(GatewayError::Config("in_flight must be >= 1".into()));
        }
        let store = config
            .cache_dir
            .as_ref()
            .map(|d| FixtureStore::open(d.clone()))
            .transpose()?;
        Ok(Self {
            backend,
            store,
            replay_only,
            limiter: InFlightLimiter::new(config.in_flight),
            retry: config.retry,
            model: config.model.clone(),
            embed_model: config.embed_model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            counters: Counters::default(),
        })
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    /// A request with the configured model, temperature and token limit.
    pub fn request(&self, task: TaskContext, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            task: Some(task),
        }
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let fingerprint = req.fingerprint();
        if let Some(store) = &self.store {
            if let Some(fx) = store.load::<ChatRequest, ChatResponse>(&fingerprint)? {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(fx.response);
            }
        }
        if self.replay_only {
            return Err(GatewayError::Unrecorded { fingerprint });
        }
        let response = self.with_retries(|| {
            let start = Instant::now();
            let mut r = self.backend.chat(req)?;
            if r.latency_ms == 0 {
                r.latency_ms = start.elapsed().as_millis() as u64;
            }
            Ok(r)
        })?;
        if let Some(store) = &self.store {
            store.save(&Fixture::new(req.clone(), response.clone(), fingerprint))?;
            self.counters.recorded.fetch_add(1, Ordering::Relaxed);
        }
        Ok(response)
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let req = EmbedRequest {
            model: self.embed_model.clone(),
            texts: texts.to_vec(),
        };
        let fingerprint = req.fingerprint();
        let cached = match &self.store {
            Some(store) => store.load::<EmbedRequest, EmbedResponse>(&fingerprint)?,
            None => None,
        };
        let response = match cached {
            Some(fx) => {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                fx.response
            }
            None if self.replay_only => return Err(GatewayError::Unrecorded { fingerprint }),
            None => {
                let r = self.with_retries(|| self.backend.embed(&req))?;
                if let Some(store) = &self.store {
                    store.save(&Fixture::new(req.clone(), r.clone(), fingerprint))?;
                    self.counters.recorded.fetch_add(1, Ordering::Relaxed);
                }
                r
            }
        };
        check_dimensions(&response.vectors, texts.len())?;
        Ok(response.vectors)
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.retry.count => {
                    log::warn!("transient gateway failure (attempt {}): {e}", attempt + 1);
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            calls: c.calls.load(Ordering::Relaxed),
            backend_calls: c.backend_calls.load(Ordering::Relaxed),
            retries: c.retries.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            recorded: c.recorded.load(Ordering::Relaxed),
            max_in_flight: self.limiter.max_observed(),
        }
    }
}

fn check_dimensions(vectors: &[Vec<f32>], expected: usize) -> Result<(), GatewayError> {
    if vectors.len() != expected {
        return Err(GatewayError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(GatewayError::Protocol(format!(
                "embedding dimension mismatch in batch: {} vs {}",
                first.len(),
                bad.len()
            )));
        }
    }
    Ok(())
}

impl Embedder for Gateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.embed_texts(texts)
    }
}
