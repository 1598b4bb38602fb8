//! Model-prediction interface: a backend trait with remote and mock
//! implementations, a [`Client`] adding retries and the on-disk response
//! cache, and rating extraction from free-form completions.

mod cache;
mod mock;
mod parse;
mod remote;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, ResponseCache};
pub use mock::{MockBackend, MockMode};
pub use parse::{parse_rating, ParseStatus};
pub use remote::RemoteChatBackend;

use crate::corpus::{ItemId, UserId};
use crate::exec::Exec;
use crate::promptkit::RenderedPrompt;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("gave up after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Exhausted { attempts: Vec<String>, status: Option<u16> },
}

impl BackendError {
    fn retriable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Http { .. } | BackendError::Protocol(_))
    }
}

/// A completion request. `target` is informational; only mocks read it.
#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub prompt: &'a str,
    pub target: Option<(UserId, ItemId)>,
}

pub trait Backend: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, req: &Request<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteChat,
    #[default]
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MockKind {
    #[default]
    UserMean,
    Fixed,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    pub retry_count: u32,
    /// Sleep before retry `n` is `retry_backoff_ms[min(n, len-1)]`.
    pub retry_backoff_ms: Vec<u64>,
    pub api_key_env: String,
    pub cache_dir: Option<PathBuf>,
    pub mock: MockKind,
    pub mock_completion: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: "mock".into(),
            temperature: 0.0,
            max_output_tokens: 16,
            request_timeout_secs: 60.0,
            max_in_flight: 4,
            retry_count: 3,
            retry_backoff_ms: vec![250, 1000, 4000],
            api_key_env: "REVBENCH_API_KEY".into(),
            cache_dir: None,
            mock: MockKind::UserMean,
            mock_completion: "3".into(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be a non-negative number".into()));
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err(BackendError::Config("request_timeout_secs must be positive".into()));
        }
        if self.kind == BackendKind::RemoteChat && self.endpoint_url.is_none() {
            return Err(BackendError::Config("remote-chat backend needs endpoint_url".into()));
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        Exec::Bounded(self.max_in_flight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub cache_hit: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub raw: String,
    pub rating: Option<f64>,
    pub parse_status: ParseStatus,
    pub cache_hit: bool,
    pub latency_ms: u64,
}

/// A backend plus retry policy and optional response cache.
pub struct Client {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    temperature: f64,
    retry_count: u32,
    backoff: Vec<Duration>,
    max_in_flight: usize,
}

impl Client {
    pub fn new(backend: Box<dyn Backend>, config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(Client {
            backend,
            cache,
            temperature: config.temperature,
            retry_count: config.retry_count,
            backoff: config.retry_backoff_ms.iter().map(|&ms| Duration::from_millis(ms)).collect(),
            max_in_flight: config.max_in_flight,
        })
    }

    /// Builds the remote backend, or a mock in the configured mode. The
    /// user-mean mock needs the training fold.
    pub fn from_config(config: &BackendConfig, train: Option<&crate::corpus::View<'_>>) -> Result<Self, BackendError> {
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::RemoteChat => Box::new(RemoteChatBackend::new(config)?),
            BackendKind::Mock => {
                let mode = match config.mock {
                    MockKind::Fixed => MockMode::Fixed(config.mock_completion.clone()),
                    MockKind::Fail => MockMode::Fail,
                    MockKind::UserMean => {
                        let train = train.ok_or_else(|| BackendError::Config("user-mean mock needs a training fold".into()))?;
                        MockMode::user_mean(train)
                    }
                };
                Box::new(MockBackend::new(mode))
            }
        };
        Client::new(backend, config)
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn exec(&self) -> Exec {
        Exec::Bounded(self.max_in_flight)
    }

    pub fn complete(&self, req: &Request<'_>) -> Result<Completion, BackendError> {
        if req.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let start = Instant::now();
        let key = cache_key(self.backend.model_name(), self.temperature, req.prompt);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key)? {
                return Ok(Completion { text, cache_hit: true, latency_ms: start.elapsed().as_millis() as u64 });
            }
        }
        let mut attempts = Vec::new();
        let mut last_status = None;
        for attempt in 0..=self.retry_count {
            if attempt > 0 && !self.backoff.is_empty() {
                std::thread::sleep(self.backoff[(attempt as usize - 1).min(self.backoff.len() - 1)]);
            }
            match self.backend.complete(req) {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&key, self.backend.model_name(), self.temperature, &text)?;
                    }
                    return Ok(Completion { text, cache_hit: false, latency_ms: start.elapsed().as_millis() as u64 });
                }
                Err(e) if e.retriable() => {
                    if let BackendError::Http { status, .. } = &e {
                        last_status = Some(*status);
                    }
                    log::debug!("attempt {} failed: {e}", attempt + 1);
                    attempts.push(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        Err(BackendError::Exhausted { attempts, status: last_status })
    }

    pub fn predict(&self, prompt: &RenderedPrompt) -> Result<Prediction, BackendError> {
        let c = self.complete(&Request { prompt: &prompt.text, target: Some(prompt.target) })?;
        let (rating, parse_status) = parse_rating(&c.text);
        Ok(Prediction { raw: c.text, rating, parse_status, cache_hit: c.cache_hit, latency_ms: c.latency_ms })
    }
}
