//! Deterministic in-process backend for tests and closed-loop runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Request};
use crate::corpus::{UserId, View};

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Always returns the same completion.
    Fixed(String),
    /// Returns the entries in turn, cycling.
    Sequence(Vec<String>),
    /// Returns the target user's training mean rating, or the training
    /// global mean for users absent from the fold.
    UserMean { means: HashMap<UserId, f64>, global: f64 },
    /// Every call fails with a transport error.
    Fail,
}

impl MockMode {
    pub fn user_mean(train: &View<'_>) -> MockMode {
        let means = train.users().filter_map(|u| train.user_mean(u).map(|m| (u, m))).collect();
        MockMode::UserMean { means, global: train.mean_rating().unwrap_or(3.0) }
    }
}

#[derive(Debug)]
pub struct MockBackend {
    mode: MockMode,
    model_name: String,
    latency: Duration,
    calls: AtomicUsize,
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl MockBackend {
    pub fn new(mode: MockMode) -> Self {
        let model_name = match &mode {
            MockMode::Fixed(_) => "mock-fixed".to_owned(),
            MockMode::Sequence(_) => "mock-sequence".to_owned(),
            MockMode::Fail => "mock-fail".to_owned(),
            // The answers depend on the training fold, so the fold's means
            // are part of the model identity (and thus of the cache key).
            MockMode::UserMean { means, global } => {
                let mut entries: Vec<_> = means.iter().map(|(u, m)| (u.0, m.to_bits())).collect();
                entries.sort_unstable();
                let mut h = Sha256::new();
                h.update(global.to_bits().to_le_bytes());
                for (u, m) in entries {
                    h.update(u.to_le_bytes());
                    h.update(m.to_le_bytes());
                }
                format!("mock-user-mean-{}", &hex::encode(h.finalize())[..16])
            }
        };
        MockBackend {
            mode,
            model_name,
            latency: Duration::ZERO,
            calls: AtomicUsize::new(0),
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Simulated per-call latency, useful for observing concurrency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously running calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, req: &Request<'_>) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let out = match &self.mode {
            MockMode::Fixed(s) => Ok(s.clone()),
            MockMode::Sequence(list) if list.is_empty() => Ok(String::new()),
            MockMode::Sequence(list) => Ok(list[n % list.len()].clone()),
            MockMode::UserMean { means, global } => {
                let value = req.target.and_then(|(u, _)| means.get(&u).copied()).unwrap_or(*global);
                Ok(value.to_string())
            }
            MockMode::Fail => Err(BackendError::Transport("mock backend configured to fail".into())),
        };
        self.live.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
