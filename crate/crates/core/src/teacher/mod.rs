//! Completion client for the teacher model.
//!
//! Every request goes through a memo cache keyed by backend id, prompt digest
//! and decoding parameters. On a miss the backend is called with jittered
//! exponential backoff, and the result is appended to the cache file before it
//! is returned. Concurrent requests for the same key are collapsed so the
//! backend sees one call.

mod backend;
mod cache;
mod remote;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backend::{Backend, BackendError, MockBackend, ReplayBackend};
pub use cache::{CacheEntry, CacheKey, CompletionCache, CACHE_FILE};
pub use remote::{ApiStyle, RemoteBackend};

use crate::digest::Digest;
use crate::signals::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    prompt_digest: Digest,
    prompt_text: String,
    backend_id: String,
    decoding: Decoding,
}

impl CompletionRequest {
    pub fn new(
        prompt_text: impl Into<String>,
        backend_id: impl Into<String>,
        decoding: Decoding,
    ) -> Self {
        let prompt_text = prompt_text.into();
        CompletionRequest {
            prompt_digest: Digest::of(&prompt_text),
            prompt_text,
            backend_id: backend_id.into(),
            decoding,
        }
    }

    pub fn prompt_digest(&self) -> Digest {
        self.prompt_digest
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::new(&self.backend_id, self.prompt_digest, self.decoding)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    pub prompt_digest: Digest,
    pub cached: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
    /// When the completion was first produced; cache hits keep the original time.
    pub created_at: DateTime<Utc>,
}

impl CompletionResult {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            backend_id: self.backend_id.clone(),
            prompt_digest: self.prompt_digest,
            created_at: self.created_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Retryable,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TeacherError {
    #[error("no backend registered under {0:?}")]
    UnknownBackend(String),
    #[error("request digest does not match its prompt text")]
    DigestMismatch,
    #[error("backend {backend_id}: gave up after {attempts} attempts: {last_error}")]
    RetriesExhausted {
        backend_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("backend {backend_id}: {message}")]
    Fatal { backend_id: String, message: String },
    #[error("corrupt cache entry at {path}:{line}: {reason}")]
    CacheCorrupt {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("cache i/o on {path}: {message}")]
    CacheIo { path: String, message: String },
}

impl TeacherError {
    pub fn class(&self) -> ErrorClass {
        match self {
            TeacherError::RetriesExhausted { .. } => ErrorClass::Retryable,
            _ => ErrorClass::Fatal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 1_000,
            multiplier: 2.0,
            max_delay_ms: 60_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            jitter: false,
            ..RetryPolicy::default()
        }
    }

    /// Delay before attempt `attempt + 1`, given that `attempt` (1-based) failed.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let base = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        let ms = if self.jitter && base > 0.0 {
            base + rand::rng().random_range(0.0..=base / 2.0)
        } else {
            base
        };
        Duration::from_millis(ms as u64)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always returns the same instant; used for byte-reproducible runs.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

pub struct TeacherClient {
    backends: HashMap<String, Arc<dyn Backend>>,
    cache: CompletionCache,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl TeacherClient {
    pub fn new(cache: CompletionCache) -> Self {
        TeacherClient {
            backends: HashMap::new(),
            cache,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock),
            key_locks: Mutex::new(HashMap::new()),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_backend(mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.backends.insert(id.into(), backend);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn cache(&self) -> &CompletionCache {
        &self.cache
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, TeacherError> {
        let started = Instant::now();
        let backend = self
            .backends
            .get(req.backend_id())
            .ok_or_else(|| TeacherError::UnknownBackend(req.backend_id().to_string()))?;
        if Digest::of(req.prompt_text()) != req.prompt_digest() {
            return Err(TeacherError::DigestMismatch);
        }

        let key = req.cache_key();
        let key_lock = {
            let mut locks = self.key_locks.lock().expect("key lock table poisoned");
            locks.entry(key.clone()).or_default().clone()
        };
        let _guard = key_lock.lock().expect("key lock poisoned");

        if let Some(entry) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(CompletionResult {
                text: entry.text,
                backend_id: req.backend_id().to_string(),
                prompt_digest: req.prompt_digest(),
                cached: true,
                latency_ms: started.elapsed().as_millis() as u64,
                attempt_count: 1,
                created_at: entry.timestamp,
            });
        }

        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            tracing::debug!(backend = req.backend_id(), digest = %req.prompt_digest().short(), attempt, "calling backend");
            match backend.complete(req.prompt_text(), &req.decoding()) {
                Ok(text) if !text.trim().is_empty() => break text,
                Ok(_) => {
                    if attempt >= max_attempts {
                        return Err(self.exhausted(req, attempt, "empty completion".into()));
                    }
                }
                Err(BackendError::Transient(msg)) => {
                    tracing::warn!(backend = req.backend_id(), attempt, error = %msg, "transient backend error");
                    if attempt >= max_attempts {
                        return Err(self.exhausted(req, attempt, msg));
                    }
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(TeacherError::Fatal {
                        backend_id: req.backend_id().to_string(),
                        message,
                    })
                }
            }
            let delay = self.retry.delay_after(attempt);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
        };

        let created_at = self.clock.now();
        self.cache.insert(CacheEntry {
            backend_id: req.backend_id().to_string(),
            prompt_digest: req.prompt_digest(),
            temperature: req.decoding().temperature,
            max_output_tokens: req.decoding().max_output_tokens,
            text: text.clone(),
            timestamp: created_at,
        })?;
        Ok(CompletionResult {
            text,
            backend_id: req.backend_id().to_string(),
            prompt_digest: req.prompt_digest(),
            cached: false,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempt,
            created_at,
        })
    }

    fn exhausted(
        &self,
        req: &CompletionRequest,
        attempts: u32,
        last_error: String,
    ) -> TeacherError {
        TeacherError::RetriesExhausted {
            backend_id: req.backend_id().to_string(),
            attempts,
            last_error,
        }
    }

    /// Complete every request with at most `parallelism` requests in flight.
    /// Results line up with `reqs`; a failure only affects its own slot.
    pub fn complete_batch(
        &self,
        reqs: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<CompletionResult, TeacherError>> {
        let workers = parallelism.max(1).min(reqs.len());
        if workers <= 1 {
            return reqs.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResult, TeacherError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    let res = self.complete(&reqs[i]);
                    *slots[i].lock().expect("slot poisoned") = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| {
                s.into_inner()
                    .expect("slot poisoned")
                    .expect("every slot is filled")
            })
            .collect()
    }
}

/// How a backend entry in the run configuration is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// HTTP completions endpoint.
    Remote,
    /// Cache only; a miss is a fatal error.
    Replay,
    /// Offline deterministic teacher used by the demo.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub api_style: ApiStyle,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

pub fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn Backend>, TeacherError> {
    let fatal = |message: String| TeacherError::Fatal {
        backend_id: spec.id.clone(),
        message,
    };
    match spec.kind {
        BackendKind::Replay => Ok(Arc::new(ReplayBackend)),
        BackendKind::Mock => Ok(Arc::new(crate::demo::demo_teacher())),
        BackendKind::Remote => {
            let base_url = spec
                .base_url
                .clone()
                .ok_or_else(|| fatal("remote backend needs base_url".into()))?;
            let model = spec
                .model_name
                .clone()
                .ok_or_else(|| fatal("remote backend needs model_name".into()))?;
            let key_var = spec
                .api_key_env
                .clone()
                .ok_or_else(|| fatal("remote backend needs api_key_env".into()))?;
            let key = std::env::var(&key_var)
                .map_err(|_| fatal(format!("environment variable {key_var} is not set")))?;
            let backend = RemoteBackend::new(base_url, model, spec.api_style, key)
                .map_err(|e| fatal(e.to_string()))?;
            Ok(Arc::new(backend))
        }
    }
}
