use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::Decoding;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: rate limits, timeouts, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    /// Configuration or authentication problems; retrying cannot help.
    #[error("fatal: {0}")]
    Fatal(String),
}

/// A text completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError>;
}

/// Serves nothing: every call fails without touching the network. Paired with
/// a populated cache it replays a previous run exactly.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReplayBackend;

impl Backend for ReplayBackend {
    fn complete(&self, _prompt: &str, _decoding: &Decoding) -> Result<String, BackendError> {
        Err(BackendError::Fatal(
            "replay backend has no cached completion for this prompt".into(),
        ))
    }
}

type Responder = Box<dyn Fn(&str) -> Result<String, BackendError> + Send + Sync>;

/// Deterministic in-process backend with call instrumentation.
///
/// Responses come from a digest table, then from an optional fallback
/// function. Failures can be scripted per prompt, and the mock records every
/// prompt it sees along with the peak number of concurrent calls.
#[derive(Default)]
pub struct MockBackend {
    responses: HashMap<Digest, String>,
    fallback: Option<Responder>,
    failures: Mutex<HashMap<Digest, VecDeque<BackendError>>>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, prompt: &str, text: impl Into<String>) -> Self {
        self.responses.insert(Digest::of(prompt), text.into());
        self
    }

    pub fn with_digest_response(mut self, digest: Digest, text: impl Into<String>) -> Self {
        self.responses.insert(digest, text.into());
        self
    }

    pub fn with_fallback(
        mut self,
        f: impl Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    /// The next `n` calls for `prompt` fail with `err`.
    pub fn fail_times(self, prompt: &str, n: usize, err: BackendError) -> Self {
        self.fail_digest_times(Digest::of(prompt), n, err)
    }

    pub fn fail_digest_times(self, digest: Digest, n: usize, err: BackendError) -> Self {
        self.failures
            .lock()
            .unwrap()
            .entry(digest)
            .or_default()
            .extend(std::iter::repeat_n(err, n));
        self
    }

    /// Sleep this long inside every call, to make overlap observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Prompts in the order the calls started.
    pub fn call_log(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl Backend for MockBackend {
    fn complete(&self, prompt: &str, _decoding: &Decoding) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(prompt.to_string());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        let digest = Digest::of(prompt);
        let scripted = self
            .failures
            .lock()
            .unwrap()
            .get_mut(&digest)
            .and_then(VecDeque::pop_front);
        let out = match scripted {
            Some(err) => Err(err),
            None => match self.responses.get(&digest) {
                Some(text) => Ok(text.clone()),
                None => match &self.fallback {
                    Some(f) => f(prompt),
                    None => Err(BackendError::Fatal(format!(
                        "mock has no response for prompt {}",
                        digest.short()
                    ))),
                },
            },
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
