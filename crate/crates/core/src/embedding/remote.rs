//! HTTP client for hosted embedding services.
//!
//! Requests are `POST {"model": .., "input": [..]}`; responses are
//! `{"data": [{"index": i, "embedding": [..]}, ..]}` (OpenAI-shaped) or a bare
//! `{"embeddings": [[..], ..]}`. Vectors are re-ordered by `index`.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    /// Relative jitter applied to every delay, e.g. 0.25 for ±25%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`, jittered.
    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let base = self.base_delay_ms as f64 * 2f64.powi(attempt.saturating_sub(1) as i32);
        let factor = if self.jitter > 0.0 {
            1.0 + rng.random_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64((base * factor).max(0.0) / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout() -> u64 {
    30
}
fn default_in_flight() -> usize {
    4
}
fn default_batch() -> usize {
    64
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            batch_size: default_batch(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(Error::validation(format!(
                "endpoint {:?} is not an http(s) URL",
                self.endpoint
            )));
        }
        if self.model.trim().is_empty() {
            return Err(Error::validation("remote model name is empty"));
        }
        if self.max_in_flight == 0 || self.batch_size == 0 || self.timeout_secs == 0 {
            return Err(Error::validation(
                "max_in_flight, batch_size and timeout_secs must be positive",
            ));
        }
        if self.retry.max_attempts == 0 || !(0.0..1.0).contains(&self.retry.jitter) {
            return Err(Error::validation("invalid retry policy"));
        }
        Ok(())
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct IndexedVector {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    Indexed { data: Vec<IndexedVector> },
    Bare { embeddings: Vec<Vec<f64>> },
}

enum AttemptError {
    Retryable(String),
    Fatal(Error),
}

/// Outcome of one chunk; `None` when skipped after an earlier failure.
type Slot = Mutex<Option<Result<Vec<Vec<f64>>>>>;

pub struct RemoteProvider {
    config: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
    gate: Semaphore,
    dim: OnceLock<usize>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        config.validate()?;
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::validation(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteProvider {
            gate: Semaphore::new(config.max_in_flight),
            config,
            token,
            agent,
            dim: OnceLock::new(),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.config.model
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    /// Highest number of simultaneous requests observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Embeds `texts` in chunks of `batch_size`, at most `max_in_flight` at a
    /// time. A failure is reported against the first text of the failing chunk.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&str]> = texts.chunks(self.config.batch_size).collect();
        let results: Vec<Slot> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let workers = self.config.max_in_flight.min(chunks.len());

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    let out = self.request_with_retry(chunk);
                    if out.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    *results[i].lock().unwrap() = Some(out);
                });
            }
        });

        let mut vectors = Vec::with_capacity(texts.len());
        for (i, slot) in results.into_iter().enumerate() {
            match slot.into_inner().unwrap() {
                Some(Ok(v)) => vectors.extend(v),
                Some(Err(e)) => {
                    return Err(Error::Batch {
                        index: i * self.config.batch_size,
                        source: Box::new(e),
                    })
                }
                // skipped after an earlier failure
                None => continue,
            }
        }
        Ok(vectors)
    }

    fn request_with_retry(&self, chunk: &[&str]) -> Result<Vec<Vec<f64>>> {
        let policy = &self.config.retry;
        let mut rng = rand::rng();
        let mut attempt = 1;
        loop {
            match self.request_once(chunk) {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => {
                    if attempt >= policy.max_attempts {
                        return Err(Error::Transient {
                            attempts: attempt,
                            message,
                        });
                    }
                    let wait = policy.delay(attempt, &mut rng);
                    log::warn!(
                        "embedding request failed (attempt {attempt}/{}): {message}; retrying in {wait:?}",
                        policy.max_attempts
                    );
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn request_once(&self, chunk: &[&str]) -> std::result::Result<Vec<Vec<f64>>, AttemptError> {
        let _permit = self.gate.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let out = self.send(chunk);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn send(&self, chunk: &[&str]) -> std::result::Result<Vec<Vec<f64>>, AttemptError> {
        let mut request = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: chunk,
        };
        let mut response = request
            .send_json(&body)
            .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Retryable(format!("reading body: {e}")))?;

        if !(200..300).contains(&status) {
            let message = error_message(&text);
            return if status == 429 || status >= 500 {
                Err(AttemptError::Retryable(format!("status {status}: {message}")))
            } else {
                Err(AttemptError::Fatal(Error::Provider { status, message }))
            };
        }
        self.decode(&text, chunk.len())
            .map_err(|message| AttemptError::Fatal(Error::Provider { status, message }))
    }

    fn decode(&self, body: &str, expected: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
        let parsed: EmbeddingResponse =
            serde_json::from_str(body).map_err(|e| format!("malformed response: {e}"))?;
        let vectors = match parsed {
            EmbeddingResponse::Indexed { mut data } => {
                data.sort_by_key(|d| d.index);
                if data.iter().enumerate().any(|(i, d)| d.index != i) {
                    return Err("response indices are not a permutation of the inputs".into());
                }
                data.into_iter().map(|d| d.embedding).collect::<Vec<_>>()
            }
            EmbeddingResponse::Bare { embeddings } => embeddings,
        };
        if vectors.len() != expected {
            return Err(format!(
                "expected {expected} vectors, response has {}",
                vectors.len()
            ));
        }
        for v in &vectors {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err("response contains an empty or non-finite vector".into());
            }
            let dim = *self.dim.get_or_init(|| v.len());
            if v.len() != dim {
                return Err(format!(
                    "vector dimension {} differs from earlier dimension {dim}",
                    v.len()
                ));
            }
        }
        Ok(vectors)
    }
}

fn error_message(body: &str) -> String {
    #[derive(Deserialize)]
    struct Nested {
        message: String,
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum ErrorBody {
        Nested { error: Nested },
        Flat { error: String },
        Message { message: String },
    }
    match serde_json::from_str::<ErrorBody>(body) {
        Ok(ErrorBody::Nested { error }) => error.message,
        Ok(ErrorBody::Flat { error }) | Ok(ErrorBody::Message { message: error }) => error,
        Err(_) => body.chars().take(500).collect(),
    }
}
