//! Backend-agnostic text generation with retries, rate limiting and bounded
//! concurrency.

mod http;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::GenerationParams;
use crate::prompt::PromptBundle;
use crate::rng::{stream_rng, streams, unit_f64};

pub use http::{HttpBackend, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use mock::{mock_labels, MockBackend, INFORMANT_CUES};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub request_id: String,
    pub bundle: PromptBundle,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl GenerationRequest {
    pub fn new(request_id: impl Into<String>, bundle: PromptBundle, params: &GenerationParams) -> Self {
        Self {
            request_id: request_id.into(),
            bundle,
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub request_id: String,
    pub text: String,
    pub backend_id: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A single failed backend call, classified for retry purposes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("rate limited: {message}")]
    RateLimited {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("request rejected: {0}")]
    Permanent(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::RateLimited { .. })
    }
}

pub trait Backend: Send + Sync {
    /// Descriptor recorded on every result, e.g. `mock` or `http:<model>`.
    fn id(&self) -> String;
    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {cause}")]
    Transport { attempts: u32, cause: BackendError },
    #[error("backend configuration error: {cause}")]
    Config { attempts: u32, cause: String },
    #[error("protocol error after {attempts} attempt(s): {cause}")]
    Protocol { attempts: u32, cause: String },
}

impl GatewayError {
    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::Transport { attempts, .. }
            | GatewayError::Config { attempts, .. }
            | GatewayError::Protocol { attempts, .. } => *attempts,
        }
    }
}

/// Exponential backoff with full jitter: retry `k` (0-based) sleeps a
/// uniform duration in `[0, min(max_delay, base_delay * 2^k)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn from_params(params: &GenerationParams) -> Self {
        Self {
            max_retries: params.max_retries,
            base_delay: Duration::from_millis(params.retry_base_delay_ms),
            ..Self::default()
        }
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_retries.saturating_add(1)
    }

    /// Delay ceiling before jitter; non-decreasing in `retry`.
    pub fn ceiling(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn jittered(&self, retry: u32, unit: f64) -> Duration {
        self.ceiling(retry).mul_f64(unit.clamp(0.0, 1.0))
    }
}

/// Spaces request starts at least `interval` apart across all workers.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        Self {
            interval: Duration::from_secs_f64(1.0 / rate),
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Thread-safe handle over one backend.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    limiter: Option<RateLimiter>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("policy", &self.policy)
            .finish()
    }
}

fn jitter_seed(request_id: &str) -> u64 {
    let digest = Sha256::digest(request_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, policy: RetryPolicy) -> Self {
        Self {
            backend,
            policy,
            limiter: None,
        }
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        self.limiter = Some(RateLimiter::per_second(requests_per_second));
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let started = Instant::now();
        let mut jitter = stream_rng(jitter_seed(&req.request_id), streams::JITTER);
        let max_attempts = self.policy.max_attempts();
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let err = match self.backend.complete(req) {
                Ok(text) if !text.trim().is_empty() => {
                    return Ok(GenerationResult {
                        request_id: req.request_id.clone(),
                        text,
                        backend_id: self.backend.id(),
                        latency: started.elapsed(),
                        attempt_count: attempt,
                    })
                }
                Ok(_) => BackendError::Protocol("empty completion".into()),
                Err(e) => e,
            };
            tracing::debug!(request = %req.request_id, attempt, error = %err, "backend call failed");
            match err {
                BackendError::Auth(cause) => return Err(GatewayError::Config { attempts: attempt, cause }),
                BackendError::Protocol(cause) => return Err(GatewayError::Protocol { attempts: attempt, cause }),
                BackendError::Permanent(_) => return Err(GatewayError::Transport { attempts: attempt, cause: err }),
                _ if attempt >= max_attempts => return Err(GatewayError::Transport { attempts: attempt, cause: err }),
                _ => {}
            }
            let mut delay = self.policy.jittered(attempt - 1, unit_f64(&mut jitter));
            if let BackendError::RateLimited {
                retry_after: Some(after),
                ..
            } = err
            {
                delay = delay.max(after.min(self.policy.max_delay));
            }
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
    }

    /// Runs `reqs` on at most `concurrency_limit` worker threads. Slot `i` of
    /// the output always holds the outcome of `reqs[i]`.
    pub fn generate_batch(
        &self,
        reqs: &[GenerationRequest],
        concurrency_limit: usize,
    ) -> Vec<Result<GenerationResult, GatewayError>> {
        run_bounded(reqs, concurrency_limit, |_, req| self.generate(req))
    }
}

/// Maps `f` over `items` on at most `limit` scoped worker threads, returning
/// outputs in input order.
pub fn run_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    assert!(limit >= 1, "concurrency limit must be at least 1");
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..limit.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let out = f(i, item);
                *slots[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every slot filled"))
        .collect()
}

/// One failed request in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub index: usize,
    pub request_id: String,
    pub attempts: u32,
    pub error: String,
}

pub fn batch_failures(
    reqs: &[GenerationRequest],
    results: &[Result<GenerationResult, GatewayError>],
) -> Vec<BatchFailure> {
    reqs.iter()
        .zip(results)
        .enumerate()
        .filter_map(|(index, (req, res))| {
            res.as_ref().err().map(|e| BatchFailure {
                index,
                request_id: req.request_id.clone(),
                attempts: e.attempts(),
                error: e.to_string(),
            })
        })
        .collect()
}
