//! Chat-completion access for every model-backed step.
//!
//! [`Gateway`] is the only path to a provider. It enforces the concurrency
//! cap, retries transport failures and rate limits with exponential backoff,
//! and turns replies into structured records.

mod mock;
mod openai;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semsynth_core::prompt::{self, Prompt};
use semsynth_core::text::record_candidates;

pub use mock::{FnProvider, RecordingProvider, Script, ScriptedProvider};
pub use openai::OpenAiProvider;

/// Sampling temperature for generation calls.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for extraction, diagnosis and judging calls.
pub const JUDGE_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    FreeText,
    StructuredRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_schema_tag: ResponseKind,
    /// Caller label for logs and test responders. Not part of the fingerprint.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub purpose: String,
}

impl ChatRequest {
    pub fn new(p: Prompt, temperature: f64, kind: ResponseKind) -> Self {
        ChatRequest {
            system_text: p.system,
            user_text: p.user,
            temperature,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            response_schema_tag: kind,
            purpose: String::new(),
        }
    }

    pub fn with_purpose(mut self, purpose: impl Into<String>) -> Self {
        self.purpose = purpose.into();
        self
    }

    /// Hex SHA-256 over system text, user text and temperature.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0]);
        h.update(self.user_text.as_bytes());
        h.update([0]);
        h.update(format!("{:.4}", self.temperature).as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), finish_reason: FinishReason::Stop, usage: Usage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited")]
    RateLimited,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider rejected the request: {0}")]
    Provider(String),
    #[error("malformed response ({reason}): {raw}")]
    MalformedResponse { raw: String, reason: String },
    #[error("no scripted response for fingerprint {fingerprint} ({purpose})")]
    Unscripted { fingerprint: String, purpose: String },
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, LlmError::Timeout | LlmError::RateLimited | LlmError::Transport(_))
    }
}

pub trait Provider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_cap")]
    pub concurrency_cap: usize,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_cap() -> usize {
    4
}

/// Counting semaphore.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shared front door to one provider.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

struct Inner {
    provider: Box<dyn Provider>,
    max_retries: u32,
    backoff: Duration,
    slots: Slots,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl Gateway {
    pub fn new(provider: impl Provider + 'static, concurrency_cap: usize, max_retries: u32) -> Self {
        Gateway {
            inner: Arc::new(Inner {
                provider: Box::new(provider),
                max_retries,
                backoff: Duration::from_millis(500),
                slots: Slots { free: Mutex::new(concurrency_cap.max(1)), cv: Condvar::new() },
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                calls: AtomicUsize::new(0),
            }),
        }
    }

    /// Overrides the first retry delay (doubled on each further retry).
    pub fn with_backoff(self, backoff: Duration) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("with_backoff on a shared gateway"));
        Gateway { inner: Arc::new(Inner { backoff, ..inner }) }
    }

    pub fn model_id(&self) -> &str {
        self.inner.provider.model_id()
    }

    /// Highest number of simultaneous provider calls seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }

    /// Provider attempts made so far, retries included.
    pub fn calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let _slot = self.inner.slots.acquire();
        let now = self.inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        self.inner.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.provider.complete(req);
        self.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    /// One completion, with at most `max_retries` retries on timeouts,
    /// transport errors and rate limits.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if req.user_text.trim().is_empty() {
            return Err(LlmError::Provider("empty user text".into()));
        }
        let mut delay = self.inner.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(req) {
                Ok(r) if r.finish_reason == FinishReason::Error => {
                    return Err(LlmError::MalformedResponse {
                        raw: r.text,
                        reason: "provider reported an error".into(),
                    })
                }
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() && attempt < self.inner.max_retries => {
                    log::warn!("{} failed ({e}); retrying in {delay:?}", describe(req));
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Completion parsed into `T`. On a parse failure the request is sent
    /// once more with the error appended; a second failure is returned as
    /// `MalformedResponse` carrying the raw text.
    pub fn complete_structured<T: DeserializeOwned>(&self, req: &ChatRequest) -> Result<T, LlmError> {
        let first = self.complete(req)?;
        let err = match parse_record(&first.text) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        log::info!("{}: unparseable reply ({err}); reprompting", describe(req));
        let mut retry = req.clone();
        retry.user_text = prompt::parse_retry(&req.user_text, &err);
        let second = self.complete(&retry)?;
        parse_record(&second.text).map_err(|reason| LlmError::MalformedResponse { raw: second.text, reason })
    }
}

fn describe(req: &ChatRequest) -> String {
    if req.purpose.is_empty() {
        format!("request {}", &req.fingerprint()[..12])
    } else {
        req.purpose.clone()
    }
}

/// Parses a structured record out of free text: the whole reply, a fenced
/// block, or the outermost braces, first match wins.
pub fn parse_record<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let mut last = String::from("reply holds no JSON object");
    for candidate in record_candidates(text) {
        match serde_json::from_str::<serde_json::Value>(candidate) {
            Ok(v) => match serde_json::from_value::<T>(v) {
                Ok(t) => return Ok(t),
                Err(e) => last = e.to_string(),
            },
            Err(e) => {
                if last.starts_with("reply holds") {
                    last = e.to_string();
                }
            }
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_purpose_and_tracks_temperature() {
        let p = Prompt { system: "s".into(), user: "u".into() };
        let a = ChatRequest::new(p.clone(), 0.0, ResponseKind::FreeText);
        let b = a.clone().with_purpose("x");
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ChatRequest::new(p, 0.7, ResponseKind::FreeText);
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn records_come_out_of_fences() {
        #[derive(Deserialize)]
        struct L {
            label: u8,
        }
        let l: L = parse_record("Here you go:\n```json\n{\"label\": 1}\n```").unwrap();
        assert_eq!(l.label, 1);
        assert!(parse_record::<L>("no json").is_err());
    }
}
