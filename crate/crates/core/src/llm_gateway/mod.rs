//! Chat-completion client shared by all simulation workers.
//!
//! A [`Gateway`] wraps one [`Transport`] with retry/backoff, a concurrency
//! limit and an optional JSONL audit log. Transports are either the HTTP
//! client for OpenAI-compatible endpoints or one of the in-process
//! [`scripted`] responders.

mod http;
pub mod scripted;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::prompt_forge::PromptBundle;

pub use http::HttpTransport;
pub use scripted::{scripted_backend, ScriptedPolicy, ScriptedTransport};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend config: {0}")]
    Config(String),
    #[error("backend '{backend_id}' transport failure after {attempts} attempt(s): {message}")]
    Transport {
        backend_id: String,
        attempts: u32,
        message: String,
    },
    #[error("backend '{backend_id}' rejected the request (status {status:?}) after {attempts} attempt(s): {message}")]
    Request {
        backend_id: String,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
}

impl GatewayError {
    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::Config(_) => 0,
            GatewayError::Transport { attempts, .. } | GatewayError::Request { attempts, .. } => *attempts,
        }
    }
}

fn default_temperature() -> f64 {
    1.0
}
fn default_top_p() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    300
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

/// One named backend. A `base_url` of the form `mock:<policy>` selects a
/// scripted in-process responder instead of HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_ref: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

impl BackendConfig {
    pub fn new(backend_id: &str, base_url: &str, model_name: &str) -> Self {
        BackendConfig {
            backend_id: backend_id.to_string(),
            base_url: base_url.to_string(),
            model_name: model_name.to_string(),
            api_key_ref: None,
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_output_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            backoff_base_ms: default_backoff(),
            audit_log: None,
        }
    }

    /// A scripted backend, e.g. `BackendConfig::mock("local", "fixed_choice:2")`.
    pub fn mock(backend_id: &str, policy: &str) -> Self {
        BackendConfig {
            backoff_base_ms: 0,
            ..BackendConfig::new(backend_id, &format!("mock:{policy}"), "scripted")
        }
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock:")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Config(format!("{}: {m}", self.backend_id)));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_concurrency < 1 {
            return bad("max_concurrency must be at least 1".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout {} must be positive", self.timeout_secs));
        }
        if self.base_url.is_empty() {
            return bad("base_url is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Wire body for `POST {base_url}/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(cfg: &BackendConfig, bundle: &PromptBundle) -> Self {
        ChatRequest {
            model: cfg.model_name.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.system_message.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.user_message.clone(),
                },
            ],
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_output_tokens,
        }
    }

    pub fn system(&self) -> &str {
        self.message("system")
    }

    pub fn user(&self) -> &str {
        self.message("user")
    }

    fn message(&self, role: &str) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == role)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<TokenUsage>,
}

impl TransportReply {
    pub fn stop(text: impl Into<String>) -> Self {
        TransportReply {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Timeouts, rate limits, 5xx, connection failures.
    Retryable(String),
    /// Anything a retry cannot fix, such as a 4xx other than 429.
    Fatal { status: Option<u16>, message: String },
}

/// Sends one chat request. `sample_key` identifies the logical sample so
/// scripted transports can be replayed; network transports ignore it.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest, sample_key: u64) -> Result<TransportReply, TransportError>;

    /// True when replies depend only on (request, sample_key). Latency is
    /// then reported as zero so stored records stay reproducible.
    fn deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    pub attempt_count: u32,
}

struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    cfg: BackendConfig,
    transport: Box<dyn Transport>,
    limiter: Limiter,
    audit: Option<Mutex<BufWriter<File>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

/// The transport a config names: scripted for `mock:` URLs, HTTP otherwise.
pub fn transport_for(cfg: &BackendConfig) -> Result<Box<dyn Transport>, GatewayError> {
    match cfg.base_url.strip_prefix("mock:") {
        Some(policy) => Ok(Box::new(scripted_backend(policy)?)),
        None => Ok(Box::new(HttpTransport::new(cfg)?)),
    }
}

impl Gateway {
    pub fn from_config(cfg: BackendConfig) -> Result<Self, GatewayError> {
        let transport = transport_for(&cfg)?;
        Gateway::new(cfg, transport)
    }

    pub fn new(cfg: BackendConfig, transport: Box<dyn Transport>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let audit = match &cfg.audit_log {
            None => None,
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GatewayError::Config(format!("audit log {}: {e}", path.display())))?;
                Some(Mutex::new(BufWriter::new(file)))
            }
        };
        Ok(Gateway {
            limiter: Limiter {
                permits: Mutex::new(cfg.max_concurrency),
                freed: Condvar::new(),
            },
            cfg,
            transport,
            audit,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn backend_id(&self) -> &str {
        &self.cfg.backend_id
    }

    /// One single-turn completion with transport-level retries.
    pub fn complete(&self, bundle: &PromptBundle, sample_key: u64) -> Result<CompletionResult, GatewayError> {
        if bundle.system_message.is_empty() && bundle.user_message.is_empty() {
            return Err(GatewayError::Config("empty prompt bundle".into()));
        }
        let request = ChatRequest::new(&self.cfg, bundle);
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.send(&request, sample_key)
            };
            match result {
                Ok(reply) => {
                    let latency_ms = if self.transport.deterministic() {
                        0
                    } else {
                        started.elapsed().as_millis() as u64
                    };
                    break Ok(CompletionResult {
                        raw_text: reply.text,
                        finish_reason: reply.finish_reason,
                        latency_ms,
                        token_usage: reply.usage,
                        attempt_count: attempts,
                    });
                }
                Err(TransportError::Fatal { status, message }) => {
                    break Err(GatewayError::Request {
                        backend_id: self.cfg.backend_id.clone(),
                        attempts,
                        status,
                        message,
                    })
                }
                Err(TransportError::Retryable(message)) => {
                    if attempts > self.cfg.max_retries {
                        break Err(GatewayError::Transport {
                            backend_id: self.cfg.backend_id.clone(),
                            attempts,
                            message,
                        });
                    }
                    log::debug!("{}: retrying after '{message}' (attempt {attempts})", self.cfg.backend_id);
                    let delay = self.cfg.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(10));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay.min(60_000)));
                    }
                }
            }
        };
        self.audit(&request, sample_key, &outcome);
        outcome
    }

    fn audit(&self, request: &ChatRequest, sample_key: u64, outcome: &Result<CompletionResult, GatewayError>) {
        let Some(audit) = &self.audit else { return };
        let entry = match outcome {
            Ok(r) => json!({"backend_id": self.cfg.backend_id, "sample_key": sample_key, "request": request, "response": r}),
            Err(e) => json!({"backend_id": self.cfg.backend_id, "sample_key": sample_key, "request": request, "error": e.to_string()}),
        };
        let mut w = audit.lock().unwrap();
        if writeln!(w, "{entry}").and_then(|_| w.flush()).is_err() {
            log::warn!("{}: audit log write failed", self.cfg.backend_id);
        }
    }
}
