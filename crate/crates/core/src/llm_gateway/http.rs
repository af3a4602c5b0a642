use std::time::Duration;

use serde_json::Value;

use super::{BackendConfig, ChatRequest, FinishReason, GatewayError, TokenUsage, Transport, TransportError, TransportReply};

/// OpenAI-compatible `chat/completions` over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let api_key = match &cfg.api_key_ref {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("{}: environment variable {var} is not set", cfg.backend_id))
            })?),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

fn classify_status(status: u16, body: String) -> TransportError {
    if status == 429 || status == 408 || status >= 500 {
        TransportError::Retryable(format!("HTTP {status}: {body}"))
    } else {
        TransportError::Fatal {
            status: Some(status),
            message: body,
        }
    }
}

fn reply_from_body(body: &Value) -> Result<TransportReply, TransportError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| TransportError::Fatal {
            status: None,
            message: format!("response without choices: {body}"),
        })?;
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    let usage = body.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    Ok(TransportReply {
        text,
        finish_reason,
        usage,
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest, _sample_key: u64) -> Result<TransportReply, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(request) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(TransportError::Retryable(format!("timeout ({t})"))),
            Err(ureq::Error::Io(e)) => return Err(TransportError::Retryable(format!("io: {e}"))),
            Err(ureq::Error::ConnectionFailed) => return Err(TransportError::Retryable("connection failed".into())),
            Err(ureq::Error::HostNotFound) => return Err(TransportError::Retryable("host not found".into())),
            Err(e) => {
                return Err(TransportError::Fatal {
                    status: None,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Retryable(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, text));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| TransportError::Fatal {
            status: Some(status),
            message: format!("non-JSON body: {e}"),
        })?;
        reply_from_body(&body)
    }
}
