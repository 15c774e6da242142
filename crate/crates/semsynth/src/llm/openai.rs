//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{ChatRequest, ChatResponse, FinishReason, LlmError, Provider, ProviderConfig, Usage};

pub struct OpenAiProvider {
    config: ProviderConfig,
    agent: Agent,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        OpenAiProvider { config, agent }
    }

    fn api_key(&self) -> Result<String, LlmError> {
        match std::env::var(&self.config.api_key_env) {
            Ok(k) if !k.trim().is_empty() => Ok(k),
            _ => Err(LlmError::AuthFailure(format!("environment variable {} is not set", self.config.api_key_env))),
        }
    }

    fn url(&self, path: &str) -> String {
        let base = self.config.endpoint_url.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}{path}")
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let key = self.api_key()?;
        let resp = self
            .agent
            .post(&self.url(path))
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(body)
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(transport)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| LlmError::MalformedResponse { raw: text, reason: e.to_string() }),
            401 | 403 => Err(LlmError::AuthFailure(format!("HTTP {status}"))),
            408 => Err(LlmError::Timeout),
            429 => Err(LlmError::RateLimited),
            500..=599 => Err(LlmError::Transport(format!("HTTP {status}: {text}"))),
            _ => Err(LlmError::Provider(format!("HTTP {status}: {text}"))),
        }
    }

    /// Embedding vector for `text` from the `/embeddings` endpoint.
    pub fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, LlmError> {
        let v = self.post("/embeddings", &json!({"model": model, "input": text}))?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| LlmError::MalformedResponse { raw: v.to_string(), reason: "no embedding in reply".into() })
    }
}

fn transport(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    }
}

impl Provider for OpenAiProvider {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_text}));
        }
        messages.push(json!({"role": "user", "content": req.user_text}));
        let body = json!({
            "model": self.config.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let v = self.post("/chat/completions", &body)?;
        let choice = &v["choices"][0];
        let Some(text) = choice["message"]["content"].as_str() else {
            return Err(LlmError::MalformedResponse { raw: v.to_string(), reason: "no message content".into() });
        };
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) if text.is_empty() => FinishReason::Error,
            Some(_) => FinishReason::Stop,
        };
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text: text.to_string(), finish_reason, usage })
    }
}
