//! Offline providers: fingerprint scripts, closures, and a recorder that
//! turns any provider's traffic into a script.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, LlmError, Provider};

/// Fixture file contents: reply text keyed by request fingerprint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "scripted_model")]
    pub model_id: String,
    pub responses: BTreeMap<String, String>,
}

fn scripted_model() -> String {
    "scripted".into()
}

impl Script {
    pub fn load(path: &Path) -> std::io::Result<Script> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

/// Replies purely from the request fingerprint.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    script: Script,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        ScriptedProvider { script }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(ScriptedProvider { script: Script::load(path)? })
    }

    /// Single-entry script, handy in tests.
    pub fn with(mut self, fingerprint: impl Into<String>, text: impl Into<String>) -> Self {
        self.script.responses.insert(fingerprint.into(), text.into());
        self
    }
}

impl Provider for ScriptedProvider {
    fn model_id(&self) -> &str {
        &self.script.model_id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let fp = req.fingerprint();
        match self.script.responses.get(&fp) {
            Some(text) => Ok(ChatResponse::stop(text.clone())),
            None => Err(LlmError::Unscripted { fingerprint: fp, purpose: req.purpose.clone() }),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<ChatResponse, LlmError> + Send + Sync;

/// Provider backed by a closure.
pub struct FnProvider {
    model_id: String,
    f: Box<Responder>,
}

impl FnProvider {
    pub fn new<F>(model_id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, LlmError> + Send + Sync + 'static,
    {
        FnProvider { model_id: model_id.into(), f: Box::new(f) }
    }
}

impl Provider for FnProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (self.f)(req)
    }
}

/// Passes calls through and keeps every successful reply as a script entry.
pub struct RecordingProvider<P> {
    inner: P,
    seen: Mutex<BTreeMap<String, String>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, seen: Mutex::new(BTreeMap::new()) }
    }

    pub fn script(&self) -> Script {
        let responses = self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Script { model_id: self.inner.model_id().to_string(), responses }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let out = self.inner.complete(req)?;
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).insert(req.fingerprint(), out.text.clone());
        Ok(out)
    }
}

impl<P: Provider> Provider for std::sync::Arc<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}
