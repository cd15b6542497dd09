//! Provider-agnostic chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::send`]. The
//! gateway owns the retry policy, the in-flight limit and the request log;
//! the actual transport is a [`ChatBackend`]: a live OpenAI-compatible HTTP
//! endpoint, a scripted responder, or a cassette (record or replay).

mod cassette;
mod http;
mod scripted;
pub mod simulated;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cassette::{record, replay, Cassette, CassetteEntry, RecordingBackend, ReplayBackend};
pub use http::HttpBackend;
pub use scripted::{ScriptStep, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 4095,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        // NaN fails too.
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    /// Pipeline stage label; logged but not part of the cassette key.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, messages: Vec<Message>, params: GenerationParams) -> Result<Self> {
        let req = ChatRequest { messages, params, tag: tag.into() };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        match self.messages.last() {
            None => Err(Error::Input("chat request has no messages".into())),
            Some(m) if m.role != Role::User => {
                Err(Error::Input("last message of a chat request must be from the user".into()))
            }
            Some(_) => self.params.validate(),
        }
    }

    /// Continues this conversation with the model's reply and a new user turn.
    pub fn follow_up(&self, tag: impl Into<String>, reply: &str, next_user: impl Into<String>) -> Self {
        let mut messages = self.messages.clone();
        messages.push(Message::assistant(reply));
        messages.push(Message::user(next_user));
        ChatRequest { messages, params: self.params, tag: tag.into() }
    }

    /// Content hash of the normalized `(messages, params)` pair.
    pub fn cassette_key(&self) -> String {
        let normalized = serde_json::json!({
            "messages": self.messages,
            "params": self.params,
        });
        // serde_json maps are key-sorted, so this rendering is canonical.
        let text = serde_json::to_string(&normalized).expect("request serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

/// How a backend call failed.
#[derive(Debug)]
pub enum BackendFailure {
    /// Worth retrying: timeouts, HTTP 429 and 5xx.
    Transient { message: String, retry_after: Option<Duration> },
    Fatal(Error),
}

impl BackendFailure {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendFailure::Transient { message: message.into(), retry_after: None }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveHttp,
    Scripted,
    RecordReplay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    #[default]
    Replay,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Cassette file for `record_replay`.
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub cassette_mode: CassetteMode,
    /// JSON array of response strings for `scripted`.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Named built-in responder for `scripted` (currently `simulated`).
    #[serde(default)]
    pub responder: Option<String>,
}

fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    1
}

impl BackendConfig {
    fn empty(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint_url: None,
            model_name: None,
            api_key_env_var: None,
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            cassette: None,
            cassette_mode: CassetteMode::Replay,
            script: None,
            responder: None,
        }
    }

    pub fn live(endpoint_url: &str, model_name: &str, api_key_env_var: &str) -> Self {
        BackendConfig {
            endpoint_url: Some(endpoint_url.into()),
            model_name: Some(model_name.into()),
            api_key_env_var: Some(api_key_env_var.into()),
            ..Self::empty(BackendKind::LiveHttp)
        }
    }

    pub fn scripted_file(script: impl Into<PathBuf>) -> Self {
        BackendConfig { script: Some(script.into()), ..Self::empty(BackendKind::Scripted) }
    }

    pub fn simulated() -> Self {
        BackendConfig { responder: Some("simulated".into()), ..Self::empty(BackendKind::Scripted) }
    }

    pub fn replay(cassette: impl Into<PathBuf>) -> Self {
        BackendConfig { cassette: Some(cassette.into()), ..Self::empty(BackendKind::RecordReplay) }
    }

    pub fn has_live_endpoint(&self) -> bool {
        self.endpoint_url.is_some() && self.model_name.is_some() && self.api_key_env_var.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        match self.kind {
            BackendKind::LiveHttp if !self.has_live_endpoint() => Err(Error::Config(
                "live_http backend requires endpoint_url, model_name and api_key_env_var".into(),
            )),
            BackendKind::Scripted if self.script.is_none() && self.responder.is_none() => {
                Err(Error::Config("scripted backend requires a script file or a responder".into()))
            }
            BackendKind::RecordReplay if self.cassette.is_none() => {
                Err(Error::Config("record_replay backend requires a cassette path".into()))
            }
            BackendKind::RecordReplay
                if self.cassette_mode == CassetteMode::Record && !self.has_live_endpoint() =>
            {
                Err(Error::Config("recording a cassette requires a live endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label for manifests and logs.
    pub fn describe(&self) -> String {
        let kind = match self.kind {
            BackendKind::LiveHttp => "live_http",
            BackendKind::Scripted => "scripted",
            BackendKind::RecordReplay => "record_replay",
        };
        match &self.model_name {
            Some(m) => format!("{kind}/{m}"),
            None => kind.to_string(),
        }
    }
}

struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    fn new(max: usize) -> Self {
        InFlightLimit { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock");
        while *active >= self.max {
            active = self.freed.wait(active).expect("in-flight lock");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlightLimit);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("in-flight lock");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    tag: &'a str,
    key: String,
    backend: &'a str,
    attempts: u32,
    latency_ms: u64,
    messages: &'a [Message],
    params: &'a GenerationParams,
    response: Option<&'a str>,
    error: Option<String>,
}

/// Retrying, rate-limited front door to a [`ChatBackend`].
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    backend_id: String,
    max_retries: u32,
    retry_backoff: Duration,
    limit: InFlightLimit,
    log: Option<Mutex<File>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        let backend_id = backend.id();
        Gateway {
            backend,
            backend_id,
            max_retries: default_retries(),
            retry_backoff: Duration::from_millis(0),
            limit: InFlightLimit::new(1),
            log: None,
        }
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.retry_backoff = backoff;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limit = InFlightLimit::new(max);
        self
    }

    /// Appends one JSON line per request/response pair to `path`.
    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    /// Builds the backend described by `config`.
    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let backend: Box<dyn ChatBackend> = match config.kind {
            BackendKind::LiveHttp => Box::new(HttpBackend::from_config(config)?),
            BackendKind::Scripted => match (&config.responder, &config.script) {
                (Some(name), _) if name == "simulated" => Box::new(simulated::SimulatedBackend::new()),
                (Some(name), _) => return Err(Error::Config(format!("unknown responder `{name}`"))),
                (None, Some(path)) => Box::new(ScriptedBackend::from_file(path)?),
                (None, None) => unreachable!("validated above"),
            },
            BackendKind::RecordReplay => {
                let path = config.cassette.as_ref().expect("validated above");
                match config.cassette_mode {
                    CassetteMode::Replay => Box::new(ReplayBackend::open(path)?),
                    CassetteMode::Record => {
                        let live = HttpBackend::from_config(config)?;
                        Box::new(RecordingBackend::new(Box::new(live), path)?)
                    }
                }
            }
        };
        Ok(Gateway::new(backend)
            .with_retries(config.max_retries, Duration::from_millis(config.retry_backoff_ms))
            .with_max_in_flight(config.max_in_flight))
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    /// Sends `request`, retrying transient failures with exponential
    /// backoff (or the server's `Retry-After`).
    pub fn send(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let _slot = self.limit.acquire();
        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            match self.backend.complete(request) {
                Ok(content) => break Ok(content),
                Err(BackendFailure::Fatal(e)) => break Err(e),
                Err(BackendFailure::Transient { message, retry_after }) => {
                    if attempts > self.max_retries {
                        break Err(Error::Backend(format!(
                            "giving up after {attempts} attempts: {message}"
                        )));
                    }
                    let wait = retry_after.unwrap_or_else(|| {
                        self.retry_backoff.saturating_mul(1u32 << (attempts - 1).min(16))
                    });
                    log::debug!("transient failure on `{}` ({message}); retrying in {wait:?}", request.tag);
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        self.append_log(request, attempts, latency_ms, &outcome)?;
        outcome.map(|content| ChatResponse {
            content,
            backend_id: self.backend_id.clone(),
            latency_ms,
        })
    }

    fn append_log(
        &self,
        request: &ChatRequest,
        attempts: u32,
        latency_ms: u64,
        outcome: &Result<String>,
    ) -> Result<()> {
        let Some(log) = &self.log else {
            return Ok(());
        };
        let line = LogLine {
            tag: &request.tag,
            key: request.cassette_key(),
            backend: &self.backend_id,
            attempts,
            latency_ms,
            messages: &request.messages,
            params: &request.params,
            response: outcome.as_ref().ok().map(String::as_str),
            error: outcome.as_ref().err().map(ToString::to_string),
        };
        let mut text = serde_json::to_string(&line).expect("log line serializes");
        text.push('\n');
        let mut file = log.lock().expect("log lock");
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io("llm-log.jsonl", e))
    }
}
