//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendFailure, ChatBackend, ChatRequest, Message};
use crate::error::{Error, Result};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

pub struct HttpBackend {
    client: Client,
    endpoint: String,
    model: String,
    api_key: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    top_p: f64,
    frequency_penalty: f64,
    presence_penalty: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Result<Self> {
        let client = Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
        })
    }

    /// Reads the API key from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        let (Some(endpoint), Some(model), Some(var)) =
            (&config.endpoint_url, &config.model_name, &config.api_key_env_var)
        else {
            return Err(Error::Config(
                "live backend requires endpoint_url, model_name and api_key_env_var".into(),
            ));
        };
        let key = std::env::var(var)
            .map_err(|_| Error::Config(format!("environment variable `{var}` is not set")))?;
        Self::new(endpoint.clone(), model.clone(), key)
    }

    pub(crate) fn wire_body(&self, request: &ChatRequest) -> serde_json::Value {
        let p = &request.params;
        serde_json::to_value(WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            top_p: p.top_p,
            frequency_penalty: p.frequency_penalty,
            presence_penalty: p.presence_penalty,
        })
        .expect("wire request serializes")
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendFailure> {
        let sent = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.wire_body(request))
            .send();
        let response = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Err(BackendFailure::transient(e.to_string()))
            }
            Err(e) => return Err(BackendFailure::Fatal(Error::Backend(e.to_string()))),
        };

        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(BackendFailure::Transient {
                message: format!("HTTP {status}"),
                retry_after: retry_after(response.headers()),
            });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(BackendFailure::Fatal(Error::Backend(format!("HTTP {status}: {body}"))));
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| BackendFailure::Fatal(Error::Backend(format!("malformed completion body: {e}"))))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendFailure::Fatal(Error::Backend("completion has no content".into())))
    }
}
