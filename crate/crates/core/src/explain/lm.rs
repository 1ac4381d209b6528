//! Chat-completions transport and a retrying, concurrency-bounded client.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::prompt::{parse_fields, render_prompt, FieldMap, PromptError, PromptTemplate, RenderedPrompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Concatenated message contents, for stubs that inspect prompts.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("LM endpoint not configured: {0}")]
    NotConfigured(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[async_trait]
impl<T: ChatTransport + ?Sized> ChatTransport for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request).await
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
}

impl fmt::Debug for LmEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LmEndpoint")
            .field("base_url", &self.base_url)
            .field("model_name", &self.model_name)
            .field("api_key_env", &self.api_key_env)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("max_concurrency", &self.max_concurrency)
            .finish()
    }
}

pub const ENV_BASE: &str = "LM_API_BASE";
pub const ENV_KEY: &str = "LM_API_KEY";
pub const ENV_MODEL: &str = "LM_MODEL";

impl LmEndpoint {
    /// Reads `LM_API_BASE` and `LM_MODEL`; `None` when the base URL is unset.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_BASE).ok().filter(|s| !s.is_empty())?;
        Some(Self {
            base_url,
            model_name: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4.1".into()),
            api_key_env: ENV_KEY.into(),
            timeout_secs: 120,
            max_retries: 3,
            max_concurrency: 8,
        })
    }
}

/// HTTP chat-completions transport with bearer authentication.
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: LmEndpoint,
}

impl HttpTransport {
    pub fn new(endpoint: LmEndpoint) -> Result<Self, TransportError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| TransportError::NotConfigured(e.to_string()))?;
        Ok(Self { client, endpoint })
    }

    fn url(&self) -> String {
        let base = self.endpoint.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.client.post(self.url()).json(request);
        if let Ok(key) = std::env::var(&self.endpoint.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        let value: serde_json::Value = resp
            .json()
            .await
            .map_err(|e| TransportError::Decode(e.without_url().to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Decode("no choices[0].message.content".into()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("LM request failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: u32,
        source: TransportError,
    },
    #[error("prompt error: {0}")]
    Prompt(PromptError),
    #[error("could not parse LM completion: {0}")]
    Parse(PromptError),
}

/// Shared handle to an LM: transport, retry policy and a global
/// concurrency bound.
#[derive(Clone)]
pub struct LmClient {
    transport: Arc<dyn ChatTransport>,
    permits: Arc<Semaphore>,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub retry_backoff: Duration,
}

impl LmClient {
    pub fn new(transport: Arc<dyn ChatTransport>, model: &str, max_retries: u32, max_concurrency: usize) -> Self {
        Self {
            transport,
            permits: Arc::new(Semaphore::new(max_concurrency.max(1))),
            model: model.to_string(),
            temperature: 0.0,
            max_retries,
            retry_backoff: Duration::from_millis(250),
        }
    }

    pub fn from_endpoint(endpoint: LmEndpoint) -> Result<Self, TransportError> {
        let model = endpoint.model_name.clone();
        let retries = endpoint.max_retries;
        let conc = endpoint.max_concurrency;
        Ok(Self::new(Arc::new(HttpTransport::new(endpoint)?), &model, retries, conc))
    }

    /// A client over a test transport: no backoff, model name "stub".
    pub fn stub(transport: impl ChatTransport + 'static) -> Self {
        let mut c = Self::new(Arc::new(transport), "stub", 2, 4);
        c.retry_backoff = Duration::ZERO;
        c
    }

    pub async fn chat(&self, prompt: &RenderedPrompt) -> Result<String, LmError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage::system(prompt.system.clone()),
                ChatMessage::user(prompt.user.clone()),
            ],
            temperature: self.temperature,
        };
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.complete(&request).await {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    if !self.retry_backoff.is_zero() {
                        tokio::time::sleep(self.retry_backoff * attempts).await;
                    }
                }
                Err(source) => return Err(LmError::Transport { attempts, source }),
            }
        }
    }

    /// Renders `template`, queries the LM and parses the output fields.
    pub async fn predict(&self, template: &PromptTemplate, values: &FieldMap) -> Result<FieldMap, LmError> {
        let prompt = render_prompt(template, values).map_err(LmError::Prompt)?;
        let text = self.chat(&prompt).await?;
        parse_fields(&text, &template.output_names()).map_err(LmError::Parse)
    }
}

/// Test transports.
pub mod stub {
    use super::*;
    use crate::explain::prompt::format_completion;

    type Responder = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

    /// Answers every request through a closure.
    pub struct FnTransport {
        f: Box<Responder>,
        calls: AtomicUsize,
    }

    impl FnTransport {
        pub fn new(f: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
            Self {
                f: Box::new(f),
                calls: AtomicUsize::new(0),
            }
        }

        /// Always completes with the given output fields.
        pub fn canned(fields: Vec<(String, String)>) -> Self {
            Self::new(move |_| {
                let pairs: Vec<(&str, &str)> = fields.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                Ok(format_completion(&pairs))
            })
        }

        /// Always fails with the given HTTP status.
        pub fn failing(status: u16) -> Self {
            Self::new(move |_| {
                Err(TransportError::Status {
                    status,
                    body: "stub failure".into(),
                })
            })
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    #[async_trait]
    impl ChatTransport for FnTransport {
        async fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            (self.f)(request)
        }
    }

    /// Replays completions in order, then repeats the last one. Requests
    /// are recorded.
    pub struct ScriptedTransport {
        script: Vec<String>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl ScriptedTransport {
        pub fn new(script: Vec<String>) -> Self {
            Self {
                script,
                seen: Mutex::new(Vec::new()),
            }
        }

        pub fn requests(&self) -> Vec<ChatRequest> {
            self.seen.lock().expect("lock").clone()
        }
    }

    #[async_trait]
    impl ChatTransport for ScriptedTransport {
        async fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
            let mut seen = self.seen.lock().expect("lock");
            let i = seen.len().min(self.script.len().saturating_sub(1));
            seen.push(request.clone());
            self.script
                .get(i)
                .cloned()
                .ok_or_else(|| TransportError::Decode("empty script".into()))
        }
    }
}
