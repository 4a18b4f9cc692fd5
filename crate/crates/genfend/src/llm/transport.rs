//! Wire-level transports behind the gateway.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the chat-completion endpoint URL.
pub const ENV_URL: &str = "GENFEND_LLM_URL";
/// Environment variable holding the bearer API key.
pub const ENV_KEY: &str = "GENFEND_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// JSON chat-completion request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// One synchronous request/response exchange with a provider.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// HTTPS transport speaking the common chat-completion protocol.
pub struct HttpTransport {
    url: String,
    key: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// Build from `GENFEND_LLM_URL` / `GENFEND_LLM_KEY`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| Error::Config(format!("{ENV_URL} is not set")))?;
        let key = std::env::var(ENV_KEY)
            .map_err(|_| Error::Config(format!("{ENV_KEY} is not set")))?;
        Ok(HttpTransport {
            url,
            key,
            client: reqwest::blocking::Client::new(),
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(request)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(Error::Transport(format!("provider returned {status}: {body}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Error::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("response had no choices".into()))
    }
}

/// A transport that fails every call; replay-mode gateways use it so any
/// attempted network operation is loudly visible.
pub struct NoNetwork;

impl Transport for NoNetwork {
    fn send(&self, _request: &ChatRequest) -> Result<String> {
        Err(Error::Transport("network disabled in replay mode".into()))
    }
}

/// Scripted in-memory transport for tests and fixture construction.
///
/// Responses come from a caller-supplied function of the request; the
/// transport counts calls and can fail the first N of them to exercise
/// retry paths.
pub struct StubTransport {
    respond: Box<dyn Fn(&ChatRequest) -> Result<String> + Send + Sync>,
    calls: AtomicUsize,
    fail_first: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl StubTransport {
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static) -> Self {
        StubTransport {
            respond: Box::new(respond),
            calls: AtomicUsize::new(0),
            fail_first: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Respond with a fixed string.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    /// Deterministic per-request text derived from the user message.
    pub fn echoing(prefix: impl Into<String>) -> Self {
        let prefix = prefix.into();
        Self::new(move |req| {
            let user = req
                .messages
                .iter()
                .rev()
                .find(|m| m.role == "user")
                .map(|m| m.content.as_str())
                .unwrap_or("");
            Ok(format!("{prefix}{}", user.chars().take(40).collect::<String>()))
        })
    }

    pub fn fail_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl Transport for StubTransport {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(request.clone());
        if call < self.fail_first.load(Ordering::SeqCst) {
            return Err(Error::Transport(format!("scripted failure #{call}")));
        }
        (self.respond)(request)
    }
}
