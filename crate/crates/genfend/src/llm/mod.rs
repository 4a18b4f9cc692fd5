//! Provider-agnostic chat-completion gateway with content-addressed
//! caching and replay.
//!
//! Every request is keyed by a digest of its canonical serialization.
//! `live_with_cache` stores one JSON transcript per digest; `replay`
//! serves stored transcripts and never touches the network, which is what
//! makes the experiment suite deterministic and offline.

mod gateway;
mod transcript;
mod transport;

pub use gateway::{Gateway, GatewayMode, GenerationOutcome, RetryPolicy};
pub use transcript::{cache_key, Transcript, TranscriptStore};
pub use transport::{ChatMessage, ChatRequest, HttpTransport, NoNetwork, StubTransport, Transport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling settings for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

impl GenerationConfig {
    /// Comment generation defaults: temperature 1.0 (0.95 for providers
    /// that prefer it), 100-token replies.
    pub fn generation(model: impl Into<String>) -> Self {
        GenerationConfig {
            model: model.into(),
            temperature: 1.0,
            max_tokens: 100,
            seed: None,
        }
    }

    /// Veracity judgment defaults: near-greedy sampling for definitive
    /// answers.
    pub fn judgment(model: impl Into<String>) -> Self {
        GenerationConfig {
            model: model.into(),
            temperature: 0.1,
            max_tokens: 100,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}
