//! Chat-completion transport: live HTTP client and the backend switch.
//!
//! The wire protocol is a POST to `<base_url>/v1/chat/completions` with a
//! JSON body of model, messages, temperature, and max_tokens; the reply
//! text is read from `choices[0].message.content`. Transport failures and
//! HTTP 429/5xx are retried with exponential backoff; auth rejections are
//! not retried. The replay backend answers from a fixture store instead
//! and misses are a hard error.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::replay::ReplayStore;

/// Environment variable carrying the API credential. Its value is never
/// logged or echoed.
pub const API_KEY_ENV: &str = "BCSMINER_API_KEY";
/// Environment variable overriding the endpoint base URL.
pub const BASE_URL_ENV: &str = "BCSMINER_BASE_URL";

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected with HTTP {status}")]
    Auth { status: u16 },
    #[error("no replay fixture for narrative {narrative_id:?} variant {variant:?}")]
    FixtureMissing {
        narrative_id: String,
        variant: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One chat-completion call as sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// The baseline configuration: a single user message carrying the
    /// rendered prompt, temperature 0 for deterministic evaluation.
    pub fn single_user(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest {
            model: model.into(),
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content: prompt.into(),
            }],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseBackend {
    Live,
    Replay,
}

/// A model reply, however it was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    pub backend: ResponseBackend,
}

/// Exponential backoff settings for the live client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries on top of the first attempt.
    pub budget: u32,
    pub initial_backoff: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            budget: 3,
            initial_backoff: Duration::from_secs(1),
            factor: 2,
        }
    }
}

/// Blocking HTTP client for a chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct LiveClient {
    base_url: String,
    api_key: String,
    policy: RetryPolicy,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl LiveClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self::with_policy(base_url, api_key, RetryPolicy::default())
    }

    pub fn with_policy(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        policy: RetryPolicy,
    ) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("default TLS-less client construction cannot fail");
        LiveClient {
            base_url: base_url.into(),
            api_key: api_key.into(),
            policy,
            http,
        }
    }

    fn completions_url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }

    /// Issue the request, retrying transport errors and HTTP 429/5xx up to
    /// the policy budget. At most `1 + budget` attempts are made.
    pub fn complete(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError> {
        let url = self.completions_url();
        let started = Instant::now();
        let mut backoff = self.policy.initial_backoff;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = self
                .http
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(request)
                .send();
            let retryable_message = match outcome {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let body: CompletionBody =
                            response.json().map_err(|e| LlmError::Transport {
                                attempts,
                                message: format!("malformed completion body: {e}"),
                            })?;
                        let content = body
                            .choices
                            .into_iter()
                            .next()
                            .map(|c| c.message.content)
                            .ok_or_else(|| LlmError::Transport {
                                attempts,
                                message: "completion body carried no choices".to_string(),
                            })?;
                        return Ok(LlmResponse {
                            raw_text: content,
                            latency_ms: started.elapsed().as_millis() as u64,
                            backend: ResponseBackend::Live,
                        });
                    }
                    let code = status.as_u16();
                    if code == 401 || code == 403 {
                        return Err(LlmError::Auth { status: code });
                    }
                    if code == 429 || status.is_server_error() {
                        format!("HTTP {code}")
                    } else {
                        return Err(LlmError::Transport {
                            attempts,
                            message: format!("HTTP {code}"),
                        });
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempts > self.policy.budget {
                return Err(LlmError::Transport {
                    attempts,
                    message: retryable_message,
                });
            }
            std::thread::sleep(backoff);
            backoff *= self.policy.factor;
        }
    }
}

/// The completion backend the pipeline talks to.
pub enum LlmBackend {
    Live(LiveClient),
    Replay(ReplayStore),
}

impl LlmBackend {
    /// Fetch a completion. Replay answers byte-exactly from the fixture
    /// store keyed by (narrative id, variant); a missing key is an error,
    /// fixtures must be complete.
    pub fn complete(
        &self,
        narrative_id: &str,
        variant: &str,
        request: &CompletionRequest,
    ) -> Result<LlmResponse, LlmError> {
        match self {
            LlmBackend::Live(client) => client.complete(request),
            LlmBackend::Replay(store) => match store.lookup(narrative_id, variant) {
                Some(response) => Ok(LlmResponse {
                    raw_text: response.to_string(),
                    latency_ms: 0,
                    backend: ResponseBackend::Replay,
                }),
                None => Err(LlmError::FixtureMissing {
                    narrative_id: narrative_id.to_string(),
                    variant: variant.to_string(),
                }),
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LlmBackend::Live(_) => "llm-live",
            LlmBackend::Replay(_) => "llm-replay",
        }
    }
}
