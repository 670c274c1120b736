//! Client for OpenAI-compatible `chat/completions` endpoints.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LanguageModel, LlmError};

/// Connection settings for a chat-completion service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatClientConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    /// Sent as a bearer token when present.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_seconds: f64,
    /// Additional attempts after a transient failure.
    pub retries: usize,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            timeout_seconds: 60.0,
            retries: 2,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

/// Blocking chat-completion client with retry on transport errors,
/// rate limiting and server errors.
pub struct ChatCompletionClient {
    config: ChatClientConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ChatCompletionClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatCompletionClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl ChatCompletionClient {
    pub fn new(config: ChatClientConfig) -> Result<Self, LlmError> {
        if config.endpoint.trim().is_empty() || config.model.trim().is_empty() {
            return Err(LlmError::Precondition("chat endpoint and model must be set".into()));
        }
        if !(config.timeout_seconds.is_finite() && config.timeout_seconds > 0.0) {
            return Err(LlmError::Precondition("chat timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &str) -> Result<String, Failure> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "stop": ["\nObservation:"],
        });
        let mut request = self.agent.post(&self.url()).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {}", detail.trim())));
        }
        let completion: Completion = response
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(format!("malformed completion: {e}")))?;
        Ok(completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

impl LanguageModel for ChatCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(prompt) {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyCompletion),
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(detail)) => return Err(LlmError::Transport { attempts: n, detail }),
                Err(Failure::Transient(detail)) => {
                    tracing::warn!(attempt = n, "chat completion failed: {detail}");
                    last = detail;
                    if n < attempts {
                        thread::sleep(Duration::from_millis(200 * (1 << (n - 1).min(5))));
                    }
                }
            }
        }
        Err(LlmError::Transport { attempts, detail: last })
    }
}
