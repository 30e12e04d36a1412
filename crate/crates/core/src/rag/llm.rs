use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::prompt::first_context_answer;
use crate::remote::{ApiKey, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt has {len} characters, over the limit of {limit}")]
    PromptTooLong { len: usize, limit: usize },
    #[error("LLM rejected credentials (status {status})")]
    Auth { status: u16 },
    #[error("LLM rejected request (status {status})")]
    Request { status: u16 },
    #[error("LLM server error (status {status}) after {attempts} attempt(s)")]
    Server { status: u16, attempts: u32 },
    #[error("LLM request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("network error contacting LLM after {attempts} attempt(s): {message}")]
    Network { message: String, attempts: u32 },
    #[error("malformed LLM response: {0}")]
    BadResponse(String),
    #[error("LLM returned an empty answer")]
    EmptyAnswer,
    #[error("missing API key: environment variable {0} is not set")]
    MissingKey(String),
}

impl LlmError {
    /// Network trouble, timeouts and 5xx responses are worth retrying;
    /// everything else is fatal.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Server { .. } | LlmError::Timeout { .. } | LlmError::Network { .. }
        )
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            LlmError::Server { status, .. } => LlmError::Server { status, attempts: n },
            LlmError::Timeout { .. } => LlmError::Timeout { attempts: n },
            LlmError::Network { message, .. } => LlmError::Network { message, attempts: n },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    RemoteApi,
    MockEcho,
    MockFixed,
}

impl LlmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmKind::RemoteApi => "remote",
            LlmKind::MockEcho => "mock_echo",
            LlmKind::MockFixed => "mock_fixed",
        }
    }
}

/// Text generator behind the answer pipeline.
pub trait LlmClient: Send + Sync {
    fn client_id(&self) -> &str;
    fn kind(&self) -> LlmKind;
    fn generate(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Check the prompt against the limits, call the client and reject empty
/// answers.
pub fn generate(llm: &dyn LlmClient, prompt: &str, max_prompt_chars: usize) -> Result<String, LlmError> {
    if prompt.trim().is_empty() {
        return Err(LlmError::EmptyPrompt);
    }
    let len = prompt.chars().count();
    if len > max_prompt_chars {
        return Err(LlmError::PromptTooLong {
            len,
            limit: max_prompt_chars,
        });
    }
    let answer = llm.generate(prompt)?;
    if answer.trim().is_empty() {
        return Err(LlmError::EmptyAnswer);
    }
    Ok(answer)
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct MockFixed {
    text: String,
    id: String,
}

impl MockFixed {
    pub fn new(text: impl Into<String>) -> Self {
        MockFixed {
            text: text.into(),
            id: "mock_fixed".to_string(),
        }
    }
}

impl LlmClient for MockFixed {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> LlmKind {
        LlmKind::MockFixed
    }

    fn generate(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.text.clone())
    }
}

pub const ECHO_NO_CONTEXT: &str = "I could not find any related posts.";

/// Answers with the answer text of the first context block in the prompt,
/// i.e. the top-ranked retrieved document.
#[derive(Debug, Clone, Default)]
pub struct MockEcho;

impl LlmClient for MockEcho {
    fn client_id(&self) -> &str {
        "mock_echo"
    }

    fn kind(&self) -> LlmKind {
        LlmKind::MockEcho
    }

    fn generate(&self, prompt: &str) -> Result<String, LlmError> {
        Ok(first_context_answer(prompt)
            .filter(|a| !a.trim().is_empty())
            .unwrap_or(ECHO_NO_CONTEXT)
            .to_string())
    }
}

/// Client for an OpenAI-compatible chat completions endpoint.
///
/// Sends the template preamble as the system message and the rendered prompt
/// as the user message, with temperature 0.
pub struct RemoteLlm {
    endpoint: String,
    model: String,
    system_preamble: String,
    key: ApiKey,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    id: String,
}

impl std::fmt::Debug for RemoteLlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLlm")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("key", &self.key)
            .field("retry", &self.retry)
            .finish()
    }
}

impl RemoteLlm {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        system_preamble: impl Into<String>,
        key: ApiKey,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Network {
                message: e.to_string(),
                attempts: 0,
            })?;
        let model = model.into();
        Ok(RemoteLlm {
            id: format!("remote/{model}"),
            endpoint: endpoint.into(),
            model,
            system_preamble: system_preamble.into(),
            key,
            retry,
            client,
        })
    }

    fn request_once(&self, prompt: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": self.system_preamble},
                {"role": "user", "content": prompt},
            ],
        });
        let response = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::AUTHORIZATION, self.key.bearer())
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout { attempts: 1 }
                } else {
                    LlmError::Network {
                        message: e.without_url().to_string(),
                        attempts: 1,
                    }
                }
            })?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth { status }),
            400..=499 => return Err(LlmError::Request { status }),
            _ => return Err(LlmError::Server { status, attempts: 1 }),
        }
        let value: serde_json::Value = response.json().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout { attempts: 1 }
            } else {
                LlmError::BadResponse(e.without_url().to_string())
            }
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

impl LlmClient for RemoteLlm {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> LlmKind {
        LlmKind::RemoteApi
    }

    fn generate(&self, prompt: &str) -> Result<String, LlmError> {
        self.retry
            .run(|| self.request_once(prompt), LlmError::is_retryable)
            .map_err(|(e, attempts)| e.with_attempts(attempts))
    }
}
