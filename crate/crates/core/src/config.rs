//! Runtime configuration shared by the CLI and the server.
//!
//! Files are TOML unless the extension is `.json`. API keys are never read
//! from files: remote sections name an environment variable instead.
//!
//! ```toml
//! k = 4
//! max_prompt_chars = 8000
//! template_path = "prompt.txt"
//!
//! [provider]
//! kind = "local_hash"
//! dimension = 256
//!
//! [llm]
//! kind = "mock_fixed"
//! text = "OK"
//!
//! [server]
//! max_in_flight = 8
//! queue_depth = 64
//! cors_origins = ["http://localhost:5173"]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rag::{LlmClient, MockEcho, MockFixed, PromptTemplate, RagConfig, RemoteLlm, TemplateError, DEFAULT_PREAMBLE};
use crate::remote::{ApiKey, RetryPolicy};
use crate::usefulness::{EmbeddingProvider, LocalHashEmbedder, RemoteEmbedder, DEFAULT_HASH_DIMENSION};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("template {path}: {source}")]
    Template { path: PathBuf, source: TemplateError },
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_key_env() -> String {
    "CAMPUSQA_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    LocalHash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Remote {
        endpoint: String,
        model: String,
        dimension: usize,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_dimension() -> usize {
    DEFAULT_HASH_DIMENSION
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::LocalHash {
            dimension: DEFAULT_HASH_DIMENSION,
        }
    }
}

impl ProviderConfig {
    /// Parse the short CLI form: `local_hash`, `local_hash:<dim>`.
    pub fn parse_short(s: &str) -> Result<Self, ConfigError> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(n, a)| (n, Some(a)));
        match name {
            "local_hash" | "local" => {
                let dimension = match arg {
                    None => DEFAULT_HASH_DIMENSION,
                    Some(a) => a
                        .parse()
                        .ok()
                        .filter(|d| *d > 0)
                        .ok_or_else(|| ConfigError::Invalid(format!("bad dimension {a:?}")))?,
                };
                Ok(ProviderConfig::LocalHash { dimension })
            }
            "remote" => Err(ConfigError::Invalid(
                "the remote provider needs endpoint and model; use a config file".into(),
            )),
            other => Err(ConfigError::Invalid(format!(
                "unknown provider {other:?}; expected local_hash[:dim] or a config file"
            ))),
        }
    }

    /// Recover the configuration of a local provider from its id, so an index
    /// built with it can be served without a config file.
    pub fn from_provider_id(id: &str) -> Option<Self> {
        let dim = id.strip_prefix("local_hash/fnv1a64/d")?.strip_suffix("/v1")?;
        Some(ProviderConfig::LocalHash {
            dimension: dim.parse().ok()?,
        })
    }

    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        match self {
            ProviderConfig::LocalHash { dimension } => {
                if *dimension == 0 {
                    return Err(ConfigError::Invalid("dimension must be positive".into()));
                }
                Ok(Arc::new(LocalHashEmbedder::new(*dimension)))
            }
            ProviderConfig::Remote {
                endpoint,
                model,
                dimension,
                api_key_env,
                timeout_ms,
                retry,
            } => {
                let key = ApiKey::from_env(api_key_env).ok_or_else(|| ConfigError::MissingKey(api_key_env.clone()))?;
                let embedder = RemoteEmbedder::new(
                    endpoint.clone(),
                    model.clone(),
                    *dimension,
                    key,
                    Duration::from_millis(*timeout_ms),
                    *retry,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(embedder))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    MockEcho,
    MockFixed {
        text: String,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::MockEcho
    }
}

impl LlmConfig {
    pub fn build(&self, system_preamble: &str) -> Result<Arc<dyn LlmClient>, ConfigError> {
        match self {
            LlmConfig::MockEcho => Ok(Arc::new(MockEcho)),
            LlmConfig::MockFixed { text } => Ok(Arc::new(MockFixed::new(text.clone()))),
            LlmConfig::Remote {
                endpoint,
                model,
                api_key_env,
                timeout_ms,
                retry,
            } => {
                let key = ApiKey::from_env(api_key_env).ok_or_else(|| ConfigError::MissingKey(api_key_env.clone()))?;
                let llm = RemoteLlm::new(
                    endpoint.clone(),
                    model.clone(),
                    system_preamble,
                    key,
                    Duration::from_millis(*timeout_ms),
                    *retry,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(llm))
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LlmConfig::MockEcho => "mock_echo",
            LlmConfig::MockFixed { .. } => "mock_fixed",
            LlmConfig::Remote { .. } => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// Concurrent pipeline runs.
    pub max_in_flight: usize,
    /// Requests allowed to wait for a slot before 429s are returned.
    pub queue_depth: usize,
    pub max_message_chars: usize,
    pub snippet_chars: usize,
    pub cors_origins: Vec<String>,
    /// Log message bodies. Off by default.
    pub log_bodies: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_in_flight: 8,
            queue_depth: 64,
            max_message_chars: 4000,
            snippet_chars: 300,
            cors_origins: Vec::new(),
            log_bodies: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub k: usize,
    pub max_prompt_chars: usize,
    /// Plain-text template file, relative to the config file.
    pub template_path: Option<PathBuf>,
    pub system_preamble: Option<String>,
    /// `None` means: derive from the index.
    pub provider: Option<ProviderConfig>,
    pub llm: LlmConfig,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        let rag = RagConfig::default();
        AppConfig {
            k: rag.k,
            max_prompt_chars: rag.max_prompt_chars,
            template_path: None,
            system_preamble: None,
            provider: None,
            llm: LlmConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut cfg: AppConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let (Some(tpl), Some(dir)) = (&cfg.template_path, path.parent()) {
            if tpl.is_relative() {
                cfg.template_path = Some(dir.join(tpl));
            }
        }
        Ok(cfg)
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        let preamble = self.system_preamble.as_deref().unwrap_or(DEFAULT_PREAMBLE);
        match &self.template_path {
            None => Ok(PromptTemplate::new(crate::rag::DEFAULT_TEMPLATE, preamble).expect("default template is valid")),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                PromptTemplate::new(text, preamble).map_err(|source| ConfigError::Template {
                    path: path.clone(),
                    source,
                })
            }
        }
    }

    pub fn rag_config(&self) -> Result<RagConfig, ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        Ok(RagConfig {
            k: self.k,
            max_prompt_chars: self.max_prompt_chars,
            template: self.template()?,
        })
    }

    /// The configured provider, or the one `provider_id` names.
    pub fn provider_for(&self, provider_id: &str) -> Result<ProviderConfig, ConfigError> {
        match &self.provider {
            Some(p) => Ok(p.clone()),
            None => ProviderConfig::from_provider_id(provider_id).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "index was built with provider {provider_id:?}; a [provider] section is needed to query it"
                ))
            }),
        }
    }
}
