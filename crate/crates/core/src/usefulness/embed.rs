use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::remote::{ApiKey, RetryPolicy};
use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider rejected credentials (status {status})")]
    Auth { status: u16 },
    #[error("embedding request rejected (status {status}): {message}")]
    Request { status: u16, message: String },
    #[error("embedding provider server error (status {status})")]
    Server { status: u16 },
    #[error("embedding request timed out")]
    Timeout,
    #[error("network error contacting embedding provider: {0}")]
    Network(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing API key: environment variable {0} is not set")]
    MissingKey(String),
}

impl EmbedError {
    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            EmbedError::Server { .. } | EmbedError::Timeout | EmbedError::Network(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteApi,
    LocalHash,
}

/// A dense embedding produced by one provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider_id: String,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Scale `values` to unit L2 norm. `None` for an all-zero vector.
    pub fn normalized(values: Vec<f32>, provider_id: impl Into<String>) -> Option<Self> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        let values = values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect();
        Some(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
            normalized: true,
        })
    }

    pub fn raw(values: Vec<f32>, provider_id: impl Into<String>) -> Self {
        EmbeddingVector {
            values,
            provider_id: provider_id.into(),
            normalized: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Deterministic text → vector function.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn kind(&self) -> ProviderKind;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub const DEFAULT_HASH_DIMENSION: usize = 256;

/// Offline embedder: feature hashing of tokens with term-frequency weights,
/// then L2 normalisation.
///
/// Token `t` lands in bucket `fnv1a64(t.as_bytes()) % dimension`, where `t`
/// comes from [`crate::tokenize`]. Only the token multiset matters, so word
/// order never changes the vector.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dimension: usize,
    id: String,
}

impl LocalHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        LocalHashEmbedder {
            dimension,
            id: format!("local_hash/fnv1a64/d{dimension}/v1"),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        LocalHashEmbedder::new(DEFAULT_HASH_DIMENSION)
    }
}

impl EmbeddingProvider for LocalHashEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::LocalHash
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        // Sum counts per bucket first so the float accumulation order does
        // not depend on token order.
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for token in tokenize(text) {
            *counts.entry(self.bucket(&token)).or_default() += 1;
        }
        let mut values = vec![0f32; self.dimension];
        for (bucket, count) in counts {
            values[bucket] = count as f32;
        }
        EmbeddingVector::normalized(values, self.id.clone()).ok_or(EmbedError::EmptyText)
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
///
/// Sends `{"model": .., "input": [text]}` and reads `data[0].embedding`.
/// Vectors are L2-normalised on receipt.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dimension: usize,
    key: ApiKey,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    id: String,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dimension", &self.dimension)
            .field("key", &self.key)
            .finish()
    }
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        key: ApiKey,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Network(e.to_string()))?;
        let model = model.into();
        Ok(RemoteEmbedder {
            id: format!("remote/{model}/d{dimension}"),
            endpoint: endpoint.into(),
            model,
            dimension,
            key,
            retry,
            client,
        })
    }

    fn request_once(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let response = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::AUTHORIZATION, self.key.bearer())
            .json(&json!({ "model": self.model, "input": [text] }))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    EmbedError::Timeout
                } else {
                    EmbedError::Network(e.without_url().to_string())
                }
            })?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(EmbedError::Auth { status }),
            400..=499 => {
                return Err(EmbedError::Request {
                    status,
                    message: response.text().unwrap_or_default().chars().take(200).collect(),
                })
            }
            _ => return Err(EmbedError::Server { status }),
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| EmbedError::BadResponse(e.without_url().to_string()))?;
        let values: Vec<f32> = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::BadResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| EmbedError::BadResponse("non-numeric embedding value".into()))?;
        if values.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: values.len(),
            });
        }
        EmbeddingVector::normalized(values, self.id.clone())
            .ok_or_else(|| EmbedError::BadResponse("zero vector".into()))
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteApi
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        self.retry
            .run(|| self.request_once(text), EmbedError::is_retryable)
            .map_err(|(e, _)| e)
    }
}
