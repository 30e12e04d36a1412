//! The answer pipeline: embed the question, retrieve the nearest stored
//! pairs, render the prompt and ask the LLM.

mod llm;
mod prompt;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use llm::{generate, LlmClient, LlmError, LlmKind, MockEcho, MockFixed, RemoteLlm, ECHO_NO_CONTEXT};
pub use prompt::{
    first_context_answer, format_context, render_prompt, PromptTemplate, RenderedPrompt, TemplateError, ANSWER_PREFIX,
    CONTEXT_PLACEHOLDER, DEFAULT_PREAMBLE, DEFAULT_TEMPLATE, NO_CONTEXT_MARKER, QUESTION_PLACEHOLDER,
};

use crate::usefulness::{EmbedError, EmbeddingProvider};
use crate::vectorstore::{IndexError, SearchHit, VectorIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RagConfig {
    pub k: usize,
    pub max_prompt_chars: usize,
    #[serde(skip)]
    pub template: PromptTemplate,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            k: 4,
            max_prompt_chars: 8000,
            template: PromptTemplate::default(),
        }
    }
}

/// Everything one answer went through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub session_id: String,
    pub question: String,
    /// The embedding the search ran on, so the hits can be replayed.
    pub query_embedding: Vec<f32>,
    pub hits: Vec<SearchHit>,
    pub prompt: String,
    pub answer: String,
    pub latency_ms: u64,
    pub llm_id: String,
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("invalid question: {0}")]
    Validation(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("search failed: {0}")]
    Search(#[from] IndexError),
    #[error("generation failed: {0}")]
    Llm(#[from] LlmError),
    #[error("template error: {0}")]
    Template(#[from] TemplateError),
}

impl RagError {
    pub fn is_retryable(&self) -> bool {
        match self {
            RagError::Embed(e) => e.is_retryable(),
            RagError::Llm(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// Run the full pipeline once for `question`.
pub fn answer(
    session_id: &str,
    question: &str,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    llm: &dyn LlmClient,
    config: &RagConfig,
) -> Result<ChatTurn, RagError> {
    let started = Instant::now();
    if question.trim().is_empty() {
        return Err(RagError::Validation("question is empty".into()));
    }
    if config.k == 0 {
        return Err(RagError::Validation("k must be at least 1".into()));
    }
    let embedding = provider.embed(question)?;
    let hits = index.search_vector(&embedding, config.k)?;
    let contexts: Vec<_> = hits.iter().map(|h| index.doc(h.position)).collect();
    let prompt = render_prompt(&config.template, &contexts, question);
    let answer = generate(llm, &prompt.text, config.max_prompt_chars)?;
    Ok(ChatTurn {
        session_id: session_id.to_string(),
        question: question.to_string(),
        query_embedding: embedding.values,
        hits,
        prompt: prompt.text,
        answer,
        latency_ms: started.elapsed().as_millis() as u64,
        llm_id: llm.client_id().to_string(),
    })
}

/// An index, provider and LLM bundled for repeated use. Cheap to clone and
/// safe to share across threads.
#[derive(Clone)]
pub struct RagPipeline {
    index: Arc<VectorIndex>,
    provider: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmClient>,
    config: Arc<RagConfig>,
}

impl std::fmt::Debug for RagPipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RagPipeline")
            .field("docs", &self.index.len())
            .field("provider", &self.provider.provider_id())
            .field("llm", &self.llm.client_id())
            .field("config", &self.config)
            .finish()
    }
}

impl RagPipeline {
    /// Fails if the provider is not the one the index was built with.
    pub fn new(
        index: Arc<VectorIndex>,
        provider: Arc<dyn EmbeddingProvider>,
        llm: Arc<dyn LlmClient>,
        config: RagConfig,
    ) -> Result<Self, RagError> {
        index.check_provider(provider.as_ref())?;
        Ok(RagPipeline {
            index,
            provider,
            llm,
            config: Arc::new(config),
        })
    }

    pub fn answer(&self, session_id: &str, question: &str) -> Result<ChatTurn, RagError> {
        answer(
            session_id,
            question,
            &self.index,
            self.provider.as_ref(),
            self.llm.as_ref(),
            &self.config,
        )
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn llm(&self) -> &dyn LlmClient {
        self.llm.as_ref()
    }

    pub fn config(&self) -> &RagConfig {
        &self.config
    }
}
