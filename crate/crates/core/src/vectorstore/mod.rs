//! Exact cosine top-k retrieval over embedded QA documents.
//!
//! Embeddings live in one contiguous row-major `f32` matrix. A search
//! computes every similarity in a single pass over the matrix and keeps the
//! best `k` in a bounded heap, so cost is `O(n·d + n·log k)`. Results are
//! ordered by similarity descending with ties broken by ascending `doc_id`,
//! which makes them reproducible across runs and platforms.

mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAPair;
use crate::usefulness::{EmbedError, EmbeddingProvider, EmbeddingVector};

pub use persist::{load_index, load_index_for, save_index, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("no documents to index")]
    NoDocuments,
    #[error("duplicate doc_id(s): {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("embedding document {index} failed: {source}")]
    Embed {
        index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider mismatch: index built with {expected:?}, session uses {got:?}")]
    ProviderMismatch { expected: String, got: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file checksum mismatch")]
    ChecksumMismatch,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

/// What gets embedded for each document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedText {
    /// `question + "\n" + answer`.
    #[default]
    QuestionAndAnswer,
    QuestionOnly,
}

impl EmbedText {
    pub fn render(self, question: &str, answer: &str) -> String {
        match self {
            EmbedText::QuestionAndAnswer => format!("{question}\n{answer}"),
            EmbedText::QuestionOnly => question.to_string(),
        }
    }
}

/// A document to be indexed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocInput {
    pub doc_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl From<&QAPair> for DocInput {
    fn from(p: &QAPair) -> Self {
        let mut metadata = BTreeMap::new();
        if let Some(board) = p.board {
            metadata.insert("board".to_string(), board.as_str().to_string());
        }
        if let Some(date) = &p.date {
            metadata.insert("date".to_string(), date.clone());
        }
        let label = serde_json::to_value(p.label)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        metadata.insert("label".to_string(), label);
        DocInput {
            doc_id: p.doc_id(),
            question: p.question.clone(),
            answer: p.answer.clone(),
            metadata,
        }
    }
}

/// A stored document. Its embedding is row `position` of the index matrix,
/// see [`VectorIndex::embedding`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDoc {
    pub doc_id: String,
    pub question: String,
    pub answer: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub similarity: f64,
    pub rank: usize,
    /// Row of the document in the index.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    docs: Vec<StoredDoc>,
    matrix: Vec<f32>,
    norms: Vec<f64>,
    dimension: usize,
    provider_id: String,
    version: u64,
    embed_text: EmbedText,
}

impl VectorIndex {
    /// An index with no documents.
    pub fn empty(dimension: usize, provider_id: impl Into<String>) -> Self {
        VectorIndex {
            docs: Vec::new(),
            matrix: Vec::new(),
            norms: Vec::new(),
            dimension,
            provider_id: provider_id.into(),
            version: 0,
            embed_text: EmbedText::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    /// Bumped on every mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn embed_text(&self) -> EmbedText {
        self.embed_text
    }

    pub fn docs(&self) -> &[StoredDoc] {
        &self.docs
    }

    pub fn doc(&self, position: usize) -> &StoredDoc {
        &self.docs[position]
    }

    pub fn embedding(&self, position: usize) -> &[f32] {
        &self.matrix[position * self.dimension..(position + 1) * self.dimension]
    }

    /// Embed and append documents. Fails without modifying the index if any
    /// id is duplicated or any embedding fails.
    pub fn add(&mut self, docs: &[DocInput], provider: &dyn EmbeddingProvider) -> Result<(), IndexError> {
        if provider.provider_id() != self.provider_id {
            return Err(IndexError::ProviderMismatch {
                expected: self.provider_id.clone(),
                got: provider.provider_id().to_string(),
            });
        }
        let mut seen: HashSet<&str> = self.docs.iter().map(|d| d.doc_id.as_str()).collect();
        let mut duplicates: Vec<String> = docs
            .iter()
            .filter(|d| !seen.insert(d.doc_id.as_str()))
            .map(|d| d.doc_id.clone())
            .collect();
        if !duplicates.is_empty() {
            duplicates.sort();
            duplicates.dedup();
            return Err(IndexError::DuplicateIds(duplicates));
        }

        let mut rows = Vec::with_capacity(docs.len() * self.dimension);
        for (index, doc) in docs.iter().enumerate() {
            let v = provider
                .embed(&self.embed_text.render(&doc.question, &doc.answer))
                .map_err(|source| IndexError::Embed { index, source })?;
            self.check_vector(&v.values)?;
            rows.extend_from_slice(&v.values);
        }

        for (i, doc) in docs.iter().enumerate() {
            let row = &rows[i * self.dimension..(i + 1) * self.dimension];
            self.norms.push(norm(row));
            self.docs.push(StoredDoc {
                doc_id: doc.doc_id.clone(),
                question: doc.question.clone(),
                answer: doc.answer.clone(),
                metadata: doc.metadata.clone(),
            });
        }
        self.matrix.extend_from_slice(&rows);
        self.version += 1;
        Ok(())
    }

    fn check_vector(&self, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Check the index can serve queries embedded by `provider`.
    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), IndexError> {
        if provider.provider_id() != self.provider_id {
            return Err(IndexError::ProviderMismatch {
                expected: self.provider_id.clone(),
                got: provider.provider_id().to_string(),
            });
        }
        if provider.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: provider.dimension(),
            });
        }
        Ok(())
    }

    /// Exact top-k by cosine similarity.
    ///
    /// Returns `min(k, len)` hits; an empty index returns no hits.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check_vector(query)?;
        if self.docs.is_empty() {
            return Ok(Vec::new());
        }
        let query_norm = norm(query);

        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (position, row) in self.matrix.chunks_exact(self.dimension).enumerate() {
            let candidate = Candidate {
                similarity: cosine_from_parts(query, row, query_norm, self.norms[position]),
                doc_id: &self.docs[position].doc_id,
                position,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }

        let mut best = heap.into_vec();
        best.sort();
        Ok(best
            .into_iter()
            .enumerate()
            .map(|(i, c)| SearchHit {
                doc_id: c.doc_id.to_string(),
                similarity: c.similarity,
                rank: i + 1,
                position: c.position,
            })
            .collect())
    }

    pub fn search_vector(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search(&query.values, k)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity with precomputed norms, accumulated in `f64` in index
/// order and clamped to `[-1, 1]`. Zero vectors have similarity 0.
pub fn cosine_from_parts(a: &[f32], b: &[f32], norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += f64::from(*x) * f64::from(*y);
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Heap entry ordered so that "better" compares as smaller: higher
/// similarity first, then smaller doc_id. The max-heap therefore keeps the
/// current worst of the best `k` at its top.
#[derive(Debug)]
struct Candidate<'a> {
    similarity: f64,
    doc_id: &'a str,
    position: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.doc_id.cmp(other.doc_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Embed `docs` with `provider` into a fresh index (version 1).
pub fn build_index(
    docs: &[DocInput],
    provider: &dyn EmbeddingProvider,
    embed_text: EmbedText,
) -> Result<VectorIndex, IndexError> {
    if docs.is_empty() {
        return Err(IndexError::NoDocuments);
    }
    let mut index = VectorIndex::empty(provider.dimension(), provider.provider_id());
    index.embed_text = embed_text;
    index.add(docs, provider)?;
    Ok(index)
}
