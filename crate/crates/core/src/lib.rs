//! Retrieval-augmented question answering over university community Q&A
//! corpora.
//!
//! The crate is organised along the data path:
//!
//! * [`corpus`] ingests crawler exports, cleans them and expands multi-answer
//!   posts into flat question/answer pairs.
//! * [`topicfilter`] partitions pairs into academic / living / other topics
//!   with a collapsed Gibbs LDA sampler.
//! * [`usefulness`] embeds questions and trains a binary useful/not-useful
//!   classifier.
//! * [`vectorstore`] is an exact cosine top-k index with a checksummed
//!   binary file format.
//! * [`rag`] renders prompts from retrieved context and calls an LLM client.
//! * [`metrics`] implements BLEU, ROUGE-N, ROUGE-L, bigram perplexity and
//!   METEOR.
//! * [`evalharness`] drives the pipeline over test cases and aggregates the
//!   scores.
//! * [`server`] exposes the chat pipeline over HTTP.

pub mod config;
pub mod corpus;
pub mod evalharness;
pub mod jsonl;
pub mod metrics;
pub mod rag;
pub mod remote;
pub mod server;
pub mod text;
pub mod topicfilter;
pub mod usefulness;
pub mod vectorstore;

pub use text::{tokenize, TokenSeq};
