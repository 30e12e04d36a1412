//! Usefulness filtering: embed a question, classify it as useful or not, and
//! measure agreement with human labels.
//!
//! Embedding goes through the [`EmbeddingProvider`] trait, with an offline
//! feature-hashing implementation and a client for remote embedding APIs.
//! Two classifiers sit behind [`ClassifierModel`]: logistic regression
//! trained by seeded SGD, and cosine k-nearest-neighbours.

mod classifier;
mod embed;

pub use classifier::{
    embed_examples, evaluate_classifier, evaluate_embedded, logistic_loss_gradient, sigmoid,
    stratified_split, train_classifier, ClassifierError, ClassifierKind, ClassifierModel,
    ClassifierReport, LabeledExample, Prediction, StoredExample, TrainConfig, TrainingMeta,
    Usefulness, MODEL_FORMAT, MODEL_VERSION,
};
pub use embed::{
    fnv1a64, EmbedError, EmbeddingProvider, EmbeddingVector, LocalHashEmbedder, ProviderKind,
    RemoteEmbedder, DEFAULT_HASH_DIMENSION,
};

/// `embed(provider, text)` as a free function.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    provider.embed(text)
}
