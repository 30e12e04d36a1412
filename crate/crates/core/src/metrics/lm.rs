use std::collections::{BTreeSet, HashMap};

use super::MetricError;
use crate::text::TokenSeq;

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Bigram language model with add-one smoothing.
///
/// Every sentence is read as `<s> w_1 … w_n </s>`. The predicted vocabulary
/// `V` is the training tokens plus `</s>`; `<s>` is only ever a history.
///
/// `P(w | h) = (c(h, w) + 1) / (c(h) + |V|)` where `c(h)` counts the bigrams
/// starting with `h`. Tokens never seen in training are read as `<unk>`,
/// which has no counts: as a prediction it gets the unseen-bigram floor
/// `1 / (c(h) + |V|)`, and as a history it yields the uniform `1 / |V|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLM {
    vocab: BTreeSet<String>,
    history_counts: HashMap<String, u64>,
    bigram_counts: HashMap<String, HashMap<String, u64>>,
}

/// Count bigrams over `corpus`.
pub fn train_bigram_lm(corpus: &[TokenSeq]) -> Result<BigramLM, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut lm = BigramLM::uniform(std::iter::empty::<&str>());
    for sentence in corpus {
        let mut history = START_TOKEN;
        for token in sentence.tokens.iter().map(String::as_str).chain([END_TOKEN]) {
            lm.vocab.insert(token.to_string());
            *lm.history_counts.entry(history.to_string()).or_default() += 1;
            *lm.bigram_counts
                .entry(history.to_string())
                .or_default()
                .entry(token.to_string())
                .or_default() += 1;
            history = token;
        }
    }
    Ok(lm)
}

impl BigramLM {
    /// A model with no counts over `tokens ∪ {</s>}`: every conditional
    /// distribution is uniform.
    pub fn uniform<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab: BTreeSet<String> = tokens.into_iter().map(String::from).collect();
        vocab.insert(END_TOKEN.to_string());
        BigramLM {
            vocab,
            history_counts: HashMap::new(),
            bigram_counts: HashMap::new(),
        }
    }

    /// Predicted vocabulary, `</s>` included.
    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Total number of bigram events seen in training.
    pub fn total_bigrams(&self) -> u64 {
        self.history_counts.values().sum()
    }

    fn resolve<'a>(&self, token: &'a str) -> &'a str {
        if token == START_TOKEN || self.vocab.contains(token) {
            token
        } else {
            UNKNOWN_TOKEN
        }
    }

    /// `P(token | history)`, mapping out-of-vocabulary tokens to `<unk>`.
    pub fn prob(&self, history: &str, token: &str) -> f64 {
        let history = self.resolve(history);
        let token = self.resolve(token);
        let c_h = self.history_counts.get(history).copied().unwrap_or(0);
        let c_hw = self
            .bigram_counts
            .get(history)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0);
        (c_hw + 1) as f64 / (c_h + self.vocab.len() as u64) as f64
    }
}

/// `exp(-(1/N) Σ log P(w_i | w_{i-1}))` with `N` = tokens + 1 for `</s>`.
pub fn perplexity(seq: &TokenSeq, lm: &BigramLM) -> Result<f64, MetricError> {
    if seq.is_empty() {
        return Err(MetricError::EmptyHypothesis);
    }
    let mut history = START_TOKEN;
    let mut log_sum = 0.0;
    let mut n = 0usize;
    for token in seq.tokens.iter().map(String::as_str).chain([END_TOKEN]) {
        log_sum += lm.prob(history, token).ln();
        history = token;
        n += 1;
    }
    Ok((-log_sum / n as f64).exp())
}
