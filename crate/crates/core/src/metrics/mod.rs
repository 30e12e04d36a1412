//! Answer-quality metrics: BLEU, ROUGE-N, ROUGE-L, bigram perplexity and
//! METEOR.
//!
//! Every metric works on [`TokenSeq`]s produced by [`tokenize`], so scores
//! computed here and in the evaluation harness agree token for token.

mod bleu;
mod lm;
mod meteor;
mod rouge;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::text::{tokenize, TokenSeq};
pub use bleu::{bleu, BleuBreakdown, BleuConfig, Smoothing};
pub use lm::{perplexity, train_bigram_lm, BigramLM, END_TOKEN, START_TOKEN, UNKNOWN_TOKEN};
pub use meteor::{meteor, meteor_alignment, Alignment, MeteorConfig, MeteorScore, MeteorStage};
pub use rouge::{lcs_length, rouge_l, rouge_n, PrfScore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("hypothesis is empty")]
    EmptyHypothesis,
    #[error("reference is empty")]
    EmptyReference,
    #[error("no references given")]
    NoReferences,
    #[error("n must be at least 1")]
    ZeroN,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("language model training corpus is empty")]
    EmptyCorpus,
    #[error("METEOR stage {0:?} has no matcher for this language")]
    UnsupportedStage(MeteorStage),
}

/// Multiset of the `n`-grams of `tokens`, keyed by token slices.
///
/// The total count is `max(0, len - n + 1)`.
pub fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Number of `n`-grams in `tokens`.
pub(crate) fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Σ over grams of min(count in a, count in b).
pub(crate) fn clipped_overlap(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> usize {
    a.iter().map(|(g, &c)| c.min(*b.get(g).unwrap_or(&0))).sum()
}

/// Metric families selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bleu,
    Rouge1,
    Rouge2,
    RougeL,
    Ppl,
    Meteor,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Bleu,
        MetricKind::Rouge1,
        MetricKind::Rouge2,
        MetricKind::RougeL,
        MetricKind::Ppl,
        MetricKind::Meteor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::Rouge1 => "rouge1",
            MetricKind::Rouge2 => "rouge2",
            MetricKind::RougeL => "rougeL",
            MetricKind::Ppl => "ppl",
            MetricKind::Meteor => "meteor",
        }
    }

    pub fn parse(name: &str) -> Option<MetricKind> {
        MetricKind::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(name.trim()))
    }
}
