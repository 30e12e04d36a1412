use serde::{Deserialize, Serialize};

use super::{clipped_overlap, ngram_counts, ngram_total, MetricError};
use crate::text::TokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Replace a zero precision by `1e-9 / max(total, 1)`.
    AddEpsilon,
}

const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    /// Weights `α_1..α_N`; must sum to 1.
    pub weights: Vec<f64>,
    pub smoothing: Smoothing,
}

impl BleuConfig {
    /// Uniform weights up to `max_n`.
    pub fn uniform(max_n: usize) -> Self {
        BleuConfig {
            max_n,
            weights: vec![1.0 / max_n as f64; max_n],
            smoothing: Smoothing::None,
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_n == 0 {
            return Err(MetricError::InvalidConfig("max_n must be >= 1".into()));
        }
        if self.weights.len() != self.max_n {
            return Err(MetricError::InvalidConfig(format!(
                "{} weights for max_n = {}",
                self.weights.len(),
                self.max_n
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(MetricError::InvalidConfig("weights must be non-negative and sum to 1".into()));
        }
        Ok(())
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig::uniform(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    /// Brevity penalty.
    pub bp: f64,
    /// Clipped n-gram precisions `P_1..P_N` (after smoothing).
    pub precisions: Vec<f64>,
    pub score: f64,
    pub hyp_len: usize,
    /// Length of the reference closest in length to the hypothesis.
    pub ref_len: usize,
}

/// Sentence BLEU: `BP · exp(Σ α_n log P_n)`.
///
/// `P_n` clips each hypothesis n-gram count by its maximum count in any one
/// reference. The brevity penalty uses the reference closest in length to
/// the hypothesis (the shorter one on a tie): `BP = 1` if the hypothesis is
/// longer, `exp(1 - r/c)` otherwise. Without smoothing any `P_n = 0` gives
/// a score of 0.
pub fn bleu(hyp: &TokenSeq, refs: &[TokenSeq], cfg: &BleuConfig) -> Result<BleuBreakdown, MetricError> {
    cfg.validate()?;
    if hyp.is_empty() {
        return Err(MetricError::EmptyHypothesis);
    }
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }

    let mut precisions = Vec::with_capacity(cfg.max_n);
    for n in 1..=cfg.max_n {
        let hyp_counts = ngram_counts(&hyp.tokens, n);
        let mut max_ref: std::collections::HashMap<&[String], usize> = std::collections::HashMap::new();
        for r in refs {
            for (gram, count) in ngram_counts(&r.tokens, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let clipped = clipped_overlap(&hyp_counts, &max_ref);
        let total = ngram_total(hyp.len(), n);
        let p = if clipped == 0 {
            match cfg.smoothing {
                Smoothing::None => 0.0,
                Smoothing::AddEpsilon => EPSILON / total.max(1) as f64,
            }
        } else {
            clipped as f64 / total as f64
        };
        precisions.push(p);
    }

    let c = hyp.len();
    let r = refs
        .iter()
        .map(TokenSeq::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("refs non-empty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_sum: f64 = cfg.weights.iter().zip(&precisions).map(|(a, p)| a * p.ln()).sum();
        bp * log_sum.exp()
    };

    Ok(BleuBreakdown {
        bp,
        precisions,
        score,
        hyp_len: c,
        ref_len: r,
    })
}
