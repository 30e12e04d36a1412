use serde::{Deserialize, Serialize};

use super::{clipped_overlap, ngram_counts, ngram_total, MetricError};
use crate::text::TokenSeq;

/// Recall, precision and F score. For ROUGE-N the F score is the harmonic
/// mean; for ROUGE-L it is the β-weighted F.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfScore {
    pub recall: f64,
    pub precision: f64,
    pub f: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f_beta(recall: f64, precision: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = recall + b2 * precision;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * recall * precision / den
    }
}

/// ROUGE-N. Recall divides the clipped match count by the number of
/// reference n-grams, precision by the number of hypothesis n-grams.
pub fn rouge_n(hyp: &TokenSeq, reference: &TokenSeq, n: usize) -> Result<PrfScore, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroN);
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let matches = clipped_overlap(&ngram_counts(&hyp.tokens, n), &ngram_counts(&reference.tokens, n));
    let recall = ratio(matches, ngram_total(reference.len(), n));
    let precision = ratio(matches, ngram_total(hyp.len(), n));
    Ok(PrfScore {
        recall,
        precision,
        f: f_beta(recall, precision, 1.0),
    })
}

/// Length of the longest common subsequence, by dynamic programming over
/// two rolling rows.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L: `R = LCS/|ref|`, `P = LCS/|hyp|`,
/// `F = (1+β²)RP / (R+β²P)`.
pub fn rouge_l(hyp: &TokenSeq, reference: &TokenSeq, beta: f64) -> Result<PrfScore, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(MetricError::InvalidConfig("beta must be positive".into()));
    }
    let lcs = lcs_length(&hyp.tokens, &reference.tokens);
    let recall = ratio(lcs, reference.len());
    let precision = ratio(lcs, hyp.len());
    Ok(PrfScore {
        recall,
        precision,
        f: f_beta(recall, precision, beta),
    })
}
