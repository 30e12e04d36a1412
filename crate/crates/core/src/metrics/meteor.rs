use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::text::TokenSeq;

/// Matching stages, applied in order. Only exact matching ships; stem and
/// synonym stages need language resources that are not bundled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeteorStage {
    Exact,
    Stem,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteorConfig {
    /// Fragmentation penalty weight, in `[0, 1]`.
    pub gamma: f64,
    /// Fragmentation penalty exponent.
    pub beta_exp: f64,
    pub stages: Vec<MeteorStage>,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        MeteorConfig {
            gamma: 0.5,
            beta_exp: 3.0,
            stages: vec![MeteorStage::Exact],
        }
    }
}

impl MeteorConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(MetricError::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        if !(self.beta_exp > 0.0 && self.beta_exp.is_finite()) {
            return Err(MetricError::InvalidConfig("beta_exp must be positive".into()));
        }
        match self.stages.first() {
            Some(MeteorStage::Exact) => {}
            _ => return Err(MetricError::InvalidConfig("stages must start with exact".into())),
        }
        if let Some(stage) = self.stages.iter().find(|s| **s != MeteorStage::Exact) {
            return Err(MetricError::UnsupportedStage(*stage));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeteorScore {
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
}

/// A unigram alignment: `(hyp position, ref position)` pairs sorted by
/// hypothesis position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
}

/// Upper limit on search nodes before the best alignment found so far is
/// returned. Sentences with few repeated words never get near it.
const SEARCH_BUDGET: usize = 200_000;

/// Exact-match alignment with the most matches and, among those, the fewest
/// chunks. A chunk is a maximal run of pairs adjacent in both sequences.
///
/// The match count is forced (`Σ_w min(count_hyp(w), count_ref(w))`); the
/// chunk count is minimised by branch and bound seeded with a greedy
/// alignment that prefers extending the current chunk. If the search budget
/// runs out the best alignment found so far is used.
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> Alignment {
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        ref_positions.entry(w.as_str()).or_default().push(j);
    }
    // Word type id per hyp position; None when the word is not in the reference.
    let mut type_ids: HashMap<&str, usize> = HashMap::new();
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let hyp_types: Vec<Option<usize>> = hyp
        .iter()
        .map(|w| {
            let positions = ref_positions.get(w.as_str())?;
            Some(*type_ids.entry(w.as_str()).or_insert_with(|| {
                candidates.push(positions.clone());
                candidates.len() - 1
            }))
        })
        .collect();

    let mut hyp_left = vec![0usize; candidates.len()];
    for t in hyp_types.iter().flatten() {
        hyp_left[*t] += 1;
    }
    let need: Vec<usize> = hyp_left
        .iter()
        .zip(&candidates)
        .map(|(h, r)| (*h).min(r.len()))
        .collect();
    let total: usize = need.iter().sum();

    let mut search = Search {
        hyp_types: &hyp_types,
        candidates: &candidates,
        used: vec![false; reference.len()],
        need: need.clone(),
        hyp_left: hyp_left.clone(),
        current: Vec::with_capacity(total),
        best: Vec::new(),
        best_adjacent: 0,
        nodes: 0,
    };
    search.greedy();
    search.need = need;
    search.hyp_left = hyp_left;
    search.used.iter_mut().for_each(|u| *u = false);
    search.dfs(0, total, 0);

    let pairs = search.best;
    let chunks = count_chunks(&pairs);
    Alignment { pairs, chunks }
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

struct Search<'a> {
    hyp_types: &'a [Option<usize>],
    candidates: &'a [Vec<usize>],
    used: Vec<bool>,
    need: Vec<usize>,
    hyp_left: Vec<usize>,
    current: Vec<(usize, usize)>,
    best: Vec<(usize, usize)>,
    best_adjacent: usize,
    nodes: usize,
}

impl Search<'_> {
    fn extends(&self, i: usize, j: usize) -> bool {
        matches!(self.current.last(), Some(&(pi, pj)) if pi + 1 == i && pj + 1 == j)
    }

    fn greedy(&mut self) {
        let mut adjacent = 0;
        for i in 0..self.hyp_types.len() {
            let Some(t) = self.hyp_types[i] else { continue };
            self.hyp_left[t] -= 1;
            if self.need[t] == 0 {
                continue;
            }
            let free: Vec<usize> = self.candidates[t].iter().copied().filter(|&j| !self.used[j]).collect();
            let j = free
                .iter()
                .copied()
                .find(|&j| self.extends(i, j))
                .unwrap_or(free[0]);
            if self.extends(i, j) {
                adjacent += 1;
            }
            self.used[j] = true;
            self.need[t] -= 1;
            self.current.push((i, j));
        }
        self.best = std::mem::take(&mut self.current);
        self.best_adjacent = adjacent;
    }

    fn dfs(&mut self, i: usize, remaining: usize, adjacent: usize) {
        if remaining == 0 {
            if adjacent > self.best_adjacent || self.best.is_empty() {
                self.best_adjacent = adjacent;
                self.best = self.current.clone();
            }
            return;
        }
        // Each further match can join at most one adjacency.
        if adjacent + remaining <= self.best_adjacent || self.nodes >= SEARCH_BUDGET {
            return;
        }
        if i >= self.hyp_types.len() {
            return;
        }
        self.nodes += 1;

        let Some(t) = self.hyp_types[i] else {
            self.dfs(i + 1, remaining, adjacent);
            return;
        };
        self.hyp_left[t] -= 1;

        if self.need[t] > 0 {
            // Try extending the current chunk first, then every other free slot.
            let mut order: Vec<usize> = self.candidates[t].iter().copied().filter(|&j| !self.used[j]).collect();
            if let Some(pos) = order.iter().position(|&j| self.extends(i, j)) {
                order.swap(0, pos);
            }
            for j in order {
                let gain = usize::from(self.extends(i, j));
                self.used[j] = true;
                self.need[t] -= 1;
                self.current.push((i, j));
                self.dfs(i + 1, remaining - 1, adjacent + gain);
                self.current.pop();
                self.need[t] += 1;
                self.used[j] = false;
            }
        }
        // Skipping is allowed only if the later occurrences can still meet the need.
        if self.hyp_left[t] >= self.need[t] {
            self.dfs(i + 1, remaining, adjacent);
        }

        self.hyp_left[t] += 1;
    }
}

/// METEOR with exact unigram matching.
///
/// `P = m/|hyp|`, `R = m/|ref|`, `F_mean = 10PR/(R + 9P)`,
/// `penalty = γ (chunks/m)^β`, `score = F_mean (1 − penalty)`; all zero
/// when nothing matches.
pub fn meteor(hyp: &TokenSeq, reference: &TokenSeq, cfg: &MeteorConfig) -> Result<MeteorScore, MetricError> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let alignment = meteor_alignment(&hyp.tokens, &reference.tokens);
    let m = alignment.pairs.len();
    if m == 0 {
        return Ok(MeteorScore::default());
    }
    let precision = m as f64 / hyp.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = cfg.gamma * (alignment.chunks as f64 / m as f64).powf(cfg.beta_exp);
    Ok(MeteorScore {
        precision,
        recall,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
        matches: m,
        chunks: alignment.chunks,
    })
}
