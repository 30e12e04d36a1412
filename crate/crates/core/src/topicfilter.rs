//! Topic partitioning of QA pairs.
//!
//! Questions are tokenized, stop words removed, and a latent Dirichlet
//! allocation model is fitted by collapsed Gibbs sampling. Each topic is then
//! labelled academic, living or other by how much of its word distribution
//! falls on per-class seed keywords, and each document follows its most
//! probable topic.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAPair;
use crate::text::tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("no documents to fit")]
    NoDocuments,
    #[error("vocabulary is empty: every document has zero tokens")]
    EmptyVocabulary,
    #[error("invalid LDA configuration: {0}")]
    InvalidConfig(String),
    #[error("seed keyword map is empty")]
    EmptySeedKeywords,
    #[error("model was fitted on {model} documents but {given} were supplied")]
    DocumentCountMismatch { model: usize, given: usize },
}

/// Remove every token found in `stoplist`, keeping the others in order.
/// The result is the surviving tokens joined by single spaces.
pub fn remove_stopwords(text: &str, stoplist: &HashSet<String>) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| !stoplist.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse a stop list: one entry per line, `#` starts a comment. Entries are
/// tokenized so they compare equal to document tokens.
pub fn parse_stoplist(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(tokenize)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl LdaConfig {
    /// Defaults for `k` topics: `alpha = 50 / k`, `beta = 0.01`, 1000 sweeps.
    pub fn with_k(k: usize) -> Self {
        LdaConfig {
            k,
            iterations: 1000,
            alpha: 50.0 / k.max(1) as f64,
            beta: 0.01,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), TopicError> {
        if self.k == 0 {
            return Err(TopicError::InvalidConfig("k must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(TopicError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TopicError::InvalidConfig("alpha must be > 0".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TopicError::InvalidConfig("beta must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig::with_k(10)
    }
}

/// State of a collapsed Gibbs chain over topic assignments.
///
/// Exposed so the chain can be driven sweep by sweep; [`fit_lda`] is the
/// usual entry point.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    k: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    // docs × k
    doc_topic_counts: Vec<u32>,
    // k × vocab
    topic_word_counts: Vec<u32>,
    topic_counts: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl GibbsSampler {
    /// Start a chain with uniformly random topic assignments.
    ///
    /// `docs` holds word ids in `0..vocab_size`.
    pub fn new(docs: Vec<Vec<usize>>, vocab_size: usize, k: usize, alpha: f64, beta: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doc_topic_counts = vec![0u32; docs.len() * k];
        let mut topic_word_counts = vec![0u32; k * vocab_size];
        let mut topic_counts = vec![0u32; k];
        let mut assignments = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut z = Vec::with_capacity(doc.len());
            for &w in doc {
                assert!(w < vocab_size, "word id {w} out of range");
                let topic = rng.random_range(0..k);
                doc_topic_counts[d * k + topic] += 1;
                topic_word_counts[topic * vocab_size + w] += 1;
                topic_counts[topic] += 1;
                z.push(topic);
            }
            assignments.push(z);
        }
        GibbsSampler {
            k,
            vocab_size,
            alpha,
            beta,
            docs,
            assignments,
            doc_topic_counts,
            topic_word_counts,
            topic_counts,
            rng,
            weights: vec![0.0; k],
        }
    }

    /// Resample every token's topic once, in document order.
    pub fn sweep(&mut self) {
        let k = self.k;
        let v = self.vocab_size;
        let v_beta = v as f64 * self.beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.doc_topic_counts[d * k + old] -= 1;
                self.topic_word_counts[old * v + w] -= 1;
                self.topic_counts[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (f64::from(self.doc_topic_counts[d * k + t]) + self.alpha)
                        * (f64::from(self.topic_word_counts[t * v + w]) + self.beta)
                        / (f64::from(self.topic_counts[t]) + v_beta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.doc_topic_counts[d * k + new] += 1;
                self.topic_word_counts[new * v + w] += 1;
                self.topic_counts[new] += 1;
                self.assignments[d][i] = new;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Posterior mean document-topic distributions.
    pub fn doc_topic(&self) -> Vec<Vec<f64>> {
        (0..self.docs.len())
            .map(|d| {
                normalized(
                    (0..self.k).map(|t| f64::from(self.doc_topic_counts[d * self.k + t]) + self.alpha),
                )
            })
            .collect()
    }

    /// Posterior mean topic-word distributions.
    pub fn topic_word(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|t| {
                let row = &self.topic_word_counts[t * self.vocab_size..(t + 1) * self.vocab_size];
                normalized(row.iter().map(|&c| f64::from(c) + self.beta))
            })
            .collect()
    }
}

fn normalized(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut row: Vec<f64> = values.collect();
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

/// A fitted topic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocab: Vec<String>,
    /// `docs × k`, rows on the probability simplex.
    pub doc_topic: Vec<Vec<f64>>,
    /// `k × vocab`, rows on the probability simplex.
    pub topic_word: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl TopicModel {
    /// The `n` most probable words of `topic`, ties broken alphabetically.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<(String, f64)> {
        let mut words: Vec<(usize, f64)> = self.topic_word[topic].iter().copied().enumerate().collect();
        words.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.vocab[a.0].cmp(&self.vocab[b.0])));
        words
            .into_iter()
            .take(n)
            .map(|(w, p)| (self.vocab[w].clone(), p))
            .collect()
    }

    /// Index and probability of the most probable topic of document `doc`;
    /// the lowest index wins ties.
    pub fn dominant_topic(&self, doc: usize) -> (usize, f64) {
        self.doc_topic[doc]
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (t, p)| if p > best.1 { (t, p) } else { best })
    }
}

/// Fit LDA by collapsed Gibbs sampling. The same inputs always produce a
/// bit-identical model.
pub fn fit_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<TopicModel, TopicError> {
    config.validate()?;
    if docs.is_empty() {
        return Err(TopicError::NoDocuments);
    }
    let vocab: Vec<String> = docs
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if vocab.is_empty() {
        return Err(TopicError::EmptyVocabulary);
    }
    let ids: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let encoded: Vec<Vec<usize>> = docs
        .iter()
        .map(|doc| doc.iter().map(|w| ids[w.as_str()]).collect())
        .collect();

    let mut warnings = Vec::new();
    if config.k > docs.len() {
        warnings.push(format!(
            "k = {} exceeds the number of documents ({})",
            config.k,
            docs.len()
        ));
    }

    let mut sampler = GibbsSampler::new(encoded, vocab.len(), config.k, config.alpha, config.beta, config.seed);
    for _ in 0..config.iterations {
        sampler.sweep();
    }

    Ok(TopicModel {
        k: config.k,
        doc_topic: sampler.doc_topic(),
        topic_word: sampler.topic_word(),
        vocab,
        alpha: config.alpha,
        beta: config.beta,
        seed: config.seed,
        iterations: config.iterations,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicClass {
    Academic,
    Living,
    Other,
}

pub type SeedKeywords = BTreeMap<TopicClass, BTreeSet<String>>;

/// Starter keyword lists for Korean/English campus boards. Edit or replace
/// them through a keywords file.
pub fn default_seed_keywords() -> SeedKeywords {
    let academic = [
        "수강신청", "수업", "강의", "교수님", "과제", "시험", "중간고사", "기말고사", "학점", "성적", "전공",
        "교양", "졸업", "휴학", "복학", "출석", "레포트", "학사", "course", "class", "exam", "grade",
        "credit", "major", "professor", "lecture", "gls",
    ];
    let living = [
        "기숙사", "학식", "식당", "밥", "자취", "셔틀", "버스", "동아리", "알바", "방", "월세", "편의점",
        "카페", "축제", "생활", "dorm", "cafeteria", "bus", "club", "food", "rent",
    ];
    let mut map = SeedKeywords::new();
    for (class, words) in [(TopicClass::Academic, &academic[..]), (TopicClass::Living, &living[..])] {
        map.insert(class, words.iter().flat_map(|w| tokenize(w)).collect());
    }
    map
}

/// Tokenize every keyword so it compares equal to document tokens.
pub fn normalize_seed_keywords(keywords: SeedKeywords) -> SeedKeywords {
    keywords
        .into_iter()
        .map(|(class, words)| (class, words.iter().flat_map(|w| tokenize(w)).collect()))
        .collect()
}

/// QA pairs split by topic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicPartition {
    pub academic: Vec<QAPair>,
    pub living: Vec<QAPair>,
    pub other: Vec<QAPair>,
    pub seed_keywords: SeedKeywords,
    /// Class assigned to each topic, indexed by topic.
    pub topic_classes: Vec<TopicClass>,
    /// `doc_id`s whose dominant topic has probability below 0.5.
    pub low_confidence: Vec<String>,
}

pub const LOW_CONFIDENCE: f64 = 0.5;

/// Class of each topic by seed-keyword mass in its word distribution. Ties
/// for the top mass, and topics with no keyword mass at all, go to other.
pub fn classify_topics(model: &TopicModel, seed_keywords: &SeedKeywords) -> Vec<TopicClass> {
    let word_ids: HashMap<&str, usize> = model.vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let keyword_ids: Vec<(TopicClass, Vec<usize>)> = seed_keywords
        .iter()
        .map(|(class, words)| {
            let ids = words
                .iter()
                .flat_map(|w| tokenize(w))
                .filter_map(|w| word_ids.get(w.as_str()).copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            (*class, ids)
        })
        .collect();

    model
        .topic_word
        .iter()
        .map(|row| {
            let masses: Vec<(TopicClass, f64)> = keyword_ids
                .iter()
                .map(|(class, ids)| (*class, ids.iter().map(|&i| row[i]).sum()))
                .collect();
            let best = masses.iter().map(|m| m.1).fold(0.0, f64::max);
            let winners: Vec<_> = masses.iter().filter(|m| m.1 == best).collect();
            if best > 0.0 && winners.len() == 1 {
                winners[0].0
            } else {
                TopicClass::Other
            }
        })
        .collect()
}

/// Route each document to the class of its dominant topic.
pub fn partition_by_topic(
    model: &TopicModel,
    docs: Vec<QAPair>,
    seed_keywords: &SeedKeywords,
) -> Result<TopicPartition, TopicError> {
    if seed_keywords.values().all(BTreeSet::is_empty) {
        return Err(TopicError::EmptySeedKeywords);
    }
    if docs.len() != model.doc_topic.len() {
        return Err(TopicError::DocumentCountMismatch {
            model: model.doc_topic.len(),
            given: docs.len(),
        });
    }
    let topic_classes = classify_topics(model, seed_keywords);
    let mut partition = TopicPartition {
        academic: Vec::new(),
        living: Vec::new(),
        other: Vec::new(),
        seed_keywords: seed_keywords.clone(),
        topic_classes,
        low_confidence: Vec::new(),
    };
    for (i, doc) in docs.into_iter().enumerate() {
        let (topic, p) = model.dominant_topic(i);
        if p < LOW_CONFIDENCE {
            partition.low_confidence.push(doc.doc_id());
        }
        match partition.topic_classes[topic] {
            TopicClass::Academic => partition.academic.push(doc),
            TopicClass::Living => partition.living.push(doc),
            TopicClass::Other => partition.other.push(doc),
        }
    }
    Ok(partition)
}

/// Token lists fed to the topic model: the question of each pair, tokenized
/// with stop words removed.
pub fn prepare_docs(pairs: &[QAPair], stoplist: &HashSet<String>) -> Vec<Vec<String>> {
    pairs
        .iter()
        .map(|p| tokenize(&p.question).into_iter().filter(|t| !stoplist.contains(t)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub class: TopicClass,
    pub top_words: Vec<(String, f64)>,
}

/// JSON topic report written next to the partition files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub topics: Vec<TopicSummary>,
    pub academic: usize,
    pub living: usize,
    pub other: usize,
    pub low_confidence: Vec<String>,
}

impl TopicReport {
    pub fn new(model: &TopicModel, partition: &TopicPartition, top_n: usize) -> Self {
        TopicReport {
            k: model.k,
            iterations: model.iterations,
            alpha: model.alpha,
            beta: model.beta,
            seed: model.seed,
            warnings: model.warnings.clone(),
            topics: (0..model.k)
                .map(|t| TopicSummary {
                    topic: t,
                    class: partition.topic_classes[t],
                    top_words: model.top_words(t, top_n),
                })
                .collect(),
            academic: partition.academic.len(),
            living: partition.living.len(),
            other: partition.other.len(),
            low_confidence: partition.low_confidence.clone(),
        }
    }
}
