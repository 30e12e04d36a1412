use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{l2_norm, EmbedError, EmbeddingProvider, EmbeddingVector};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 2 training examples, got {0}")]
    TooFewExamples(usize),
    #[error("training set contains only one class")]
    SingleClass,
    #[error("k must be a positive odd number, got {0}")]
    InvalidK(usize),
    #[error("k = {k} exceeds the {n} training examples")]
    KTooLarge { k: usize, n: usize },
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("vector dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("model file: {0}")]
    Persist(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Binary usefulness label, serialised as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Usefulness {
    NotUseful,
    Useful,
}

impl Usefulness {
    pub fn as_f64(self) -> f64 {
        match self {
            Usefulness::NotUseful => 0.0,
            Usefulness::Useful => 1.0,
        }
    }
}

impl TryFrom<u8> for Usefulness {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Usefulness::NotUseful),
            1 => Ok(Usefulness::Useful),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Usefulness> for u8 {
    fn from(l: Usefulness) -> u8 {
        match l {
            Usefulness::NotUseful => 0,
            Usefulness::Useful => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Usefulness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LinearLogistic,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ClassifierKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub k: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ClassifierKind::LinearLogistic,
            epochs: 50,
            learning_rate: 0.1,
            l2: 0.0,
            seed: 0,
            k: 5,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredExample {
    pub vector: Vec<f32>,
    pub label: Usefulness,
}

/// A trained usefulness classifier.
///
/// `weights`/`bias` are used by the linear kind, `examples` by kNN.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub dimension: usize,
    pub provider_id: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub training_meta: TrainingMeta,
    pub examples: Vec<StoredExample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Usefulness,
    /// Probability-like score in `[0, 1]`.
    pub score: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Mean logistic loss over `data` and its gradient with respect to the
/// weights and the bias.
pub fn logistic_loss_gradient(weights: &[f64], bias: f64, data: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, y) in data {
        let z = dot(weights, x) + bias;
        // log(1 + e^z) - y z, stable for large |z|
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let g = sigmoid(z) - y;
        for (gw, xi) in grad_w.iter_mut().zip(x) {
            *gw += g * xi;
        }
        grad_b += g;
    }
    for gw in &mut grad_w {
        *gw /= n;
    }
    (loss / n, grad_w, grad_b / n)
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Train a classifier on pre-embedded examples.
pub fn train_classifier(
    train: &[(EmbeddingVector, Usefulness)],
    config: &TrainConfig,
) -> Result<ClassifierModel, ClassifierError> {
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(ClassifierError::InvalidThreshold(config.threshold));
    }
    let first = train.first().ok_or(ClassifierError::TooFewExamples(0))?;
    let dimension = first.0.dimension();
    if let Some((v, _)) = train.iter().find(|(v, _)| v.dimension() != dimension) {
        return Err(ClassifierError::DimensionMismatch {
            expected: dimension,
            got: v.dimension(),
        });
    }
    let meta = TrainingMeta {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        seed: config.seed,
        k: config.k,
    };
    let mut model = ClassifierModel {
        kind: config.kind,
        dimension,
        provider_id: first.0.provider_id.clone(),
        weights: Vec::new(),
        bias: 0.0,
        threshold: config.threshold,
        training_meta: meta,
        examples: Vec::new(),
    };

    match config.kind {
        ClassifierKind::LinearLogistic => {
            if train.len() < 2 {
                return Err(ClassifierError::TooFewExamples(train.len()));
            }
            let useful = train.iter().filter(|(_, l)| *l == Usefulness::Useful).count();
            if useful == 0 || useful == train.len() {
                return Err(ClassifierError::SingleClass);
            }
            if config.epochs == 0 || !(config.learning_rate > 0.0) {
                return Err(ClassifierError::InvalidConfig(
                    "epochs and learning_rate must be positive".into(),
                ));
            }
            let data: Vec<(Vec<f64>, f64)> = train.iter().map(|(v, l)| (widen(&v.values), l.as_f64())).collect();
            let (w, b) = sgd_logistic(&data, dimension, config);
            model.weights = w;
            model.bias = b;
        }
        ClassifierKind::Knn => {
            if config.k == 0 || config.k % 2 == 0 {
                return Err(ClassifierError::InvalidK(config.k));
            }
            if config.k > train.len() {
                return Err(ClassifierError::KTooLarge {
                    k: config.k,
                    n: train.len(),
                });
            }
            model.examples = train
                .iter()
                .map(|(v, l)| StoredExample {
                    vector: v.values.clone(),
                    label: *l,
                })
                .collect();
        }
    }
    Ok(model)
}

fn sgd_logistic(data: &[(Vec<f64>, f64)], dimension: usize, config: &TrainConfig) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut w = vec![0.0; dimension];
    let mut b = 0.0;
    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let g = sigmoid(dot(&w, x) + b) - y;
            for (wj, xj) in w.iter_mut().zip(x) {
                *wj -= lr * (g * xj + config.l2 * *wj);
            }
            b -= lr * g;
        }
    }
    (w, b)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    (d / (na * nb)).clamp(-1.0, 1.0)
}

impl ClassifierModel {
    pub fn predict(&self, v: &EmbeddingVector) -> Result<Prediction, ClassifierError> {
        self.predict_values(&v.values)
    }

    pub fn predict_values(&self, v: &[f32]) -> Result<Prediction, ClassifierError> {
        if v.len() != self.dimension {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dimension,
                got: v.len(),
            });
        }
        let score = match self.kind {
            ClassifierKind::LinearLogistic => sigmoid(dot(&self.weights, &widen(v)) + self.bias),
            ClassifierKind::Knn => self.knn_score(v),
        };
        Ok(self.decide(score))
    }

    /// Apply the threshold; a score equal to the threshold counts as useful.
    pub fn decide(&self, score: f64) -> Prediction {
        let label = if score >= self.threshold {
            Usefulness::Useful
        } else {
            Usefulness::NotUseful
        };
        Prediction { label, score }
    }

    fn knn_score(&self, v: &[f32]) -> f64 {
        let k = self.training_meta.k.min(self.examples.len());
        let mut scored: Vec<(f64, usize)> = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine(v, &e.vector), i))
            .collect();
        // nearest first; equal similarity keeps training order
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        let useful = scored[..k]
            .iter()
            .filter(|(_, i)| self.examples[*i].label == Usefulness::Useful)
            .count();
        useful as f64 / k as f64
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let json = serde_json::to_string_pretty(&PersistedModel::from(self))
            .map_err(|e| ClassifierError::Persist(e.to_string()))?;
        fs::write(path, json).map_err(|e| ClassifierError::Persist(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = fs::read_to_string(path).map_err(|e| ClassifierError::Persist(e.to_string()))?;
        let persisted: PersistedModel =
            serde_json::from_str(&text).map_err(|e| ClassifierError::Persist(e.to_string()))?;
        persisted.try_into()
    }
}

pub const MODEL_FORMAT: &str = "campusqa-usefulness-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk JSON form of a [`ClassifierModel`]. Float vectors are stored as
/// base64 of their little-endian bytes.
#[derive(Debug, Serialize, Deserialize)]
struct PersistedModel {
    format: String,
    version: u32,
    kind: ClassifierKind,
    dimension: usize,
    provider_id: String,
    weights_b64: String,
    bias: f64,
    threshold: f64,
    training_meta: TrainingMeta,
    #[serde(default)]
    examples: Vec<PersistedExample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedExample {
    label: Usefulness,
    vector_b64: String,
}

impl From<&ClassifierModel> for PersistedModel {
    fn from(m: &ClassifierModel) -> Self {
        let weights: Vec<u8> = m.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        PersistedModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            kind: m.kind,
            dimension: m.dimension,
            provider_id: m.provider_id.clone(),
            weights_b64: BASE64.encode(weights),
            bias: m.bias,
            threshold: m.threshold,
            training_meta: m.training_meta.clone(),
            examples: m
                .examples
                .iter()
                .map(|e| PersistedExample {
                    label: e.label,
                    vector_b64: BASE64.encode(e.vector.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()),
                })
                .collect(),
        }
    }
}

impl TryFrom<PersistedModel> for ClassifierModel {
    type Error = ClassifierError;

    fn try_from(p: PersistedModel) -> Result<Self, Self::Error> {
        let bad = |m: &str| ClassifierError::Persist(m.to_string());
        if p.format != MODEL_FORMAT {
            return Err(bad("not a usefulness model file"));
        }
        if p.version != MODEL_VERSION {
            return Err(ClassifierError::Persist(format!("unsupported model version {}", p.version)));
        }
        let raw = BASE64.decode(&p.weights_b64).map_err(|e| bad(&e.to_string()))?;
        if raw.len() % 8 != 0 {
            return Err(bad("weights_b64 length is not a multiple of 8"));
        }
        let weights: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if p.kind == ClassifierKind::LinearLogistic && weights.len() != p.dimension {
            return Err(bad("weight count does not match dimension"));
        }
        let mut examples = Vec::with_capacity(p.examples.len());
        for e in p.examples {
            let raw = BASE64.decode(&e.vector_b64).map_err(|e| bad(&e.to_string()))?;
            if raw.len() != p.dimension * 4 {
                return Err(bad("stored example has wrong dimension"));
            }
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            examples.push(StoredExample { vector, label: e.label });
        }
        if !(p.threshold > 0.0 && p.threshold < 1.0) {
            return Err(ClassifierError::InvalidThreshold(p.threshold));
        }
        Ok(ClassifierModel {
            kind: p.kind,
            dimension: p.dimension,
            provider_id: p.provider_id,
            weights,
            bias: p.bias,
            threshold: p.threshold,
            training_meta: p.training_meta,
            examples,
        })
    }
}

/// Confusion-matrix summary. `confusion[actual][predicted]`, index 0 is
/// not useful and 1 is useful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: [[usize; 2]; 2],
    pub n_test: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassifierReport {
    pub fn from_confusion(confusion: [[usize; 2]; 2]) -> Self {
        let [[tn, fp], [fn_, tp]] = confusion;
        let n_test = tn + fp + fn_ + tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassifierReport {
            accuracy: ratio(tp + tn, n_test),
            precision,
            recall,
            f1,
            confusion,
            n_test,
        }
    }
}

fn label_index(l: Usefulness) -> usize {
    match l {
        Usefulness::NotUseful => 0,
        Usefulness::Useful => 1,
    }
}

/// Score a model on already-embedded examples.
pub fn evaluate_embedded(
    model: &ClassifierModel,
    test: &[(EmbeddingVector, Usefulness)],
) -> Result<ClassifierReport, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let mut confusion = [[0usize; 2]; 2];
    for (v, actual) in test {
        let predicted = model.predict(v)?.label;
        confusion[label_index(*actual)][label_index(predicted)] += 1;
    }
    Ok(ClassifierReport::from_confusion(confusion))
}

/// Embed each test text with `provider` and score the model on it.
pub fn evaluate_classifier(
    model: &ClassifierModel,
    test: &[LabeledExample],
    provider: &dyn EmbeddingProvider,
) -> Result<ClassifierReport, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let embedded = embed_examples(test, provider)?;
    evaluate_embedded(model, &embedded)
}

pub fn embed_examples(
    examples: &[LabeledExample],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(EmbeddingVector, Usefulness)>, ClassifierError> {
    examples
        .iter()
        .map(|e| Ok((provider.embed(&e.text)?, e.label)))
        .collect()
}

/// Seeded stratified split: each class contributes `round(n_class *
/// test_fraction)` items to the test side.
pub fn stratified_split<T: Clone>(
    items: &[T],
    label_of: impl Fn(&T) -> Usefulness,
    test_fraction: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Usefulness::NotUseful, Usefulness::Useful] {
        let mut members: Vec<&T> = items.iter().filter(|x| label_of(x) == class).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction.clamp(0.0, 1.0)).round() as usize;
        for (i, item) in members.into_iter().enumerate() {
            if i < n_test {
                test.push(item.clone());
            } else {
                train.push(item.clone());
            }
        }
    }
    (train, test)
}
