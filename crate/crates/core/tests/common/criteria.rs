//! The end-to-end checks run by the acceptance target. Each returns a short
//! detail line on success and a description of the first mismatch on
//! failure.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use campusqa::corpus::{load_records, CleaningRules, InputFormat, Label, LabelCounts, QAPair, RawRecord};
use campusqa::evalharness::{run_eval, EvalConfig, TestCase};
use campusqa::metrics::{
    bleu, lcs_length, meteor, perplexity, rouge_l, rouge_n, train_bigram_lm, BleuConfig, MeteorConfig, TokenSeq,
};
use campusqa::rag::{MockEcho, RagConfig, RagPipeline};
use campusqa::topicfilter::{fit_lda, GibbsSampler, LdaConfig};
use campusqa::usefulness::{
    evaluate_embedded, logistic_loss_gradient, train_classifier, ClassifierKind, EmbedError, EmbeddingProvider,
    EmbeddingVector, LocalHashEmbedder, ProviderKind, TrainConfig, Usefulness,
};
use campusqa::vectorstore::{build_index, DocInput, EmbedText};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

use super::{gen, http, oracles};

pub type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    check((a - b).abs() <= tol, || format!("{what}: got {a}, expected {b}"))
}

fn seq(s: &str) -> TokenSeq {
    TokenSeq::new(s)
}

pub fn metric_hand_values() -> Outcome {
    let tol = 1e-9;
    let b1 = BleuConfig::uniform(1);

    let r = bleu(&seq("the the the the the the the"), &[seq("the cat is on the mat")], &b1).map_err(|e| e.to_string())?;
    close(r.precisions[0], 2.0 / 7.0, tol, "clipped P1")?;
    close(r.bp, 1.0, tol, "clipped BP")?;
    close(r.score, 2.0 / 7.0, tol, "clipped BLEU")?;

    let r = bleu(&seq("the cat"), &[seq("the cat sat")], &b1).map_err(|e| e.to_string())?;
    close(r.precisions[0], 1.0, tol, "short P1")?;
    close(r.score, (-0.5f64).exp(), tol, "brevity BLEU")?;

    let reference = seq("the cat sat on the mat");
    let hyp = seq("the cat on mat");
    let r1 = rouge_n(&hyp, &reference, 1).map_err(|e| e.to_string())?;
    close(r1.recall, 4.0 / 6.0, tol, "ROUGE-1 recall")?;
    close(r1.precision, 1.0, tol, "ROUGE-1 precision")?;
    let r2 = rouge_n(&hyp, &reference, 2).map_err(|e| e.to_string())?;
    close(r2.recall, 1.0 / 5.0, tol, "ROUGE-2 recall")?;
    let rl = rouge_l(&hyp, &reference, 1.0).map_err(|e| e.to_string())?;
    check(lcs_length(&hyp.tokens, &reference.tokens) == 4, || "LCS".into())?;
    close(rl.f, 0.8, tol, "ROUGE-L F")?;

    let lm = train_bigram_lm(&[seq("a b"), seq("a b")]).map_err(|e| e.to_string())?;
    close(lm.prob("<s>", "a"), 3.0 / 5.0, tol, "P(a|<s>)")?;
    close(lm.prob("a", "b"), 3.0 / 5.0, tol, "P(b|a)")?;
    close(lm.prob("b", "</s>"), 3.0 / 5.0, tol, "P(</s>|b)")?;
    close(lm.prob("b", "a"), 1.0 / 5.0, tol, "P(a|b)")?;
    close(perplexity(&seq("a b"), &lm).map_err(|e| e.to_string())?, 5.0 / 3.0, tol, "perplexity")?;

    let cfg = MeteorConfig::default();
    let m = meteor(&seq("the cat sat"), &seq("the cat sat"), &cfg).map_err(|e| e.to_string())?;
    close(m.penalty, 1.0 / 54.0, tol, "METEOR identity penalty")?;
    close(m.score, 53.0 / 54.0, tol, "METEOR identity")?;
    let m = meteor(&seq("the cat"), &seq("cat the"), &cfg).map_err(|e| e.to_string())?;
    check((m.matches, m.chunks) == (2, 2), || format!("swap alignment {:?}", (m.matches, m.chunks)))?;
    close(m.score, 0.5, tol, "METEOR swap")?;
    Ok("12 hand-derived values".into())
}

pub fn metric_bruteforce() -> Outcome {
    let all = gen::all_sequences(&["a", "b", "c"], 5);
    let bleu_cfg = BleuConfig::default();
    let meteor_cfg = MeteorConfig::default();
    let mut pairs = 0usize;
    for reference in &all {
        let ref_seq = TokenSeq::from_tokens(reference.clone());
        let refs = std::slice::from_ref(&ref_seq);
        let lm = train_bigram_lm(refs).map_err(|e| e.to_string())?;
        for hyp in &all {
            let hyp_seq = TokenSeq::from_tokens(hyp.clone());
            let ctx = || format!("hyp {hyp:?} ref {reference:?}");

            let got = bleu(&hyp_seq, refs, &bleu_cfg).map_err(|e| e.to_string())?.score;
            check(got == oracles::bleu(hyp, reference, 4), || format!("BLEU {}", ctx()))?;

            for n in 1..=2 {
                let got = rouge_n(&hyp_seq, &ref_seq, n).map_err(|e| e.to_string())?;
                let (r, p, f) = oracles::rouge_n(hyp, reference, n);
                check((got.recall, got.precision, got.f) == (r, p, f), || format!("ROUGE-{n} {}", ctx()))?;
            }

            let got = rouge_l(&hyp_seq, &ref_seq, 1.0).map_err(|e| e.to_string())?;
            let (r, p, f) = oracles::rouge_l(hyp, reference);
            check((got.recall, got.precision, got.f) == (r, p, f), || format!("ROUGE-L {}", ctx()))?;

            let got = perplexity(&hyp_seq, &lm).map_err(|e| e.to_string())?;
            let want = oracles::perplexity(hyp, std::slice::from_ref(reference));
            check(got == want, || format!("perplexity {got} vs {want} {}", ctx()))?;

            let got = meteor(&hyp_seq, &ref_seq, &meteor_cfg).map_err(|e| e.to_string())?;
            let (m, chunks) = oracles::meteor_alignment(hyp, reference);
            check((got.matches, got.chunks) == (m, chunks), || format!("METEOR alignment {}", ctx()))?;
            check(got.score == oracles::meteor(hyp, reference), || format!("METEOR {}", ctx()))?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs, 7 metrics each"))
}

/// Reads vectors straight out of the text: `"1 -2 0.5"`.
pub struct LiteralProvider {
    pub dimension: usize,
}

impl EmbeddingProvider for LiteralProvider {
    fn provider_id(&self) -> &str {
        "literal"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::LocalHash
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let values: Vec<f32> = text.split_whitespace().map(|v| v.parse().unwrap()).collect();
        Ok(EmbeddingVector::raw(values, "literal"))
    }
}

fn render(v: &[f32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn retrieval_exactness() -> Outcome {
    let mut rng = gen::rng(2024);
    let mut ties = 0usize;
    for trial in 0..1000 {
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(1..=40);
        // Small integer coordinates so that equal similarities are common.
        let coarse = trial % 2 == 0;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
            (0..dim)
                .map(|_| {
                    if coarse {
                        rng.random_range(-2i32..=2) as f32
                    } else {
                        rng.random_range(-1.0f32..1.0)
                    }
                })
                .collect()
        };
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let rows: Vec<(String, Vec<f32>)> = ids.iter().map(|i| (format!("d{i:03}"), draw(&mut rng))).collect();
        let docs: Vec<DocInput> = rows
            .iter()
            .map(|(id, v)| DocInput {
                doc_id: id.clone(),
                question: render(v),
                answer: String::new(),
                metadata: BTreeMap::new(),
            })
            .collect();
        let provider = LiteralProvider { dimension: dim };
        let index = build_index(&docs, &provider, EmbedText::QuestionOnly).map_err(|e| e.to_string())?;

        let query = draw(&mut rng);
        let k = rng.random_range(1..=n + 3);
        let got = index.search(&query, k).map_err(|e| e.to_string())?;
        let want = oracles::full_scan(&rows, &query, k);
        check(got.len() == want.len(), || format!("trial {trial}: {} hits, expected {}", got.len(), want.len()))?;
        for (i, (hit, (id, sim))) in got.iter().zip(&want).enumerate() {
            check(hit.doc_id == *id && hit.similarity == *sim && hit.rank == i + 1, || {
                format!("trial {trial} rank {}: got ({}, {}), expected ({id}, {sim})", i + 1, hit.doc_id, hit.similarity)
            })?;
        }
        ties += want.windows(2).filter(|w| w[0].1 == w[1].1).count();

        // self-retrieval
        let (self_id, self_vec) = &rows[rng.random_range(0..n)];
        if self_vec.iter().any(|&x| x != 0.0) {
            let hits = index.search(self_vec, n).map_err(|e| e.to_string())?;
            let own = hits.iter().find(|h| h.doc_id == *self_id).expect("all docs returned");
            close(own.similarity, 1.0, 1e-6, &format!("trial {trial} self similarity"))?;
            close(hits[0].similarity, 1.0, 1e-6, &format!("trial {trial} top similarity"))?;
        }
    }
    Ok(format!("1000 trials, {ties} tied neighbours ordered by id"))
}

/// 50 stored questions with distinct vocabularies and answers of 4 to 8
/// tokens.
pub fn identity_fixture() -> Vec<DocInput> {
    (0..50)
        .map(|i| {
            let len = 4 + i % 5;
            let answer = (0..len).map(|j| format!("ans{i}w{j}")).collect::<Vec<_>>().join(" ");
            DocInput {
                doc_id: format!("case{i:02}"),
                question: format!("질문{i} topic{i} detail{i}"),
                answer,
                metadata: BTreeMap::new(),
            }
        })
        .collect()
}

pub fn pipeline_identity() -> Outcome {
    let docs = identity_fixture();
    let provider = Arc::new(LocalHashEmbedder::new(256));
    let index = build_index(&docs, provider.as_ref(), EmbedText::QuestionOnly).map_err(|e| e.to_string())?;
    let pipeline = RagPipeline::new(Arc::new(index), provider, Arc::new(MockEcho), RagConfig::default())
        .map_err(|e| e.to_string())?;
    let cases: Vec<TestCase> = docs
        .iter()
        .map(|d| TestCase {
            case_id: d.doc_id.clone(),
            question: d.question.clone(),
            reference_answer: d.answer.clone(),
        })
        .collect();
    let corpus: Vec<TokenSeq> = docs.iter().map(|d| seq(&d.answer)).collect();
    let lm = train_bigram_lm(&corpus).map_err(|e| e.to_string())?;
    let cfg = EvalConfig {
        parallelism: 4,
        ..EvalConfig::default()
    };
    let report = run_eval(
        &cases,
        move |case: &TestCase| {
            pipeline
                .answer("identity", &case.question)
                .map(|turn| turn.answer)
                .map_err(|e| e.to_string())
        },
        &cfg,
        &lm,
    )
    .map_err(|e| e.to_string())?;

    check(report.n_failed == 0 && report.per_case.len() == 50, || format!("{} failures", report.n_failed))?;
    check(report.means.bleu == 1.0, || format!("mean BLEU {}", report.means.bleu))?;
    check(report.means.rouge1.f == 1.0, || format!("mean ROUGE-1 F {}", report.means.rouge1.f))?;
    for row in &report.per_case {
        let m = row.ref_len as f64;
        let formula = 1.0 - 0.5 * (1.0 / m).powf(3.0);
        check(row.meteor == formula, || format!("{}: METEOR {} vs {formula}", row.case_id, row.meteor))?;
        close(row.meteor, 1.0 - 0.5 / (m * m * m), 1e-15, &row.case_id)?;
        check(row.answer_len == row.ref_len, || format!("{}: answer differs from reference", row.case_id))?;
    }
    Ok("50 cases, BLEU 1, ROUGE-1 F 1, METEOR = 1 - 0.5/m^3".into())
}

pub fn classifier_protocol() -> Outcome {
    let data = gen::separable(400, 16, 0.5, 31);
    let (train, test) = data.split_at(200);
    let config = TrainConfig {
        kind: ClassifierKind::LinearLogistic,
        epochs: 100,
        learning_rate: 0.5,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = train_classifier(train, &config).map_err(|e| e.to_string())?;
    let train_acc = evaluate_embedded(&model, train).map_err(|e| e.to_string())?.accuracy;
    let report = evaluate_embedded(&model, test).map_err(|e| e.to_string())?;
    check(report.accuracy >= 0.95, || format!("test accuracy {}", report.accuracy))?;

    // Gradient against central differences of an independently written loss.
    let mut rng = gen::rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let dim = rng.random_range(1..=6);
        let n = rng.random_range(1..=12);
        let batch: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| {
                let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                (x, f64::from(rng.random_range(0..=1u8)))
            })
            .collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: f64 = rng.random_range(-1.0..1.0);
        let loss = |w: &[f64], b: f64| -> f64 {
            batch
                .iter()
                .map(|(x, y)| {
                    let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
                    (1.0 + z.exp()).ln() - y * z
                })
                .sum::<f64>()
                / n as f64
        };
        let (_, gw, gb) = logistic_loss_gradient(&w, b, &batch);
        let h = 1e-5;
        let mut analytic = gw.clone();
        analytic.push(gb);
        for (j, g) in analytic.iter().enumerate() {
            let fd = if j < dim {
                let mut up = w.clone();
                let mut down = w.clone();
                up[j] += h;
                down[j] -= h;
                (loss(&up, b) - loss(&down, b)) / (2.0 * h)
            } else {
                (loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h)
            };
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    check(worst <= 1e-4, || format!("gradient relative error {worst}"))?;

    let mut thresholds: Vec<f64> = (0..100).map(|_| rng.random_range(0.001..0.999)).collect();
    thresholds.sort_by(f64::total_cmp);
    let mut previous = usize::MAX;
    for t in thresholds {
        let mut m = model.clone();
        m.threshold = t;
        let mut positives = 0;
        for (v, _) in test {
            let p = m.predict(v).map_err(|e| e.to_string())?;
            check((0.0..=1.0).contains(&p.score), || format!("score {} out of range", p.score))?;
            positives += usize::from(p.label == Usefulness::Useful);
        }
        check(positives <= previous, || format!("threshold {t}: {positives} positives after {previous}"))?;
        previous = positives;
    }
    Ok(format!(
        "train accuracy {train_acc:.3}, test accuracy {:.3}, worst gradient error {worst:.1e}",
        report.accuracy
    ))
}

fn simplex_ok(rows: &[Vec<f64>], what: &str) -> Result<(), String> {
    for (i, row) in rows.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        check((sum - 1.0).abs() <= 1e-9 && row.iter().all(|&p| p >= 0.0), || {
            format!("{what} row {i} sums to {sum}")
        })?;
    }
    Ok(())
}

pub fn topic_model() -> Outcome {
    let (docs, groups) = gen::two_vocab_corpus(40, 20, 3);
    let config = LdaConfig {
        k: 2,
        iterations: 500,
        alpha: 0.5,
        beta: 0.1,
        seed: 7,
    };
    let model = fit_lda(&docs, &config).map_err(|e| e.to_string())?;
    simplex_ok(&model.doc_topic, "doc_topic")?;
    simplex_ok(&model.topic_word, "topic_word")?;
    let mut table = [[0usize; 2]; 2];
    for (d, group) in groups.iter().enumerate() {
        table[model.dominant_topic(d).0][*group] += 1;
    }
    let purity = (table[0][0].max(table[0][1]) + table[1][0].max(table[1][1])) as f64 / docs.len() as f64;
    check(purity >= 0.9, || format!("purity {purity}"))?;
    let again = fit_lda(&docs, &config).map_err(|e| e.to_string())?;
    check(again == model, || "same seed gave a different model".into())?;

    // More seeds and shapes for the simplex invariant.
    for seed in 0..5 {
        let (docs, _) = gen::two_vocab_corpus(7, 5, seed);
        let m = fit_lda(&docs, &LdaConfig { k: 3, iterations: 20, alpha: 0.3, beta: 0.05, seed }).map_err(|e| e.to_string())?;
        simplex_ok(&m.doc_topic, "doc_topic")?;
        simplex_ok(&m.topic_word, "topic_word")?;
    }

    // Small-instance Gibbs check against the enumerated posterior.
    let tiny = vec![vec![0, 1], vec![1, 1]];
    let exact = oracles::lda_posterior(&tiny, 2, 2, 1.0, 1.0);
    let mut sampler = GibbsSampler::new(tiny, 2, 2, 1.0, 1.0, 11);
    for _ in 0..200 {
        sampler.sweep();
    }
    let sweeps = 60_000;
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..sweeps {
        sampler.sweep();
        let z: Vec<usize> = sampler.assignments().iter().flatten().copied().collect();
        *seen.entry(z).or_default() += 1;
    }
    let tv = 0.5
        * exact
            .iter()
            .map(|(z, p)| (seen.get(z).copied().unwrap_or(0) as f64 / sweeps as f64 - p).abs())
            .sum::<f64>();
    check(tv < 0.05, || format!("Gibbs total variation {tv}"))?;
    Ok(format!("purity {purity:.3}, Gibbs TV {tv:.4}"))
}

pub fn corpus_bookkeeping() -> Outcome {
    let cleaner = CleaningRules::default().compile().map_err(|e| e.to_string())?;
    let records = gen::fuzzed_records(10_000, 99);

    let (kept, dropped) = cleaner.clean(records.clone());
    check(kept.len() + dropped.len() == records.len(), || "clean lost records".into())?;
    let mut ids: Vec<&str> = kept
        .iter()
        .map(|r| r.id.as_str())
        .chain(dropped.iter().map(|d| d.record_id.as_deref().unwrap_or("")))
        .collect();
    ids.sort_unstable();
    let mut input_ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    input_ids.sort_unstable();
    check(ids == input_ids, || "kept and dropped do not partition the input".into())?;
    let (twice, none) = cleaner.clean(kept.clone());
    check(twice == kept && none.is_empty(), || "clean is not idempotent".into())?;

    let mut n_pairs = 0;
    for record in &kept {
        let (pairs, removed) = cleaner.expand_answers_audited(record);
        check(pairs.len() <= record.answers.len(), || format!("{} expanded past its answers", record.id))?;
        check(pairs.len() + removed.len() == record.answers.len(), || format!("{} lost answers", record.id))?;
        check(pairs.windows(2).all(|w| w[0].answer_index < w[1].answer_index), || {
            format!("{} answer order", record.id)
        })?;
        for pair in &pairs {
            let single = RawRecord {
                answers: vec![pair.answer.clone()],
                ..record.clone()
            };
            let again = cleaner.expand_answers(&single);
            check(
                again.len() == 1 && again[0].question == pair.question && again[0].answer == pair.answer,
                || format!("{} re-expansion changed the pair", record.id),
            )?;
        }
        n_pairs += pairs.len();
    }

    // Load-time conservation with malformed lines mixed in.
    let mut text = String::new();
    let mut malformed = 0;
    for (i, r) in records.iter().take(2000).enumerate() {
        if i % 7 == 3 {
            text.push_str("{\"id\": \"broken\", \"board\": \n");
            malformed += 1;
        } else {
            text.push_str(&serde_json::to_string(r).map_err(|e| e.to_string())?);
            text.push('\n');
        }
    }
    let loaded = load_records(text.as_bytes(), InputFormat::Jsonl).map_err(|e| e.to_string())?;
    check(loaded.records.len() + loaded.rejects.len() == 2000 && loaded.rejects.len() == malformed, || {
        format!("{} records + {} rejects from 2000 rows", loaded.records.len(), loaded.rejects.len())
    })?;

    // Labeling arithmetic: 5,128 useful + 7,283 not useful.
    let pair = |label| QAPair {
        record_id: "x".into(),
        answer_index: 0,
        question: "q".into(),
        answer: "a".into(),
        label,
        board: None,
        date: None,
    };
    let labeled: Vec<QAPair> = std::iter::repeat_n(pair(Label::Useful), 5128)
        .chain(std::iter::repeat_n(pair(Label::NotUseful), 7283))
        .chain(std::iter::repeat_n(pair(Label::Unlabeled), 50))
        .collect();
    let counts = LabelCounts::from_pairs(&labeled);
    check(counts.labeled == 12_411 && counts.is_consistent(), || format!("{counts:?}"))?;

    Ok(format!("10000 records, {} kept, {n_pairs} pairs; 5128 + 7283 = {}", kept.len(), counts.labeled))
}

// ---- service -------------------------------------------------------------

const SECRET: &str = "sk-campusqa-acceptance-9f2c41d7e0b3";

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_campusqa")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Captured {
    text: Vec<String>,
}

impl Captured {
    fn push(&mut self, s: impl Into<String>) {
        self.text.push(s.into());
    }
}

fn run(args: &[&str], captured: &mut Captured) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .env("CAMPUSQA_API_KEY", SECRET)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    captured.push(stdout.clone());
    captured.push(stderr.clone());
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!("{} failed: {stderr}", args[0]))
    }
}

struct Running {
    child: Child,
    addr: String,
    stdout: Arc<Mutex<String>>,
    stderr: Arc<Mutex<String>>,
}

fn drain(source: impl Read + Send + 'static) -> Arc<Mutex<String>> {
    let sink = Arc::new(Mutex::new(String::new()));
    let writer = Arc::clone(&sink);
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        let mut line = String::new();
        while reader.read_line(&mut line).unwrap_or(0) > 0 {
            writer.lock().unwrap().push_str(&line);
            line.clear();
        }
    });
    sink
}

fn start_server(args: &[&str]) -> Result<Running, String> {
    let mut child = Command::new(bin())
        .arg("serve")
        .args(["--port", "0"])
        .args(args)
        .env("CAMPUSQA_API_KEY", SECRET)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stderr = drain(child.stderr.take().unwrap());
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut first = String::new();
    out.read_line(&mut first).map_err(|e| e.to_string())?;
    let Some(addr) = first.trim().strip_prefix("listening on http://").map(String::from) else {
        let _ = child.kill();
        thread::sleep(Duration::from_millis(200));
        return Err(format!("server did not start: {first:?} {}", stderr.lock().unwrap()));
    };
    let stdout = drain(out);
    stdout.lock().unwrap().push_str(&first);
    Ok(Running { child, addr, stdout, stderr })
}

impl Running {
    fn stop(mut self, captured: &mut Captured) {
        let _ = Command::new("kill").args(["-INT", &self.child.id().to_string()]).status();
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                break;
            }
            thread::sleep(Duration::from_millis(20));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
        thread::sleep(Duration::from_millis(50));
        captured.push(self.stdout.lock().unwrap().clone());
        captured.push(self.stderr.lock().unwrap().clone());
    }
}

fn strip_volatile(body: &str) -> Result<Value, String> {
    let mut v: Value = serde_json::from_str(body).map_err(|e| format!("bad body {body:?}: {e}"))?;
    let obj = v.as_object_mut().ok_or("body is not an object")?;
    obj.remove("latency_ms");
    obj.remove("request_id");
    Ok(v)
}

fn concat_jsonl(parts: &[PathBuf], out: &Path) -> Result<usize, String> {
    let mut text = String::new();
    for p in parts {
        text.push_str(&std::fs::read_to_string(p).map_err(|e| e.to_string())?);
    }
    std::fs::write(out, &text).map_err(|e| e.to_string())?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
}

pub fn service() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |p: &str| dir.path().join(p);
    let s = |p: &PathBuf| p.to_string_lossy().to_string();
    let mut captured = Captured { text: Vec::new() };

    run(&["ingest", "--input", &s(&fixture("corpus.jsonl")), "--format", "jsonl", "--out", &s(&d("ingest"))], &mut captured)?;
    run(
        &[
            "filter-topics",
            "--input",
            &s(&d("ingest/qapairs.jsonl")),
            "--out",
            &s(&d("topics")),
            "--k",
            "4",
            "--iters",
            "200",
            "--seed",
            "1",
        ],
        &mut captured,
    )?;
    let n_docs = concat_jsonl(&[d("topics/academic.jsonl"), d("topics/living.jsonl")], &d("kept.jsonl"))?;
    check(n_docs > 0, || "topic filter kept nothing".into())?;
    run(&["index", "--input", &s(&d("kept.jsonl")), "--out", &s(&d("index.bin"))], &mut captured)?;

    let server = start_server(&["--index", &s(&d("index.bin")), "--llm", "mock_echo"])?;
    let addr = server.addr.clone();
    let result = (|| -> Result<String, String> {
        let health = http::get(&addr, "/healthz").map_err(|e| e.to_string())?;
        captured.push(health.body.clone());
        check(health.status == 200, || format!("healthz {}", health.status))?;
        let health: Value = serde_json::from_str(&health.body).map_err(|e| e.to_string())?;
        check(health["doc_count"] == n_docs, || format!("healthz doc_count {}", health["doc_count"]))?;

        let request = r#"{"session_id":"acceptance","message":"수강신청은 언제 시작해요?"}"#;
        let first = http::post_json(&addr, "/chat", request).map_err(|e| e.to_string())?;
        captured.push(first.body.clone());
        check(first.status == 200, || format!("/chat {} {}", first.status, first.body))?;
        let reference = strip_volatile(&first.body)?;
        let sources = reference["sources"].as_array().map_or(0, Vec::len);
        check(sources > 0 && reference["answer"].as_str().is_some_and(|a| !a.is_empty()), || {
            format!("empty answer or sources: {}", first.body)
        })?;

        let bad = http::request(&addr, "POST", "/chat", Some("text/plain"), request).map_err(|e| e.to_string())?;
        check(bad.status == 400, || format!("non-JSON request got {}", bad.status))?;

        let barrier = Arc::new(Barrier::new(32));
        let handles: Vec<_> = (0..32)
            .map(|_| {
                let barrier = Arc::clone(&barrier);
                let addr = addr.clone();
                thread::spawn(move || {
                    barrier.wait();
                    http::post_json(&addr, "/chat", request)
                })
            })
            .collect();
        let mut ids = Vec::new();
        for h in handles {
            let reply = h.join().map_err(|_| "client thread panicked")?.map_err(|e| e.to_string())?;
            captured.push(reply.body.clone());
            check(reply.status == 200, || format!("concurrent /chat {}", reply.status))?;
            let v: Value = serde_json::from_str(&reply.body).map_err(|e| e.to_string())?;
            ids.push(v["request_id"].as_str().unwrap_or_default().to_string());
            check(strip_volatile(&reply.body)? == reference, || "concurrent bodies differ".into())?;
        }
        ids.sort();
        ids.dedup();
        check(ids.len() == 32, || "request ids repeat".into())?;
        Ok(format!("{n_docs} docs indexed, {sources} sources, 32 identical concurrent bodies"))
    })();
    server.stop(&mut captured);
    let summary = result?;

    // A remote LLM whose upstream fails and echoes the Authorization header.
    let stub = http::StubServer::start(500);
    let config = d("remote.toml");
    std::fs::write(
        &config,
        format!(
            "[llm]\nkind = \"remote\"\nendpoint = \"{}\"\nmodel = \"stub\"\ntimeout_ms = 2000\n\n[llm.retry]\nattempts = 2\nbase_delay_ms = 10\n",
            stub.url("/v1/chat/completions")
        ),
    )
    .map_err(|e| e.to_string())?;
    let server = start_server(&["--index", &s(&d("index.bin")), "--config", &s(&config)])?;
    let reply = http::post_json(&server.addr, "/chat", r#"{"message":"기숙사 신청 언제예요?"}"#);
    server.stop(&mut captured);
    let reply = reply.map_err(|e| e.to_string())?;
    captured.push(reply.body.clone());
    check(reply.status == 502, || format!("failing upstream gave {} {}", reply.status, reply.body))?;

    std::fs::write(
        d("cases.jsonl"),
        "{\"case_id\":\"c1\",\"question\":\"수강신청 언제?\",\"reference_answer\":\"GLS에서 합니다\"}\n",
    )
    .map_err(|e| e.to_string())?;
    let eval = run(
        &[
            "eval",
            "--cases",
            &s(&d("cases.jsonl")),
            "--index",
            &s(&d("index.bin")),
            "--config",
            &s(&config),
            "--report",
            &s(&d("report.json")),
        ],
        &mut captured,
    );
    if let Err(e) = &eval {
        captured.push(e.clone());
    }
    let hits = stub.hits.load(std::sync::atomic::Ordering::SeqCst);
    check(hits >= 2, || format!("upstream was called {hits} times"))?;

    for entry in walk(dir.path()) {
        if let Ok(bytes) = std::fs::read(&entry) {
            captured.push(String::from_utf8_lossy(&bytes).to_string());
        }
    }
    let leaks = captured.text.iter().filter(|t| t.contains(SECRET) || t.contains(&SECRET[3..])).count();
    check(leaks == 0, || format!("API key found in {leaks} captured outputs"))?;
    Ok(format!("{summary}; key absent from {} captured outputs", captured.text.len()))
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if let Ok(entries) = std::fs::read_dir(&p) {
            for e in entries.flatten() {
                let path = e.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(path);
                }
            }
        }
    }
    out
}
