//! Evaluation harness: load test cases, answer each one, score the answers
//! against the references and aggregate.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{
    bleu, meteor, perplexity, rouge_l, rouge_n, BigramLM, BleuConfig, MeteorConfig, MetricError, PrfScore,
};
use crate::text::TokenSeq;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read test cases: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate case_id {case_id:?} on line {line}")]
    DuplicateCase { case_id: String, line: usize },
    #[error("no test cases")]
    NoCases,
    #[error("all {0} cases failed")]
    AllFailed(usize),
    #[error("invalid metric configuration: {0}")]
    Config(#[from] MetricError),
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub question: String,
    pub reference_answer: String,
}

/// Parse JSONL test cases. CR before LF is ignored and blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn parse_testcases(text: &str) -> Result<Vec<TestCase>, EvalError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut seen = HashSet::new();
    let mut cases = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let case: TestCase = serde_json::from_str(line).map_err(|e| EvalError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        for (field, value) in [
            ("case_id", &case.case_id),
            ("question", &case.question),
            ("reference_answer", &case.reference_answer),
        ] {
            if value.trim().is_empty() {
                return Err(EvalError::Malformed {
                    line: line_no,
                    message: format!("{field} is empty"),
                });
            }
        }
        if !seen.insert(case.case_id.clone()) {
            return Err(EvalError::DuplicateCase {
                case_id: case.case_id,
                line: line_no,
            });
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_testcases(path: &Path) -> Result<Vec<TestCase>, EvalError> {
    parse_testcases(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bleu: BleuConfig,
    pub rouge_l_beta: f64,
    pub meteor: MeteorConfig,
    /// Cases answered at the same time.
    pub parallelism: usize,
    /// Per-case limit on answering; a case over the limit is recorded as a
    /// failure.
    pub case_timeout_ms: u64,
    /// Extra settings to fold into the fingerprint (LLM, index, ...).
    pub labels: BTreeMap<String, String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bleu: BleuConfig::default(),
            rouge_l_beta: 1.0,
            meteor: MeteorConfig::default(),
            parallelism: 1,
            case_timeout_ms: 30_000,
            labels: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub bleu: f64,
    pub rouge1: PrfScore,
    pub rouge2: PrfScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: PrfScore,
    pub perplexity: f64,
    pub meteor: f64,
    pub answer_len: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub bleu: f64,
    pub rouge1: PrfScore,
    pub rouge2: PrfScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: PrfScore,
    pub perplexity: f64,
    pub meteor: f64,
    pub answer_len: f64,
    pub ref_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_cases: usize,
    pub n_failed: usize,
    /// Successful cases, in input order.
    pub per_case: Vec<CaseScores>,
    pub failures: Vec<CaseFailure>,
    pub means: MeanScores,
    pub config_fingerprint: String,
}

/// Score one answer against its reference with every metric.
pub fn score_case(
    case_id: &str,
    answer: &str,
    reference: &str,
    cfg: &EvalConfig,
    lm: &BigramLM,
) -> Result<CaseScores, MetricError> {
    let hyp = TokenSeq::new(answer);
    let reference = TokenSeq::new(reference);
    if hyp.is_empty() {
        return Err(MetricError::EmptyHypothesis);
    }
    let refs = std::slice::from_ref(&reference);
    Ok(CaseScores {
        case_id: case_id.to_string(),
        bleu: bleu(&hyp, refs, &cfg.bleu)?.score,
        rouge1: rouge_n(&hyp, &reference, 1)?,
        rouge2: rouge_n(&hyp, &reference, 2)?,
        rouge_l: rouge_l(&hyp, &reference, cfg.rouge_l_beta)?,
        perplexity: perplexity(&hyp, lm)?,
        meteor: meteor(&hyp, &reference, &cfg.meteor)?.score,
        answer_len: hyp.len(),
        ref_len: reference.len(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_prf<'a>(rows: &'a [CaseScores], pick: impl Fn(&'a CaseScores) -> &'a PrfScore) -> PrfScore {
    PrfScore {
        recall: mean(rows.iter().map(|r| pick(r).recall)),
        precision: mean(rows.iter().map(|r| pick(r).precision)),
        f: mean(rows.iter().map(|r| pick(r).f)),
    }
}

pub fn mean_scores(rows: &[CaseScores]) -> MeanScores {
    MeanScores {
        bleu: mean(rows.iter().map(|r| r.bleu)),
        rouge1: mean_prf(rows, |r| &r.rouge1),
        rouge2: mean_prf(rows, |r| &r.rouge2),
        rouge_l: mean_prf(rows, |r| &r.rouge_l),
        perplexity: mean(rows.iter().map(|r| r.perplexity)),
        meteor: mean(rows.iter().map(|r| r.meteor)),
        answer_len: mean(rows.iter().map(|r| r.answer_len as f64)),
        ref_len: mean(rows.iter().map(|r| r.ref_len as f64)),
    }
}

/// SHA-256 over the metric configuration, the labels and the language
/// model's size, as lowercase hex.
pub fn config_fingerprint(cfg: &EvalConfig, lm: &BigramLM) -> Result<String, EvalError> {
    #[derive(Serialize)]
    struct Fingerprinted<'a> {
        bleu: &'a BleuConfig,
        rouge_l_beta: f64,
        meteor: &'a MeteorConfig,
        labels: &'a BTreeMap<String, String>,
        lm_vocab: usize,
        lm_bigrams: u64,
    }
    let bytes = serde_json::to_vec(&Fingerprinted {
        bleu: &cfg.bleu,
        rouge_l_beta: cfg.rouge_l_beta,
        meteor: &cfg.meteor,
        labels: &cfg.labels,
        lm_vocab: lm.vocab_size(),
        lm_bigrams: lm.total_bigrams(),
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

enum Outcome {
    Scored(CaseScores),
    Failed(String),
}

/// Answer a case on a helper thread and wait at most `timeout`. A case that
/// runs over is abandoned and its thread left to finish on its own.
fn answer_with_timeout<F>(answer_fn: &Arc<F>, case: &TestCase, timeout: Duration) -> Result<String, String>
where
    F: Fn(&TestCase) -> Result<String, String> + Send + Sync + 'static,
{
    let (tx, rx) = mpsc::channel();
    let f = Arc::clone(answer_fn);
    let case = case.clone();
    std::thread::spawn(move || {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&case)))
            .unwrap_or_else(|_| Err("answer function panicked".to_string()));
        let _ = tx.send(result);
    });
    match rx.recv_timeout(timeout) {
        Ok(result) => result,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(format!("timed out after {} ms", timeout.as_millis())),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err("answer function exited without a result".to_string()),
    }
}

/// Answer every case once and score it. Failing cases are recorded and
/// excluded from the means; the run fails only if every case fails.
pub fn run_eval<F>(cases: &[TestCase], answer_fn: F, cfg: &EvalConfig, lm: &BigramLM) -> Result<MetricReport, EvalError>
where
    F: Fn(&TestCase) -> Result<String, String> + Send + Sync + 'static,
{
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    cfg.bleu.validate()?;
    cfg.meteor.validate()?;
    if !(cfg.rouge_l_beta > 0.0 && cfg.rouge_l_beta.is_finite()) {
        return Err(MetricError::InvalidConfig("rouge_l_beta must be positive".into()).into());
    }
    let config_fingerprint = config_fingerprint(cfg, lm)?;

    let answer_fn = Arc::new(answer_fn);
    let timeout = Duration::from_millis(cfg.case_timeout_ms.max(1));
    let outcomes: Vec<Mutex<Option<Outcome>>> = cases.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.parallelism.clamp(1, cases.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(case) = cases.get(i) else { break };
                let outcome = match answer_with_timeout(&answer_fn, case, timeout) {
                    Err(e) => Outcome::Failed(e),
                    Ok(answer) => match score_case(&case.case_id, &answer, &case.reference_answer, cfg, lm) {
                        Ok(scores) => Outcome::Scored(scores),
                        Err(e) => Outcome::Failed(format!("scoring failed: {e}")),
                    },
                };
                *outcomes[i].lock().expect("outcome slot") = Some(outcome);
            });
        }
    });

    let mut per_case = Vec::new();
    let mut failures = Vec::new();
    for (case, slot) in cases.iter().zip(outcomes) {
        match slot.into_inner().expect("outcome slot").expect("every case is answered") {
            Outcome::Scored(s) => per_case.push(s),
            Outcome::Failed(error) => failures.push(CaseFailure {
                case_id: case.case_id.clone(),
                error,
            }),
        }
    }
    if per_case.is_empty() {
        return Err(EvalError::AllFailed(cases.len()));
    }
    Ok(MetricReport {
        n_cases: cases.len(),
        n_failed: failures.len(),
        means: mean_scores(&per_case),
        per_case,
        failures,
        config_fingerprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render_json(report: &MetricReport) -> Result<String, EvalError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn render_markdown(report: &MetricReport) -> String {
    let m = &report.means;
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    out.push_str(&format!(
        "Cases: {} scored, {} failed. Config fingerprint: `{}`\n\n",
        report.per_case.len(),
        report.n_failed,
        report.config_fingerprint
    ));
    out.push_str("| Metric | Value |\n|---|---|\n");
    for (name, value) in [
        ("BLEU", m.bleu),
        ("Perplexity", m.perplexity),
        ("ROUGE-1 F", m.rouge1.f),
        ("ROUGE-2 F", m.rouge2.f),
        ("ROUGE-L F", m.rouge_l.f),
        ("METEOR", m.meteor),
    ] {
        out.push_str(&format!("| {name} | {value:.4} |\n"));
    }
    out.push_str(&format!(
        "\nMean answer length {:.2} tokens, mean reference length {:.2} tokens.\n",
        m.answer_len, m.ref_len
    ));
    out.push_str("\n## Per case\n\n");
    out.push_str("| Case | BLEU | ROUGE-1 F | ROUGE-2 F | ROUGE-L F | Perplexity | METEOR | Answer len | Ref len |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &report.per_case {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} |\n",
            escape_cell(&r.case_id),
            r.bleu,
            r.rouge1.f,
            r.rouge2.f,
            r.rouge_l.f,
            r.perplexity,
            r.meteor,
            r.answer_len,
            r.ref_len
        ));
    }
    if !report.failures.is_empty() {
        out.push_str("\n## Failures\n\n");
        for f in &report.failures {
            out.push_str(&format!("- `{}`: {}\n", f.case_id, f.error.replace('\n', " ")));
        }
    }
    out
}

fn escape_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn write_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::Json => render_json(report)?,
        ReportFormat::Markdown => render_markdown(report),
    };
    std::fs::write(path, text)?;
    Ok(())
}
