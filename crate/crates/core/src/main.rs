use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use campusqa::config::{AppConfig, LlmConfig, ProviderConfig};
use campusqa::corpus::{ingest, CleaningRules, InputFormat, Label, QAPair};
use campusqa::evalharness::{load_testcases, run_eval, write_report, EvalConfig, ReportFormat, TestCase};
use campusqa::jsonl::{read_jsonl, write_jsonl};
use campusqa::metrics::{
    bleu, meteor, perplexity, rouge_l, rouge_n, train_bigram_lm, BleuConfig, MeteorConfig, MetricKind,
};
use campusqa::rag::RagPipeline;
use campusqa::server::{serve, ServerState};
use campusqa::topicfilter::{
    default_seed_keywords, fit_lda, normalize_seed_keywords, parse_stoplist, partition_by_topic, prepare_docs,
    LdaConfig, SeedKeywords, TopicReport,
};
use campusqa::usefulness::{
    embed_examples, evaluate_embedded, stratified_split, train_classifier, ClassifierKind, ClassifierModel,
    LabeledExample, TrainConfig, Usefulness,
};
use campusqa::vectorstore::{build_index, load_index, save_index, DocInput, EmbedText};
use campusqa::TokenSeq;

type AnyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser)]
#[command(name = "campusqa", version, about = "Retrieval-augmented Q&A over campus community corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and expand crawler exports into QA pairs.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// jsonl or csv; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<InputFormat>,
        /// Cleaning rules (TOML or JSON).
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Output directory for qapairs.jsonl and rejects.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split QA pairs into academic / living / other with LDA.
    FilterTopics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to 50 / k.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        /// Seed keywords per class (TOML or JSON map: academic = [...], living = [...]).
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Stop words, one per line.
        #[arg(long)]
        stoplist: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top_n: usize,
    },
    /// Train a usefulness classifier on labeled QA pairs.
    TrainFilter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "local_hash")]
        provider: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::LinearLogistic)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = TextField::Question)]
        text: TextField,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Keep the QA pairs a trained classifier predicts useful.
    ApplyFilter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TextField::Question)]
        text: TextField,
        /// Pairs predicted useful.
        #[arg(long)]
        out: PathBuf,
        /// Pairs predicted not useful.
        #[arg(long)]
        rejected: Option<PathBuf>,
        /// Agreement with existing labels, as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Embed QA pairs and write a vector index.
    Index {
        #[arg(long)]
        input: PathBuf,
        /// local_hash[:dim]; use --config for a remote provider.
        #[arg(long, default_value = "local_hash")]
        provider: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EmbedTextArg::Qa)]
        embed_text: EmbedTextArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypothesis lines against reference lines.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_metric,
              default_value = "bleu,rouge1,rouge2,rougeL,ppl,meteor")]
        metrics: Vec<MetricKind>,
        /// Text for the perplexity language model; defaults to the references.
        #[arg(long)]
        lm_corpus: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the pipeline over test cases and report the metrics.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        llm: Option<LlmArg>,
        /// Answer text for --llm mock_fixed.
        #[arg(long)]
        fixed_text: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, default_value_t = 30_000)]
        case_timeout_ms: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        md: Option<PathBuf>,
    },
    /// Serve the chat API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Without an index every chat request answers 503.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        llm: Option<LlmArg>,
        #[arg(long)]
        fixed_text: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    LinearLogistic,
    Knn,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextField {
    Question,
    Answer,
    Qa,
}

impl TextField {
    fn of(self, p: &QAPair) -> String {
        match self {
            TextField::Question => p.question.clone(),
            TextField::Answer => p.answer.clone(),
            TextField::Qa => format!("{}\n{}", p.question, p.answer),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedTextArg {
    Qa,
    Question,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LlmArg {
    MockEcho,
    MockFixed,
    Remote,
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).ok_or_else(|| {
        let valid: Vec<&str> = MetricKind::ALL.iter().map(|m| m.name()).collect();
        format!("unknown metric {s:?}; valid metrics: {}", valid.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), AnyError> {
    match command {
        Command::Ingest {
            input,
            format,
            rules,
            out,
        } => cmd_ingest(&input, format, rules.as_deref(), &out),
        Command::FilterTopics {
            input,
            out,
            k,
            iters,
            seed,
            alpha,
            beta,
            keywords,
            stoplist,
            top_n,
        } => {
            let lda = LdaConfig {
                k,
                iterations: iters,
                alpha: alpha.unwrap_or(50.0 / k.max(1) as f64),
                beta,
                seed,
            };
            cmd_filter_topics(&input, &out, &lda, keywords.as_deref(), stoplist.as_deref(), top_n)
        }
        Command::TrainFilter {
            input,
            provider,
            config,
            kind,
            text,
            epochs,
            lr,
            l2,
            seed,
            k,
            threshold,
            test_fraction,
            model,
            report,
        } => {
            let train = TrainConfig {
                kind: match kind {
                    KindArg::LinearLogistic => ClassifierKind::LinearLogistic,
                    KindArg::Knn => ClassifierKind::Knn,
                },
                epochs,
                learning_rate: lr,
                l2,
                seed,
                k,
                threshold,
            };
            let provider = provider_config(&provider, config.as_deref())?;
            cmd_train_filter(&input, &provider, text, &train, test_fraction, &model, report.as_deref())
        }
        Command::ApplyFilter {
            input,
            model,
            config,
            text,
            out,
            rejected,
            report,
        } => cmd_apply_filter(&input, &model, config.as_deref(), text, &out, rejected.as_deref(), report.as_deref()),
        Command::Index {
            input,
            provider,
            config,
            embed_text,
            out,
        } => {
            let provider = provider_config(&provider, config.as_deref())?;
            let embed_text = match embed_text {
                EmbedTextArg::Qa => EmbedText::QuestionAndAnswer,
                EmbedTextArg::Question => EmbedText::QuestionOnly,
            };
            cmd_index(&input, &provider, embed_text, &out)
        }
        Command::Score {
            hyp,
            reference,
            metrics,
            lm_corpus,
            json,
        } => cmd_score(&hyp, &reference, &metrics, lm_corpus.as_deref(), json),
        Command::Eval {
            cases,
            index,
            config,
            llm,
            fixed_text,
            k,
            parallelism,
            case_timeout_ms,
            report,
            md,
        } => {
            let app = app_config(config.as_deref(), llm, fixed_text, k)?;
            cmd_eval(&cases, &index, &app, parallelism, case_timeout_ms, report.as_deref(), md.as_deref())
        }
        Command::Serve {
            port,
            host,
            index,
            config,
            llm,
            fixed_text,
        } => {
            let app = app_config(config.as_deref(), llm, fixed_text, None)?;
            cmd_serve(&host, port, index.as_deref(), &app)
        }
    }
}

fn read_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AnyError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    };
    Ok(parsed)
}

fn provider_config(short: &str, config: Option<&Path>) -> Result<ProviderConfig, AnyError> {
    if let Some(path) = config {
        if let Some(p) = AppConfig::load(path)?.provider {
            return Ok(p);
        }
    }
    Ok(ProviderConfig::parse_short(short)?)
}

fn app_config(
    path: Option<&Path>,
    llm: Option<LlmArg>,
    fixed_text: Option<String>,
    k: Option<usize>,
) -> Result<AppConfig, AnyError> {
    let mut app = match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    match llm {
        Some(LlmArg::MockEcho) => app.llm = LlmConfig::MockEcho,
        Some(LlmArg::MockFixed) => {
            let text = fixed_text
                .or_else(|| match &app.llm {
                    LlmConfig::MockFixed { text } => Some(text.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| "OK".to_string());
            app.llm = LlmConfig::MockFixed { text };
        }
        Some(LlmArg::Remote) => {
            if !matches!(app.llm, LlmConfig::Remote { .. }) {
                return Err("--llm remote needs an [llm] section with kind = \"remote\" in --config".into());
            }
        }
        None => {}
    }
    if let Some(k) = k {
        app.k = k;
    }
    Ok(app)
}

fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => InputFormat::Csv,
        _ => InputFormat::Jsonl,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), AnyError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AnyError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<QAPair>, AnyError> {
    read_jsonl(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn cmd_ingest(input: &Path, format: Option<InputFormat>, rules: Option<&Path>, out: &Path) -> Result<(), AnyError> {
    let rules: CleaningRules = match rules {
        Some(p) => read_config_file(p)?,
        None => CleaningRules::default(),
    };
    let cleaner = rules.compile()?;
    let file = File::open(input).map_err(|e| format!("cannot open {}: {e}", input.display()))?;
    let outcome = ingest(BufReader::new(file), format.unwrap_or_else(|| guess_format(input)), &cleaner)?;
    std::fs::create_dir_all(out)?;
    write_jsonl(&out.join("qapairs.jsonl"), &outcome.pairs)?;
    write_jsonl(&out.join("rejects.jsonl"), &outcome.rejects)?;

    #[derive(Serialize)]
    struct Summary {
        records_read: usize,
        records_kept: usize,
        pairs: usize,
        rejects: usize,
    }
    print_json(&Summary {
        records_read: outcome.records_read,
        records_kept: outcome.records_kept,
        pairs: outcome.pairs.len(),
        rejects: outcome.rejects.len(),
    })
}

fn cmd_filter_topics(
    input: &Path,
    out: &Path,
    lda: &LdaConfig,
    keywords: Option<&Path>,
    stoplist: Option<&Path>,
    top_n: usize,
) -> Result<(), AnyError> {
    let pairs = read_pairs(input)?;
    let stoplist: HashSet<String> = match stoplist {
        Some(p) => parse_stoplist(&std::fs::read_to_string(p)?),
        None => HashSet::new(),
    };
    let keywords: SeedKeywords = match keywords {
        Some(p) => normalize_seed_keywords(read_config_file(p)?),
        None => default_seed_keywords(),
    };
    let docs = prepare_docs(&pairs, &stoplist);
    let model = fit_lda(&docs, lda)?;
    let partition = partition_by_topic(&model, pairs, &keywords)?;
    let report = TopicReport::new(&model, &partition, top_n);

    std::fs::create_dir_all(out)?;
    write_jsonl(&out.join("academic.jsonl"), &partition.academic)?;
    write_jsonl(&out.join("living.jsonl"), &partition.living)?;
    write_jsonl(&out.join("other.jsonl"), &partition.other)?;
    write_json(&out.join("topic_report.json"), &report)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "academic {} living {} other {} low-confidence {}",
        partition.academic.len(),
        partition.living.len(),
        partition.other.len(),
        partition.low_confidence.len()
    );
    Ok(())
}

fn labeled_examples(pairs: &[QAPair], text: TextField) -> Vec<LabeledExample> {
    pairs
        .iter()
        .filter_map(|p| {
            let label = match p.label {
                Label::Useful => Usefulness::Useful,
                Label::NotUseful => Usefulness::NotUseful,
                Label::Unlabeled => return None,
            };
            Some(LabeledExample { text: text.of(p), label })
        })
        .collect()
}

fn cmd_train_filter(
    input: &Path,
    provider: &ProviderConfig,
    text: TextField,
    train: &TrainConfig,
    test_fraction: f64,
    model_path: &Path,
    report_path: Option<&Path>,
) -> Result<(), AnyError> {
    let pairs = read_pairs(input)?;
    let examples = labeled_examples(&pairs, text);
    let (train_set, test_set) = stratified_split(&examples, |e| e.label, test_fraction, train.seed);
    let provider = provider.build()?;
    let embedded_train = embed_examples(&train_set, provider.as_ref())?;
    let model = train_classifier(&embedded_train, train)?;
    model.save(model_path)?;

    #[derive(Serialize)]
    struct TrainReport {
        n_labeled: usize,
        n_train: usize,
        n_test: usize,
        provider_id: String,
        test: Option<campusqa::usefulness::ClassifierReport>,
    }
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate_embedded(&model, &embed_examples(&test_set, provider.as_ref())?)?)
    };
    let report = TrainReport {
        n_labeled: examples.len(),
        n_train: train_set.len(),
        n_test: test_set.len(),
        provider_id: provider.provider_id().to_string(),
        test,
    };
    match report_path {
        Some(p) => write_json(p, &report),
        None => print_json(&report),
    }
}

fn cmd_apply_filter(
    input: &Path,
    model_path: &Path,
    config: Option<&Path>,
    text: TextField,
    out: &Path,
    rejected: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<(), AnyError> {
    let model = ClassifierModel::load(model_path)?;
    let app = match config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let provider = app.provider_for(&model.provider_id)?.build()?;
    let pairs = read_pairs(input)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for pair in pairs {
        let v = provider.embed(&text.of(&pair))?;
        if model.predict(&v)?.label == Usefulness::Useful {
            kept.push(pair);
        } else {
            dropped.push(pair);
        }
    }
    write_jsonl(out, &kept)?;
    if let Some(p) = rejected {
        write_jsonl(p, &dropped)?;
    }
    if let Some(p) = report_path {
        let all: Vec<QAPair> = kept.iter().chain(&dropped).cloned().collect();
        let labeled = labeled_examples(&all, text);
        let report = evaluate_embedded(&model, &embed_examples(&labeled, provider.as_ref())?)?;
        write_json(p, &report)?;
    }
    println!("kept {} dropped {}", kept.len(), dropped.len());
    Ok(())
}

fn cmd_index(input: &Path, provider: &ProviderConfig, embed_text: EmbedText, out: &Path) -> Result<(), AnyError> {
    let pairs = read_pairs(input)?;
    let docs: Vec<DocInput> = pairs.iter().map(DocInput::from).collect();
    let provider = provider.build()?;
    let index = build_index(&docs, provider.as_ref(), embed_text)?;
    save_index(&index, out)?;
    println!(
        "indexed {} documents, dimension {}, provider {}",
        index.len(),
        index.dimension(),
        index.provider_id()
    );
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, AnyError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn cmd_score(
    hyp: &Path,
    reference: &Path,
    metrics: &[MetricKind],
    lm_corpus: Option<&Path>,
    json: bool,
) -> Result<(), AnyError> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    if hyps.len() != refs.len() {
        return Err(format!("{} hypothesis lines but {} reference lines", hyps.len(), refs.len()).into());
    }
    let lm = if metrics.contains(&MetricKind::Ppl) {
        let corpus = match lm_corpus {
            Some(p) => read_lines(p)?,
            None => refs.clone(),
        };
        let seqs: Vec<TokenSeq> = corpus.iter().map(|l| TokenSeq::new(l)).filter(|s| !s.is_empty()).collect();
        Some(train_bigram_lm(&seqs)?)
    } else {
        None
    };
    let bleu_cfg = BleuConfig::default();
    let meteor_cfg = MeteorConfig::default();

    #[derive(Serialize)]
    struct Row {
        line: usize,
        scores: std::collections::BTreeMap<&'static str, f64>,
    }
    let mut rows = Vec::new();
    for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
        let h = TokenSeq::new(h);
        let r = TokenSeq::new(r);
        let mut scores = std::collections::BTreeMap::new();
        for m in metrics {
            let value = match m {
                MetricKind::Bleu => bleu(&h, std::slice::from_ref(&r), &bleu_cfg).map(|b| b.score),
                MetricKind::Rouge1 => rouge_n(&h, &r, 1).map(|s| s.f),
                MetricKind::Rouge2 => rouge_n(&h, &r, 2).map(|s| s.f),
                MetricKind::RougeL => rouge_l(&h, &r, 1.0).map(|s| s.f),
                MetricKind::Ppl => perplexity(&h, lm.as_ref().expect("trained above")),
                MetricKind::Meteor => meteor(&h, &r, &meteor_cfg).map(|s| s.score),
            }
            .map_err(|e| format!("line {}: {}: {e}", i + 1, m.name()))?;
            scores.insert(m.name(), value);
        }
        rows.push(Row { line: i + 1, scores });
    }
    let mut means = std::collections::BTreeMap::new();
    for m in metrics {
        let sum: f64 = rows.iter().map(|r| r.scores[m.name()]).sum();
        means.insert(m.name(), if rows.is_empty() { 0.0 } else { sum / rows.len() as f64 });
    }

    if json {
        #[derive(Serialize)]
        struct ScoreReport<'a> {
            n: usize,
            per_pair: &'a [Row],
            means: &'a std::collections::BTreeMap<&'static str, f64>,
        }
        print_json(&ScoreReport {
            n: rows.len(),
            per_pair: &rows,
            means: &means,
        })
    } else {
        for m in metrics {
            println!("{:<8} {:.6}", m.name(), means[m.name()]);
        }
        Ok(())
    }
}

fn build_pipeline(index_path: &Path, app: &AppConfig) -> Result<RagPipeline, AnyError> {
    let index = load_index(index_path).map_err(|e| format!("{}: {e}", index_path.display()))?;
    let provider = app.provider_for(index.provider_id())?.build()?;
    let rag = app.rag_config()?;
    let llm = app.llm.build(rag.template.system_preamble())?;
    Ok(RagPipeline::new(Arc::new(index), provider, llm, rag)?)
}

fn cmd_eval(
    cases_path: &Path,
    index_path: &Path,
    app: &AppConfig,
    parallelism: usize,
    case_timeout_ms: u64,
    report: Option<&Path>,
    md: Option<&Path>,
) -> Result<(), AnyError> {
    let cases = load_testcases(cases_path).map_err(|e| format!("{}: {e}", cases_path.display()))?;
    let pipeline = build_pipeline(index_path, app)?;
    let corpus: Vec<TokenSeq> = pipeline
        .index()
        .docs()
        .iter()
        .map(|d| TokenSeq::new(&d.answer))
        .filter(|s| !s.is_empty())
        .collect();
    let lm = train_bigram_lm(&corpus)?;

    let mut cfg = EvalConfig {
        parallelism,
        case_timeout_ms,
        ..EvalConfig::default()
    };
    cfg.labels.insert("llm".into(), pipeline.llm().client_id().to_string());
    cfg.labels.insert("provider".into(), pipeline.index().provider_id().to_string());
    cfg.labels.insert("k".into(), pipeline.config().k.to_string());
    cfg.labels.insert("index_docs".into(), pipeline.index().len().to_string());
    cfg.labels.insert("template".into(), pipeline.config().template.template().to_string());

    let runner = pipeline.clone();
    let result = run_eval(
        &cases,
        move |c: &TestCase| runner.answer(&c.case_id, &c.question).map(|t| t.answer).map_err(|e| e.to_string()),
        &cfg,
        &lm,
    )?;
    if let Some(p) = report {
        write_report(&result, p, ReportFormat::Json)?;
    }
    if let Some(p) = md {
        write_report(&result, p, ReportFormat::Markdown)?;
    }
    let m = &result.means;
    println!(
        "cases {} failed {} | BLEU {:.4} ROUGE-1 {:.4} ROUGE-2 {:.4} ROUGE-L {:.4} PPL {:.4} METEOR {:.4}",
        result.n_cases, result.n_failed, m.bleu, m.rouge1.f, m.rouge2.f, m.rouge_l.f, m.perplexity, m.meteor
    );
    Ok(())
}

fn cmd_serve(host: &str, port: u16, index: Option<&Path>, app: &AppConfig) -> Result<(), AnyError> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .with_target(false)
        .init();
    // Blocking HTTP clients must be created outside the async runtime.
    let pipeline = match index {
        Some(p) => Some(build_pipeline(p, app)?),
        None => None,
    };
    let state = Arc::new(ServerState::new(pipeline, app.server.clone()));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let served = runtime.block_on({
        let state = Arc::clone(&state);
        async move {
            let listener = tokio::net::TcpListener::bind((host, port)).await?;
            let addr = listener.local_addr()?;
            {
                let mut out = std::io::stdout().lock();
                writeln!(out, "listening on http://{addr}")?;
                out.flush()?;
            }
            tracing::info!(%addr, docs = state.pipeline().map_or(0, |p| p.index().len()), "server started");
            serve(listener, state, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
        }
    });
    drop(runtime);
    drop(state);
    Ok(served?)
}
