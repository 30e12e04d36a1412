//! Ingestion and cleaning of exported community posts.
//!
//! A crawler export is a list of [`RawRecord`]s, one per post, each carrying
//! the ordered list of replies it received. Cleaning happens in two passes:
//! [`Cleaner::clean`] drops whole posts (initials-only names, missing values)
//! and [`Cleaner::expand_answers`] flattens each surviving post into one
//! [`QAPair`] per useful-looking reply. Nothing is dropped silently: every
//! row, post or reply that does not make it through is reported as a
//! [`Rejection`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("no well-formed records in input ({rejected} rows rejected)")]
    EmptyDataset { rejected: usize },
    #[error("invalid cleaning rules: {0}")]
    InvalidRules(String),
    #[error("unknown input format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Board {
    Broly,
    Freshmen,
    InsaCampus,
    Other,
}

impl Board {
    /// Unrecognised board names map to [`Board::Other`].
    pub fn parse_lenient(name: &str) -> Board {
        match name.trim().to_ascii_lowercase().as_str() {
            "broly" => Board::Broly,
            "freshmen" => Board::Freshmen,
            "insa_campus" => Board::InsaCampus,
            _ => Board::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Board::Broly => "broly",
            Board::Freshmen => "freshmen",
            Board::InsaCampus => "insa_campus",
            Board::Other => "other",
        }
    }
}

/// One exported post with its replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub board: Board,
    pub title: String,
    pub body: String,
    /// ISO-8601 calendar date, normalised to `YYYY-MM-DD`.
    pub date: String,
    pub likes: u64,
    pub scraps: u64,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Useful,
    NotUseful,
    #[default]
    Unlabeled,
}

/// One question with one of its replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub record_id: String,
    pub answer_index: usize,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub board: Option<Board>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

impl QAPair {
    /// Stable identifier `record_id#answer_index`.
    pub fn doc_id(&self) -> String {
        format!("{}#{}", self.record_id, self.answer_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Clean,
    Expand,
}

/// Why a row, record or answer did not survive. Written to `rejects.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    pub reason: String,
}

pub const REASON_INITIALS: &str = "initials-only name";
pub const REASON_MISSING: &str = "missing value";
pub const REASON_STOP_ANSWER: &str = "stop answer";
pub const REASON_TOO_SHORT: &str = "too short";
pub const REASON_PUNCTUATION: &str = "punctuation only";
pub const REASON_QUESTION_REPLY: &str = "question reply";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Jsonl => "jsonl",
            InputFormat::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub records: Vec<RawRecord>,
    pub rejects: Vec<Rejection>,
}

const FIELDS: [&str; 8] = [
    "id", "board", "title", "body", "date", "likes", "scraps", "answers",
];

/// Read records from a JSONL or CSV export.
///
/// Malformed rows end up in [`LoadOutcome::rejects`]; the call only fails
/// when the stream cannot be read or not a single row is usable.
pub fn load_records<R: Read>(mut source: R, format: InputFormat) -> Result<LoadOutcome, CorpusError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let rows = match format {
        InputFormat::Jsonl => jsonl_rows(&text),
        InputFormat::Csv => csv_rows(&text)?,
    };

    let mut outcome = LoadOutcome::default();
    let mut seen = HashSet::new();
    for (line, row) in rows {
        let parsed = row.and_then(|value| record_from_value(&value));
        match parsed {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    outcome.records.push(record);
                } else {
                    outcome.rejects.push(Rejection {
                        stage: Stage::Load,
                        line: Some(line),
                        reason: format!("duplicate id {}", record.id),
                        record_id: Some(record.id),
                        answer_index: None,
                    });
                }
            }
            Err(reason) => outcome.rejects.push(Rejection {
                stage: Stage::Load,
                line: Some(line),
                record_id: None,
                answer_index: None,
                reason,
            }),
        }
    }

    if outcome.records.is_empty() {
        return Err(CorpusError::EmptyDataset {
            rejected: outcome.rejects.len(),
        });
    }
    Ok(outcome)
}

type Row = (usize, Result<Value, String>);

fn jsonl_rows(text: &str) -> Vec<Row> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let value = serde_json::from_str::<Value>(l.trim_end_matches('\r'))
                .map_err(|e| format!("invalid json: {e}"));
            (i + 1, value)
        })
        .collect()
}

fn csv_rows(text: &str) -> Result<Vec<Row>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut rows = Vec::new();
    for result in reader.records() {
        match result {
            Ok(record) => {
                let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
                rows.push((line, csv_row_to_value(&headers, &record)));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                rows.push((line, Err(format!("invalid csv: {e}"))));
            }
        }
    }
    Ok(rows)
}

fn csv_row_to_value(headers: &[String], record: &csv::StringRecord) -> Result<Value, String> {
    let mut map = Map::new();
    for (header, cell) in headers.iter().zip(record.iter()) {
        let value = match header.as_str() {
            "likes" | "scraps" => match cell.trim().parse::<i64>() {
                Ok(n) => Value::from(n),
                Err(_) => Value::String(cell.to_string()),
            },
            "answers" => {
                if cell.trim().is_empty() {
                    Value::Array(Vec::new())
                } else {
                    serde_json::from_str(cell)
                        .map_err(|e| format!("invalid field answers: {e}"))?
                }
            }
            _ => Value::String(cell.to_string()),
        };
        map.insert(header.clone(), value);
    }
    Ok(Value::Object(map))
}

fn record_from_value(value: &Value) -> Result<RawRecord, String> {
    let obj = value
        .as_object()
        .ok_or_else(|| "not a JSON object".to_string())?;
    if let Some(missing) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(format!("missing field {missing}"));
    }

    let id = match &obj["id"] {
        Value::String(s) if !s.trim().is_empty() => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        _ => return Err("invalid field id: expected non-empty string".into()),
    };
    let board = match &obj["board"] {
        Value::String(s) => Board::parse_lenient(s),
        Value::Null => Board::Other,
        _ => return Err("invalid field board: expected string".into()),
    };
    let title = optional_text(&obj["title"], "title")?;
    let body = optional_text(&obj["body"], "body")?;
    let date = match &obj["date"] {
        Value::String(s) => normalize_date(s).ok_or_else(|| format!("invalid field date: {s:?}"))?,
        _ => return Err("invalid field date: expected ISO-8601 string".into()),
    };
    let likes = count_field(&obj["likes"], "likes")?;
    let scraps = count_field(&obj["scraps"], "scraps")?;
    let answers = match &obj["answers"] {
        Value::Null => Vec::new(),
        Value::Array(items) => items
            .iter()
            .map(|a| match a {
                Value::String(s) => Ok(s.clone()),
                Value::Null => Ok(String::new()),
                _ => Err("invalid field answers: expected list of strings".to_string()),
            })
            .collect::<Result<_, _>>()?,
        _ => return Err("invalid field answers: expected list of strings".into()),
    };

    Ok(RawRecord {
        id,
        board,
        title,
        body,
        date,
        likes,
        scraps,
        answers,
    })
}

fn optional_text(value: &Value, field: &str) -> Result<String, String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Ok(String::new()),
        _ => Err(format!("invalid field {field}: expected string")),
    }
}

fn count_field(value: &Value, field: &str) -> Result<u64, String> {
    value
        .as_u64()
        .ok_or_else(|| format!("invalid field {field}: expected non-negative integer"))
}

fn normalize_date(s: &str) -> Option<String> {
    let s = s.trim();
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.format("%Y-%m-%d").to_string());
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.date_naive().format("%Y-%m-%d").to_string());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.date().format("%Y-%m-%d").to_string());
        }
    }
    None
}

/// Default honorific-plus-initials pattern: an honorific followed by two or
/// three capital letters, or two or three capitals followed by `교수`.
pub const DEFAULT_INITIALS_PATTERN: &str =
    r"(?:\bProf\.?|\bProfessor|교수님?)\s*[A-Z]{2,3}\b|\b[A-Z]{2,3}\s*교수";

/// User-editable cleaning configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    pub initials_pattern: String,
    /// Compared after trimming and lowercasing.
    pub stop_answers: BTreeSet<String>,
    pub min_answer_chars: usize,
    pub drop_punctuation_only: bool,
    /// Drop replies that end in a question mark. Off by default.
    pub drop_question_replies: bool,
}

impl Default for CleaningRules {
    fn default() -> Self {
        let stop_answers = [
            "thank you",
            "thank you!",
            "thanks",
            "thanks!",
            "thx",
            "?",
            "??",
            "감사합니다",
            "감사합니다!",
            "감사해요",
            "고마워요",
            "ㄳ",
            "ㄱㅅ",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        CleaningRules {
            initials_pattern: DEFAULT_INITIALS_PATTERN.to_string(),
            stop_answers,
            min_answer_chars: 2,
            drop_punctuation_only: true,
            drop_question_replies: false,
        }
    }
}

impl CleaningRules {
    pub fn compile(&self) -> Result<Cleaner, CorpusError> {
        if self.min_answer_chars < 1 {
            return Err(CorpusError::InvalidRules("min_answer_chars must be >= 1".into()));
        }
        let initials = Regex::new(&self.initials_pattern)
            .map_err(|e| CorpusError::InvalidRules(format!("initials_pattern: {e}")))?;
        Ok(Cleaner {
            initials,
            stop_answers: self.stop_answers.iter().map(|s| fold(s)).collect(),
            min_answer_chars: self.min_answer_chars,
            drop_punctuation_only: self.drop_punctuation_only,
            drop_question_replies: self.drop_question_replies,
        })
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Compiled [`CleaningRules`].
#[derive(Debug, Clone)]
pub struct Cleaner {
    initials: Regex,
    stop_answers: HashSet<String>,
    min_answer_chars: usize,
    drop_punctuation_only: bool,
    drop_question_replies: bool,
}

impl Cleaner {
    /// Why `record` would be dropped, if at all.
    pub fn drop_reason(&self, record: &RawRecord) -> Option<&'static str> {
        if record.body.trim().is_empty() {
            Some(REASON_MISSING)
        } else if self.initials.is_match(&record.title) || self.initials.is_match(&record.body) {
            Some(REASON_INITIALS)
        } else {
            None
        }
    }

    /// Split records into those that survive and those that do not.
    /// `kept.len() + dropped.len() == records.len()` always holds.
    pub fn clean(&self, records: Vec<RawRecord>) -> (Vec<RawRecord>, Vec<Rejection>) {
        let mut kept = Vec::with_capacity(records.len());
        let mut dropped = Vec::new();
        for record in records {
            match self.drop_reason(&record) {
                None => kept.push(record),
                Some(reason) => dropped.push(Rejection {
                    stage: Stage::Clean,
                    line: None,
                    record_id: Some(record.id),
                    answer_index: None,
                    reason: reason.to_string(),
                }),
            }
        }
        (kept, dropped)
    }

    pub fn answer_drop_reason(&self, answer: &str) -> Option<&'static str> {
        let trimmed = answer.trim();
        if trimmed.is_empty() {
            return Some(REASON_MISSING);
        }
        if self.stop_answers.contains(&fold(trimmed)) {
            return Some(REASON_STOP_ANSWER);
        }
        if self.drop_punctuation_only && !trimmed.chars().any(char::is_alphanumeric) {
            return Some(REASON_PUNCTUATION);
        }
        if trimmed.chars().count() < self.min_answer_chars {
            return Some(REASON_TOO_SHORT);
        }
        if self.drop_question_replies && trimmed.ends_with(['?', '？']) {
            return Some(REASON_QUESTION_REPLY);
        }
        None
    }

    pub fn expand_answers(&self, record: &RawRecord) -> Vec<QAPair> {
        self.expand_answers_audited(record).0
    }

    /// Like [`Cleaner::expand_answers`], also returning the replies that were
    /// removed.
    pub fn expand_answers_audited(&self, record: &RawRecord) -> (Vec<QAPair>, Vec<Rejection>) {
        let question = question_text(record);
        let mut pairs = Vec::new();
        let mut dropped = Vec::new();
        for (index, answer) in record.answers.iter().enumerate() {
            match self.answer_drop_reason(answer) {
                None => pairs.push(QAPair {
                    record_id: record.id.clone(),
                    answer_index: index,
                    question: question.clone(),
                    answer: answer.trim().to_string(),
                    label: Label::Unlabeled,
                    board: Some(record.board),
                    date: Some(record.date.clone()),
                }),
                Some(reason) => dropped.push(Rejection {
                    stage: Stage::Expand,
                    line: None,
                    record_id: Some(record.id.clone()),
                    answer_index: Some(index),
                    reason: reason.to_string(),
                }),
            }
        }
        (pairs, dropped)
    }
}

/// The question a post asks: title and body on separate lines, or the body
/// alone when the title is empty or repeated at the start of the body.
pub fn question_text(record: &RawRecord) -> String {
    let title = record.title.trim();
    let body = record.body.trim();
    if title.is_empty() || body.starts_with(title) {
        body.to_string()
    } else {
        format!("{title}\n{body}")
    }
}

/// Counts by label, used to check labeling bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub labeled: usize,
    pub useful: usize,
    pub not_useful: usize,
}

impl LabelCounts {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a QAPair>) -> Self {
        let mut counts = LabelCounts::default();
        for pair in pairs {
            match pair.label {
                Label::Useful => counts.useful += 1,
                Label::NotUseful => counts.not_useful += 1,
                Label::Unlabeled => continue,
            }
            counts.labeled += 1;
        }
        counts
    }

    pub fn is_consistent(&self) -> bool {
        self.useful.checked_add(self.not_useful) == Some(self.labeled)
    }
}

/// Result of the whole ingest pass.
#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records_read: usize,
    pub records_kept: usize,
    pub pairs: Vec<QAPair>,
    pub rejects: Vec<Rejection>,
}

/// Load, clean and expand in one go.
pub fn ingest<R: Read>(source: R, format: InputFormat, rules: &Cleaner) -> Result<IngestOutcome, CorpusError> {
    let loaded = load_records(source, format)?;
    let records_read = loaded.records.len();
    let mut rejects = loaded.rejects;
    let (kept, dropped) = rules.clean(loaded.records);
    rejects.extend(dropped);
    let records_kept = kept.len();
    let mut pairs = Vec::new();
    for record in &kept {
        let (p, d) = rules.expand_answers_audited(record);
        pairs.extend(p);
        rejects.extend(d);
    }
    Ok(IngestOutcome {
        records_read,
        records_kept,
        pairs,
        rejects,
    })
}
