use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorstore::StoredDoc;

pub const CONTEXT_PLACEHOLDER: &str = "{context}";
pub const QUESTION_PLACEHOLDER: &str = "{question}";
pub const NO_CONTEXT_MARKER: &str = "[no context found]";
/// Prefix of the answer line inside a context block.
pub const ANSWER_PREFIX: &str = "A: ";

pub const DEFAULT_TEMPLATE: &str = "\
Answer the student's question using only the context below. \
If the context does not contain the answer, say that you do not know.

Context:
{context}

Question: {question}
Answer:";

pub const DEFAULT_PREAMBLE: &str =
    "You are a helpful assistant for new university students. Answer briefly and only from the given context.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template must contain {placeholder} exactly once, found {count}")]
    Placeholder { placeholder: &'static str, count: usize },
}

/// A validated prompt template with one `{context}` and one `{question}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    template: String,
    system_preamble: String,
}

#[derive(Deserialize)]
struct RawTemplate {
    template: String,
    #[serde(default)]
    system_preamble: String,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        PromptTemplate::new(raw.template, raw.system_preamble)
    }
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>, system_preamble: impl Into<String>) -> Result<Self, TemplateError> {
        let template = template.into();
        for placeholder in [CONTEXT_PLACEHOLDER, QUESTION_PLACEHOLDER] {
            let count = template.matches(placeholder).count();
            if count != 1 {
                return Err(TemplateError::Placeholder { placeholder, count });
            }
        }
        Ok(PromptTemplate {
            template,
            system_preamble: system_preamble.into(),
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn system_preamble(&self) -> &str {
        &self.system_preamble
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE, DEFAULT_PREAMBLE).expect("default template is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    /// Length in characters.
    pub chars: usize,
}

/// One numbered block per context:
///
/// ```text
/// [1]
/// Q: <question>
/// A: <answer>
/// [/1]
/// ```
pub fn format_context(contexts: &[&StoredDoc]) -> String {
    if contexts.is_empty() {
        return NO_CONTEXT_MARKER.to_string();
    }
    contexts
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let n = i + 1;
            format!("[{n}]\nQ: {}\n{ANSWER_PREFIX}{}\n[/{n}]", doc.question, doc.answer)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Substitute both placeholders in a single pass over the template, so text
/// coming from contexts or the question is never substituted again.
pub fn render_prompt(template: &PromptTemplate, contexts: &[&StoredDoc], question: &str) -> RenderedPrompt {
    let tpl = template.template();
    let context = format_context(contexts);
    let c = tpl.find(CONTEXT_PLACEHOLDER).expect("validated template");
    let q = tpl.find(QUESTION_PLACEHOLDER).expect("validated template");

    let mut parts = [(c, CONTEXT_PLACEHOLDER.len(), context.as_str()), (q, QUESTION_PLACEHOLDER.len(), question)];
    parts.sort_by_key(|p| p.0);

    let mut text = String::with_capacity(tpl.len() + context.len() + question.len());
    let mut cursor = 0;
    for (pos, len, value) in parts {
        text.push_str(&tpl[cursor..pos]);
        text.push_str(value);
        cursor = pos + len;
    }
    text.push_str(&tpl[cursor..]);
    let chars = text.chars().count();
    RenderedPrompt { text, chars }
}

/// The answer text of the first context block in `prompt`, if any.
pub fn first_context_answer(prompt: &str) -> Option<&str> {
    let start = if prompt.starts_with(ANSWER_PREFIX) {
        ANSWER_PREFIX.len()
    } else {
        prompt.find(&format!("\n{ANSWER_PREFIX}"))? + 1 + ANSWER_PREFIX.len()
    };
    let rest = &prompt[start..];
    let end = rest.find("\n[/").unwrap_or(rest.len());
    Some(rest[..end].trim_end_matches(['\r', '\n']))
}
