//! Tokenization shared by every module that looks at words.
//!
//! A token is a maximal run of alphanumeric characters belonging to one
//! script class. Two classes exist: Latin letters and ASCII digits form one,
//! every other alphanumeric character (Hangul, Han, Cyrillic, ...) forms the
//! other. Everything that is not alphanumeric separates tokens. Latin tokens
//! are lowercased; other scripts are kept as written.
//!
//! So `"GLS에서 수강신청"` yields `["gls", "에서", "수강신청"]`: the Korean
//! postposition attached to the Latin acronym is split off at the script
//! boundary.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Latin,
    Other,
    Separator,
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || matches!(c, '\u{00C0}'..='\u{00D6}' | '\u{00D8}'..='\u{00F6}' | '\u{00F8}'..='\u{024F}')
}

fn classify(c: char) -> CharClass {
    if c.is_ascii_digit() || is_latin_letter(c) {
        CharClass::Latin
    } else if c.is_alphanumeric() {
        CharClass::Other
    } else {
        CharClass::Separator
    }
}

/// Split `text` into tokens following the rule in the module docs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_class = CharClass::Separator;

    for c in text.chars() {
        let class = classify(c);
        if class != current_class && !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        match class {
            CharClass::Latin => current.extend(c.to_lowercase()),
            CharClass::Other => current.push(c),
            CharClass::Separator => {}
        }
        current_class = class;
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A tokenized text together with its source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TokenSeq {
    pub fn new(text: &str) -> Self {
        TokenSeq {
            tokens: tokenize(text),
            source_text: text.to_string(),
        }
    }

    /// Build a sequence from already-split tokens; `source_text` is the
    /// tokens joined by single spaces.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let source_text = tokens.join(" ");
        TokenSeq {
            tokens,
            source_text,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<&str> for TokenSeq {
    fn from(text: &str) -> Self {
        TokenSeq::new(text)
    }
}
