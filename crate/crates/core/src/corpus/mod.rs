//! Story data: tokenisation, entity annotation, the bAbI text format,
//! embedding files, multiple-choice and sentiment conversions, and the
//! synthetic story generators.

mod babi;
mod convert;
mod embeddings;
mod lexicon;
mod simulate;

use std::path::PathBuf;

pub use babi::{parse_babi, write_babi};
pub use convert::{
    convert_mc, mc_to_stories, read_mctest, read_sentiment_dir, wrap_sentiment, McQuestion, McStory,
    Review, OPINION_QUESTION, WH_WORDS,
};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingTable};
pub use lexicon::Lexicon;
pub use simulate::{simulate, simulate_polarity, PolarityConfig, QuestionKind, WorldConfig, WORLD_KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: numbering gap, expected {expected} or 1, found {found}")]
    Gap {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding `{token}`: expected {expected} values, found {found}")]
    Dimension {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse `{text}` as a number")]
    BadFloat { line: usize, text: String },
    #[error("question has no wh-word")]
    NoWhWord,
    #[error("question has {0} wh-words, expected exactly one")]
    MultipleWhWords(usize),
    #[error("empty review")]
    EmptyReview,
    #[error("label `{0}` is neither positive nor negative")]
    BadLabel(String),
    #[error("invalid world configuration: {0}")]
    InvalidWorld(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// A declarative sentence with its entities in first-mention order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Statement {
    /// Line number within the story (1-based, shared with questions).
    pub line: usize,
    pub tokens: Vec<String>,
    pub entities: Vec<String>,
}

/// A question placed after the first `position` statements of its story.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub line: usize,
    pub position: usize,
    pub tokens: Vec<String>,
    /// Gold answer, kept verbatim as one vocabulary word.
    pub answer: String,
    pub supporting: Vec<usize>,
    /// Entities of the supporting statements; empty when unsupervised.
    pub related: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Story {
    pub id: usize,
    pub statements: Vec<Statement>,
    pub questions: Vec<Question>,
}

impl Story {
    /// Statements a question may draw on.
    pub fn context(&self, q: &Question) -> &[Statement] {
        &self.statements[..q.position]
    }

    /// All distinct entities of the story, in first-mention order.
    pub fn entities(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.statements {
            for e in &s.entities {
                if !out.contains(e) {
                    out.push(e.clone());
                }
            }
        }
        out
    }
}

/// Splits on whitespace and detaches punctuation into separate tokens.
/// Case is preserved; apostrophes and hyphens stay inside words.
pub fn tokenize_raw(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() && ch != '\'' && ch != '-' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Lowercased tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_raw(text).into_iter().map(|t| t.to_lowercase()).collect()
}

/// Distinct lowercased entity tokens in first-mention order: words in the
/// lexicon, plus capitalised words that do not start the sentence.
pub fn annotate_entities<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (i, raw) in tokens.iter().enumerate() {
        let raw = raw.as_ref();
        let lower = raw.to_lowercase();
        let proper = i > 0
            && raw.chars().next().is_some_and(char::is_uppercase)
            && raw.chars().all(char::is_alphabetic);
        if (lexicon.contains(&lower) || proper) && !out.contains(&lower) {
            out.push(lower);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize_raw("Mary moved to the bathroom."),
            vec!["Mary", "moved", "to", "the", "bathroom", "."]
        );
        assert_eq!(tokenize("Where is  Mary?"), vec!["where", "is", "mary", "?"]);
        assert_eq!(tokenize("don't stop-go"), vec!["don't", "stop-go"]);
    }

    #[test]
    fn annotation_examples() {
        let lex = Lexicon::default();
        let toks = tokenize_raw("Mary moved to the bathroom .");
        assert_eq!(annotate_entities(&toks, &lex), vec!["mary", "bathroom"]);
        let toks = tokenize_raw("Sandra moved to the garden .");
        assert_eq!(annotate_entities(&toks, &lex), vec!["sandra", "garden"]);
        assert!(annotate_entities(&tokenize_raw("go quickly !"), &lex).is_empty());
    }

    #[test]
    fn proper_noun_heuristic() {
        let lex = Lexicon::empty();
        let toks = tokenize_raw("Yesterday Zorblax met Quib and Zorblax left .");
        assert_eq!(annotate_entities(&toks, &lex), vec!["zorblax", "quib"]);
    }

    #[test]
    fn annotation_idempotent_and_stable() {
        let lex = Lexicon::default();
        let toks = tokenize_raw("John took the apple and John went to the kitchen .");
        let once = annotate_entities(&toks, &lex);
        assert_eq!(once, vec!["john", "apple", "kitchen"]);
        assert_eq!(annotate_entities(&once, &lex), once);
    }
}
