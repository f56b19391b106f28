use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{annotate_entities, tokenize_raw, CorpusError, Lexicon, Question, Result, Statement, Story};
use crate::numgrad::seeded_rng;

pub const WH_WORDS: [&str; 7] = ["who", "what", "where", "when", "which", "why", "how"];

/// The question attached to every sentiment story.
pub const OPINION_QUESTION: [&str; 4] = ["what", "is", "the", "opinion"];

/// Replaces the single wh-word of a question with the alternative's tokens
/// and drops question marks. No grammar repair is attempted.
pub fn convert_mc<S: AsRef<str>, T: AsRef<str>>(question: &[S], alternative: &[T]) -> Result<Vec<String>> {
    let wh = question
        .iter()
        .filter(|t| WH_WORDS.contains(&t.as_ref().to_lowercase().as_str()))
        .count();
    match wh {
        0 => return Err(CorpusError::NoWhWord),
        1 => {}
        n => return Err(CorpusError::MultipleWhWords(n)),
    }
    let mut out = Vec::with_capacity(question.len() + alternative.len());
    for t in question {
        let t = t.as_ref();
        if t == "?" {
            continue;
        }
        if WH_WORDS.contains(&t.to_lowercase().as_str()) {
            out.extend(alternative.iter().map(|a| a.as_ref().to_lowercase()));
        } else {
            out.push(t.to_lowercase());
        }
    }
    Ok(out)
}

/// Splits raw tokens into statements at `.` tokens and annotates entities.
fn split_statements<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let flush = |cur: &mut Vec<String>, out: &mut Vec<Statement>| {
        if cur.is_empty() {
            return;
        }
        let entities = annotate_entities(cur, lexicon);
        out.push(Statement {
            line: out.len() + 1,
            tokens: cur.iter().map(|t| t.to_lowercase()).collect(),
            entities,
        });
        cur.clear();
    };
    for t in tokens {
        let t = t.as_ref();
        cur.push(t.to_string());
        if t == "." {
            flush(&mut cur, &mut out);
        }
    }
    flush(&mut cur, &mut out);
    out
}

/// A review as a story whose single question is "what is the opinion ?",
/// answered by the label. No related entities are attached.
pub fn wrap_sentiment<S: AsRef<str>>(review: &[S], label: &str, lexicon: &Lexicon) -> Result<Story> {
    if label != "positive" && label != "negative" {
        return Err(CorpusError::BadLabel(label.to_string()));
    }
    let statements = split_statements(review, lexicon);
    if statements.is_empty() {
        return Err(CorpusError::EmptyReview);
    }
    let mut tokens: Vec<String> = OPINION_QUESTION.iter().map(|s| s.to_string()).collect();
    tokens.push("?".into());
    let question = Question {
        line: statements.len() + 1,
        position: statements.len(),
        tokens,
        answer: label.to_string(),
        supporting: Vec::new(),
        related: Vec::new(),
    };
    Ok(Story {
        id: 0,
        statements,
        questions: vec![question],
    })
}

/// One labelled review file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Review {
    pub path: PathBuf,
    pub text: String,
    pub label: &'static str,
}

fn label_of(dir: &str) -> Option<&'static str> {
    match dir {
        "pos" | "positive" => Some("positive"),
        "neg" | "negative" => Some("negative"),
        _ => None,
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io)?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Reads review files whose parent directory is named `pos`/`neg` (or
/// `positive`/`negative`), sorted by path. With `sample = Some(n)`, a
/// seeded draw keeps `n / 2` reviews per class.
pub fn read_sentiment_dir(root: &Path, sample: Option<usize>, seed: u64) -> Result<Vec<Review>> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for path in files {
        let Some(label) = path
            .parent()
            .and_then(Path::file_name)
            .and_then(|n| n.to_str())
            .and_then(label_of)
        else {
            continue;
        };
        let raw = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let text = raw.replace("<br />", " ").replace("<br/>", " ");
        let review = Review { path, text, label };
        if label == "positive" {
            pos.push(review);
        } else {
            neg.push(review);
        }
    }
    if let Some(n) = sample {
        let mut rng = seeded_rng(seed);
        for class in [&mut pos, &mut neg] {
            class.shuffle(&mut rng);
            class.truncate(n / 2);
            class.sort_by(|a, b| a.path.cmp(&b.path));
        }
    }
    pos.extend(neg);
    Ok(pos)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McQuestion {
    pub text: String,
    pub alternatives: Vec<String>,
    pub correct: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McStory {
    pub id: String,
    pub text: String,
    pub questions: Vec<McQuestion>,
}

/// Reads an MCTest `.tsv` file and its `.ans` answer key.
///
/// Each tsv row is `id, properties, story, (question, A, B, C, D) x 4`;
/// questions carry a `one:`/`multiple:` prefix and the story uses
/// `\newline` for line breaks. Each answer row lists one letter per question.
pub fn read_mctest(tsv: &Path, answers: &Path) -> Result<Vec<McStory>> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| CorpusError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let tsv_text = read(tsv)?;
    let ans_text = read(answers)?;
    let ans_lines: Vec<&str> = ans_text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::new();
    for (i, line) in tsv_text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let malformed = |msg: String| CorpusError::Malformed { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || (cols.len() - 3) % 5 != 0 {
            return Err(malformed(format!("expected 3 + 5k columns, found {}", cols.len())));
        }
        let letters: Vec<&str> = ans_lines
            .get(i)
            .ok_or_else(|| malformed("missing answer row".into()))?
            .split('\t')
            .map(str::trim)
            .collect();
        let nq = (cols.len() - 3) / 5;
        if letters.len() != nq {
            return Err(malformed(format!("{} answers for {nq} questions", letters.len())));
        }
        let mut questions = Vec::with_capacity(nq);
        for q in 0..nq {
            let base = 3 + q * 5;
            let text = cols[base];
            let text = text
                .strip_prefix("one:")
                .or_else(|| text.strip_prefix("multiple:"))
                .unwrap_or(text)
                .trim()
                .to_string();
            let correct = letters[q]
                .chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| match c {
                    'A'..='D' => Ok(c as usize - 'A' as usize),
                    _ => Err(malformed(format!("bad answer letter `{c}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            questions.push(McQuestion {
                text,
                alternatives: cols[base + 1..base + 5].iter().map(|s| s.to_string()).collect(),
                correct,
            });
        }
        out.push(McStory {
            id: cols[0].to_string(),
            text: cols[2].replace("\\newline", " "),
            questions,
        });
    }
    Ok(out)
}

/// Multiple-choice stories as true/false stories: every alternative becomes
/// its own declarative query answered `true` or `false`. Questions that
/// cannot be converted are skipped and counted.
pub fn mc_to_stories(mc: &[McStory], lexicon: &Lexicon) -> (Vec<Story>, usize) {
    let mut stories = Vec::new();
    let mut skipped = 0;
    for m in mc {
        let statements = split_statements(&tokenize_raw(&m.text), lexicon);
        if statements.is_empty() {
            skipped += m.questions.len();
            continue;
        }
        let mut questions = Vec::new();
        for q in &m.questions {
            let q_tokens = tokenize_raw(&q.text);
            let converted: Result<Vec<Vec<String>>> = q
                .alternatives
                .iter()
                .map(|alt| convert_mc(&q_tokens, &tokenize_raw(alt)))
                .collect();
            let Ok(decls) = converted else {
                skipped += 1;
                continue;
            };
            for (k, tokens) in decls.into_iter().enumerate() {
                if tokens.is_empty() {
                    continue;
                }
                questions.push(Question {
                    line: statements.len() + questions.len() + 1,
                    position: statements.len(),
                    tokens,
                    answer: if q.correct.contains(&k) { "true" } else { "false" }.to_string(),
                    supporting: Vec::new(),
                    related: Vec::new(),
                });
            }
        }
        if questions.is_empty() {
            continue;
        }
        stories.push(Story {
            id: stories.len(),
            statements,
            questions,
        });
    }
    (stories, skipped)
}
