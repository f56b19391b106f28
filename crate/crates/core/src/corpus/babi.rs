use std::fmt::Write as _;

use super::{annotate_entities, tokenize_raw, CorpusError, Lexicon, Question, Result, Statement, Story};

/// Parses bAbI-format text.
///
/// Statement lines are `<n> <sentence>`; question lines are
/// `<n> <question>\t<answer>\t<supporting ids>`. Numbering restarts at 1 for
/// every story. A question's related entities are the entities of its
/// supporting statements.
pub fn parse_babi(text: &str, lexicon: &Lexicon) -> Result<Vec<Story>> {
    let mut stories = Vec::new();
    let mut current: Option<Story> = None;
    let mut last = 0usize;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |msg: &str| CorpusError::Malformed {
            line: lineno,
            msg: msg.to_string(),
        };
        let (num, rest) = raw
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| malformed("expected `<n> <text>`"))?;
        let n: usize = num.parse().map_err(|_| malformed("line number is not an integer"))?;

        if n == 1 {
            if let Some(s) = current.take() {
                stories.push(s);
            }
            current = Some(Story {
                id: stories.len(),
                statements: Vec::new(),
                questions: Vec::new(),
            });
        } else if n != last + 1 || current.is_none() {
            return Err(CorpusError::Gap {
                line: lineno,
                expected: last + 1,
                found: n,
            });
        }
        last = n;
        let story = current.as_mut().expect("story started above");

        if rest.contains('\t') {
            let fields: Vec<&str> = rest.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(malformed("question needs `question<TAB>answer<TAB>ids`"));
            }
            let answer = fields[1].trim();
            if answer.is_empty() || answer.contains(char::is_whitespace) {
                return Err(malformed("answer must be a single non-empty word"));
            }
            let supporting = fields
                .get(2)
                .map(|f| {
                    f.split_whitespace()
                        .map(|id| id.parse::<usize>().map_err(|_| malformed("bad supporting id")))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?
                .unwrap_or_default();
            let mut related: Vec<String> = Vec::new();
            for id in &supporting {
                let st = story
                    .statements
                    .iter()
                    .find(|s| s.line == *id)
                    .ok_or_else(|| malformed(&format!("supporting id {id} is not an earlier statement")))?;
                for e in &st.entities {
                    if !related.contains(e) {
                        related.push(e.clone());
                    }
                }
            }
            let tokens = lower(tokenize_raw(fields[0]));
            if tokens.is_empty() {
                return Err(malformed("empty question"));
            }
            story.questions.push(Question {
                line: n,
                position: story.statements.len(),
                tokens,
                answer: answer.to_lowercase(),
                supporting,
                related,
            });
        } else {
            let raw_tokens = tokenize_raw(rest);
            if raw_tokens.is_empty() {
                return Err(malformed("empty statement"));
            }
            let entities = annotate_entities(&raw_tokens, lexicon);
            story.statements.push(Statement {
                line: n,
                tokens: lower(raw_tokens),
                entities,
            });
        }
    }
    if let Some(s) = current {
        stories.push(s);
    }
    Ok(stories)
}

fn lower(tokens: Vec<String>) -> Vec<String> {
    tokens.into_iter().map(|t| t.to_lowercase()).collect()
}

/// Canonical bAbI text: tokens joined by single spaces, questions as
/// `<n> <question>\t<answer>\t<ids>`.
pub fn write_babi(stories: &[Story]) -> String {
    let mut out = String::new();
    for story in stories {
        let mut lines: Vec<(usize, String)> = story
            .statements
            .iter()
            .map(|s| (s.line, s.tokens.join(" ")))
            .chain(story.questions.iter().map(|q| {
                let ids: Vec<String> = q.supporting.iter().map(usize::to_string).collect();
                (q.line, format!("{}\t{}\t{}", q.tokens.join(" "), q.answer, ids.join(" ")))
            }))
            .collect();
        lines.sort_by_key(|(n, _)| *n);
        for (n, text) in lines {
            let _ = writeln!(out, "{n} {text}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = "1 Mary moved to the bathroom.\n\
                       2 John went to the hallway.\n\
                       3 Where is Mary?\tbathroom\t1\n\
                       4 Daniel went back to the hallway.\n\
                       5 Sandra moved to the garden.\n\
                       6 Where is Daniel?\thallway\t4\n";

    #[test]
    fn worked_example() {
        let stories = parse_babi(FIG, &Lexicon::default()).unwrap();
        assert_eq!(stories.len(), 1);
        let s = &stories[0];
        assert_eq!(s.statements.len(), 4);
        assert_eq!(s.questions.len(), 2);
        assert_eq!(s.questions[0].answer, "bathroom");
        assert_eq!(s.questions[1].answer, "hallway");
        assert_eq!(s.questions[0].related, vec!["mary", "bathroom"]);
        assert_eq!(s.questions[1].related, vec!["daniel", "hallway"]);
        assert_eq!(s.questions[0].position, 2);
        assert_eq!(s.questions[1].position, 4);
        assert_eq!(s.questions[0].tokens, vec!["where", "is", "mary", "?"]);
    }

    #[test]
    fn numbering_restart_starts_new_story() {
        let text = format!("{FIG}1 Fred went to the office.\n2 Where is Fred?\toffice\t1\n");
        let stories = parse_babi(&text, &Lexicon::default()).unwrap();
        assert_eq!(stories.len(), 2);
        assert_eq!(stories[1].id, 1);
        assert_eq!(stories[1].questions[0].related, vec!["fred", "office"]);
    }

    #[test]
    fn empty_input() {
        assert!(parse_babi("", &Lexicon::default()).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let lex = Lexicon::default();
        match parse_babi("1 Mary moved.\n3 John left.\n", &lex) {
            Err(CorpusError::Gap { line: 2, expected: 2, found: 3 }) => {}
            other => panic!("{other:?}"),
        }
        match parse_babi("1 Mary moved.\nx John left.\n", &lex) {
            Err(CorpusError::Malformed { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_babi("1 Where is Mary?\tkitchen\t7\n", &lex) {
            Err(CorpusError::Malformed { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_babi("2 Mary moved.\n", &lex), Err(CorpusError::Gap { .. })));
    }

    #[test]
    fn canonical_text_roundtrips() {
        let lex = Lexicon::default();
        let stories = parse_babi(FIG, &lex).unwrap();
        let text = write_babi(&stories);
        assert!(text.starts_with("1 mary moved to the bathroom .\n"));
        assert_eq!(parse_babi(&text, &lex).unwrap(), stories);
        assert_eq!(write_babi(&parse_babi(&text, &lex).unwrap()), text);
    }
}
