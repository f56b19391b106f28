use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{wrap_sentiment, CorpusError, Lexicon, Question, Result, Statement, Story};
use crate::config::{parse_value, ConfigError};
use crate::numgrad::seeded_rng;

const MOVE_TEMPLATES: [&str; 3] = ["moved to the", "went to the", "went back to the"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuestionKind {
    WhereIs,
}

/// A small text-adventure world: agents wander between locations.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub agents: Vec<String>,
    pub locations: Vec<String>,
    pub stories: usize,
    /// Stories in the held-out split written by `gendata`.
    pub test_stories: usize,
    pub moves_per_story: usize,
    pub questions_per_story: usize,
    pub question_kind: QuestionKind,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            agents: vec!["mary".into(), "john".into()],
            locations: ["bathroom", "hallway", "garden", "office"].map(String::from).to_vec(),
            stories: 1000,
            test_stories: 200,
            moves_per_story: 4,
            questions_per_story: 2,
            question_kind: QuestionKind::WhereIs,
            seed: 1,
        }
    }
}

pub const WORLD_KEYS: &[&str] = &[
    "agents",
    "locations",
    "stories",
    "test_stories",
    "moves_per_story",
    "questions_per_story",
    "question_kind",
    "seed",
];

fn name_list(key: &str, value: &str) -> std::result::Result<Vec<String>, ConfigError> {
    let names: Vec<String> = value
        .split(',')
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect();
    if names.iter().any(|n| !n.chars().all(char::is_alphabetic)) {
        return Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(names)
}

impl WorldConfig {
    /// Builds a world from `key=value` pairs; keys listed in `foreign` are
    /// skipped so one file can configure both data and training.
    pub fn from_map(map: &BTreeMap<String, String>, foreign: &[&str]) -> std::result::Result<Self, ConfigError> {
        let mut cfg = WorldConfig::default();
        for (k, v) in map {
            match k.as_str() {
                "agents" => cfg.agents = name_list(k, v)?,
                "locations" => cfg.locations = name_list(k, v)?,
                "stories" => cfg.stories = parse_value(k, v)?,
                "test_stories" => cfg.test_stories = parse_value(k, v)?,
                "moves_per_story" => cfg.moves_per_story = parse_value(k, v)?,
                "questions_per_story" => cfg.questions_per_story = parse_value(k, v)?,
                "question_kind" if v == "where_is" => cfg.question_kind = QuestionKind::WhereIs,
                "question_kind" => {
                    return Err(ConfigError::Value {
                        key: k.clone(),
                        value: v.clone(),
                    })
                }
                "seed" => cfg.seed = parse_value(k, v)?,
                _ if foreign.contains(&k.as_str()) => {}
                _ => return Err(ConfigError::UnknownKey(k.clone())),
            }
        }
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CorpusError::InvalidWorld(m.to_string()));
        if self.agents.is_empty() {
            return bad("at least one agent is required");
        }
        if self.locations.len() < 2 {
            return bad("at least two locations are required");
        }
        let mut names: Vec<&String> = self.agents.iter().chain(&self.locations).collect();
        names.sort();
        names.dedup();
        if names.len() != self.agents.len() + self.locations.len() {
            return bad("agent and location names must be distinct");
        }
        if self.questions_per_story > 0 && self.moves_per_story == 0 {
            return bad("questions need at least one move");
        }
        Ok(())
    }
}

/// Generates `cfg.stories` stories. Questions come after the move that
/// ends each of `questions_per_story` equal slices of the story and ask
/// about an agent that has already moved.
pub fn simulate(cfg: &WorldConfig) -> Result<Vec<Story>> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let m = cfg.moves_per_story;
    let nq = cfg.questions_per_story;
    let mut stories = Vec::with_capacity(cfg.stories);
    for id in 0..cfg.stories {
        let mut at: Vec<Option<usize>> = vec![None; cfg.agents.len()];
        let mut last_move: Vec<usize> = vec![0; cfg.agents.len()];
        let mut story = Story {
            id,
            statements: Vec::new(),
            questions: Vec::new(),
        };
        let mut line = 0;
        let mut next_q = 0;
        for mv in 1..=m {
            let a = rng.gen_range(0..cfg.agents.len());
            let mut loc = rng.gen_range(0..cfg.locations.len() - usize::from(at[a].is_some()));
            if let Some(cur) = at[a] {
                if loc >= cur {
                    loc += 1;
                }
            }
            let template = MOVE_TEMPLATES[rng.gen_range(0..MOVE_TEMPLATES.len())];
            let (agent, place) = (&cfg.agents[a], &cfg.locations[loc]);
            line += 1;
            at[a] = Some(loc);
            last_move[a] = line;
            let text = format!("{agent} {template} {place} .");
            story.statements.push(Statement {
                line,
                tokens: text.split(' ').map(String::from).collect(),
                entities: vec![agent.clone(), place.clone()],
            });
            // question k follows move ceil((k + 1) m / nq)
            while next_q < nq && (next_q + 1) * m <= mv * nq {
                let moved: Vec<usize> = (0..at.len()).filter(|&i| at[i].is_some()).collect();
                let x = *moved.choose(&mut rng).expect("the current agent has moved");
                let place = &cfg.locations[at[x].expect("moved")];
                line += 1;
                story.questions.push(Question {
                    line,
                    position: story.statements.len(),
                    tokens: vec!["where".into(), "is".into(), cfg.agents[x].clone(), "?".into()],
                    answer: place.clone(),
                    supporting: vec![last_move[x]],
                    related: vec![cfg.agents[x].clone(), place.clone()],
                });
                next_q += 1;
            }
        }
        stories.push(story);
    }
    Ok(stories)
}

/// Synthetic reviews whose class is signalled by one distinctive noun.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarityConfig {
    pub stories_per_class: usize,
    pub sentences_per_story: usize,
    pub seed: u64,
}

const POLARITY_NOUNS: [&str; 8] = ["movie", "film", "plot", "actor", "music", "ending", "script", "cast"];
const FILLER: [&str; 4] = [
    "the {} was long .",
    "i saw the {} on friday .",
    "the {} had a {} .",
    "my friend talked about the {} .",
];

/// Labelled polarity stories (positive first, then negative), each with one
/// `masterpiece` or `disaster` sentence among neutral filler.
pub fn simulate_polarity(cfg: &PolarityConfig, lexicon: &Lexicon) -> Result<Vec<Story>> {
    if cfg.sentences_per_story == 0 {
        return Err(CorpusError::InvalidWorld("reviews need at least one sentence".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut out = Vec::with_capacity(2 * cfg.stories_per_class);
    for (label, word) in [("positive", "masterpiece"), ("negative", "disaster")] {
        for _ in 0..cfg.stories_per_class {
            let opinion_at = rng.gen_range(0..cfg.sentences_per_story);
            let mut tokens: Vec<String> = Vec::new();
            for s in 0..cfg.sentences_per_story {
                let noun = *POLARITY_NOUNS.choose(&mut rng).expect("nonempty");
                let sentence = if s == opinion_at {
                    format!("the {noun} is a {word} .")
                } else {
                    let mut t = FILLER.choose(&mut rng).expect("nonempty").to_string();
                    while t.contains("{}") {
                        let n = *POLARITY_NOUNS.choose(&mut rng).expect("nonempty");
                        t = t.replacen("{}", n, 1);
                    }
                    t
                };
                tokens.extend(sentence.split(' ').map(String::from));
            }
            let mut story = wrap_sentiment(&tokens, label, lexicon)?;
            story.id = out.len();
            out.push(story);
        }
    }
    Ok(out)
}
