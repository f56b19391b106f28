use std::collections::HashSet;
use std::path::Path;

use super::{CorpusError, Result};

const PRONOUNS: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them", "myself",
    "yourself", "himself", "herself", "itself", "ourselves", "themselves", "someone", "somebody",
    "everyone", "everybody", "anyone", "nobody", "something", "everything", "nothing", "anything",
];

const SIMULATOR: &[&str] = &[
    "mary", "john", "sandra", "daniel", "fred", "bill", "julie", "jeff", "bathroom", "hallway",
    "garden", "office", "kitchen", "bedroom", "park", "school", "cinema", "football", "apple",
    "milk",
];

const POLARITY: &[&str] = &[
    "movie", "film", "plot", "actor", "actress", "director", "music", "ending", "script", "cast",
    "scene", "story", "masterpiece", "disaster", "soundtrack", "camera", "studio", "sequel",
];

const COMMON_NOUNS: &[&str] = &[
    "man", "woman", "boy", "girl", "child", "children", "people", "person", "friend", "family",
    "mother", "father", "mom", "dad", "brother", "sister", "baby", "teacher", "student", "doctor",
    "king", "queen", "dog", "cat", "bird", "fish", "horse", "cow", "pig", "mouse", "animal",
    "house", "home", "room", "door", "window", "table", "chair", "bed", "floor", "wall", "car",
    "bus", "train", "boat", "bike", "road", "street", "city", "town", "village", "country",
    "world", "tree", "flower", "grass", "forest", "river", "lake", "sea", "beach", "mountain",
    "hill", "sky", "sun", "moon", "star", "rain", "snow", "water", "food", "bread", "cake",
    "pie", "cookie", "candy", "egg", "cheese", "orange", "banana", "box", "bag", "ball", "toy",
    "game", "book", "letter", "picture", "paper", "pen", "phone", "computer", "money", "gift",
    "hat", "shoe", "shirt", "dress", "coat", "key", "cup", "plate", "bowl", "store", "shop",
    "market", "library", "hospital", "church", "farm", "zoo", "pool", "playground", "class",
    "lunch", "dinner", "breakfast", "party", "birthday", "day", "night", "morning", "week",
    "year", "time", "name", "idea", "problem", "question", "answer", "opinion", "song", "show",
    "team", "job", "work", "word", "thing", "place", "way", "part", "hand", "head", "eye", "face",
    "heart", "name", "garage", "yard", "attic", "basement", "closet", "desk", "lamp", "clock",
    "drawer", "basket", "bottle", "glass", "jar", "box", "truck", "plane", "ship", "castle",
    "cave", "island", "jungle", "desert", "pond", "fence", "gate", "bridge", "tower",
];

/// Words treated as entities (nouns and pronouns), stored lowercased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    words: HashSet<String>,
}

impl Default for Lexicon {
    /// Pronouns, the simulator vocabulary and a list of common nouns.
    fn default() -> Self {
        let mut lex = Lexicon::empty();
        lex.extend(
            PRONOUNS
                .iter()
                .chain(SIMULATOR)
                .chain(POLARITY)
                .chain(COMMON_NOUNS)
                .copied(),
        );
        lex
    }
}

impl Lexicon {
    pub fn empty() -> Self {
        Lexicon {
            words: HashSet::new(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn extend<'a, I: IntoIterator<Item = &'a str>>(&mut self, words: I) {
        self.words.extend(words.into_iter().map(str::to_lowercase));
    }

    /// Adds every whitespace-separated word of a text file.
    pub fn extend_from_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.extend(text.split_whitespace());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
