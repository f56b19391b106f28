use indexmap::IndexSet;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

/// Word ↔ id mapping with ids 0, 1, 2 reserved for padding, unknown words
/// and end of sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: IndexSet<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let words = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN]
            .into_iter()
            .map(String::from)
            .collect();
        Vocab { words }
    }

    /// Vocabulary over the given tokens in first-seen order.
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.add(t);
        }
        v
    }

    pub fn add(&mut self, word: &str) -> usize {
        match self.words.get_index_of(word) {
            Some(i) => i,
            None => self.words.insert_full(word.to_string()).0,
        }
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.get_index_of(word)
    }

    /// Id of `word`, falling back to the unknown id.
    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id_or_unk(w.as_ref())).collect()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get_index(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 3
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Rebuilds from a full word list, which must start with the reserved words.
    pub fn from_words(words: Vec<String>) -> Option<Self> {
        if words.len() < 3 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN || words[2] != EOS_TOKEN {
            return None;
        }
        let n = words.len();
        let set: IndexSet<String> = words.into_iter().collect();
        (set.len() == n).then_some(Vocab { words: set })
    }
}
