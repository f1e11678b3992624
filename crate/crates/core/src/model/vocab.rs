use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const SEP: usize = 2;
pub const URL: usize = 3;
pub const USER: usize = 4;
pub const UNK: usize = 5;

pub const URL_TOKEN: &str = "[URL]";
pub const USER_TOKEN: &str = "[USER]";

/// Label words for the default verbalizer.
pub const NON_RUMOR_WORDS: [&str; 2] = ["true", "real"];
pub const RUMOR_WORDS: [&str; 2] = ["false", "fake"];

const SPECIALS: [&str; 6] = ["[PAD]", "[MASK]", "[SEP]", URL_TOKEN, USER_TOKEN, "[UNK]"];

/// Number of ids reserved ahead of content words (specials + label words).
pub const RESERVED_TOKENS: usize = SPECIALS.len() + NON_RUMOR_WORDS.len() + RUMOR_WORDS.len();

/// Whitespace vocabulary with a fixed reserved prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `content` (duplicates and reserved words skipped).
    pub fn new<I, S>(content: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let reserved = SPECIALS
            .iter()
            .chain(NON_RUMOR_WORDS.iter())
            .chain(RUMOR_WORDS.iter())
            .map(|s| s.to_string());
        let mut vocab = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in reserved.chain(content.into_iter().map(Into::into)) {
            if !vocab.index.contains_key(&w) {
                vocab.index.insert(w.clone(), vocab.words.len());
                vocab.words.push(w);
            }
        }
        vocab
    }

    /// Most frequent whitespace tokens of `texts`, ties broken lexicographically,
    /// capped so the whole vocabulary has at most `max_size` entries.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Self::new(std::iter::empty::<String>());
        for (w, _) in ranked {
            if vocab.len() >= max_size {
                break;
            }
            if !vocab.index.contains_key(w) {
                vocab.index.insert(w.to_string(), vocab.words.len());
                vocab.words.push(w.to_string());
            }
        }
        vocab
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}
