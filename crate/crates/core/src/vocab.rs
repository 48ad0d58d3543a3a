use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Word-level vocabulary. Id 0 is BOS and id 1 is EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const BOS_ID: usize = 0;
    pub const EOS_ID: usize = 1;

    /// Builds a vocabulary from words in first-seen order; duplicates and
    /// the marker strings are skipped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        vocab.push(BOS);
        vocab.push(EOS);
        for w in words {
            vocab.push(w.as_ref());
        }
        vocab
    }

    fn push(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len());
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn bos(&self) -> usize {
        Self::BOS_ID
    }

    pub fn eos(&self) -> usize {
        Self::EOS_ID
    }

    pub fn bos_word(&self) -> &str {
        BOS
    }

    pub fn eos_word(&self) -> &str {
        EOS
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == Self::BOS_ID || id == Self::EOS_ID
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words.iter().enumerate().map(|(i, w)| (i, w.as_str()))
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.id(w.as_ref())
                    .ok_or_else(|| Error::UnknownToken(w.as_ref().to_string()))
            })
            .collect()
    }

    /// Words for `ids`, dropping BOS and EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !self.is_special(id))
            .map(|&id| self.words[id].clone())
            .collect()
    }
}
