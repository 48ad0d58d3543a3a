//! Flesch-Kincaid and ARI grade levels, per-word FK weights and the
//! normalized readability subscore.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textseg::{count_syllables, tokenize, TokenList};
use crate::vocab::Vocabulary;

/// Grade levels at or below which a text counts as fully readable.
pub const READABLE_GRADE: f64 = 4.0;
/// Grade levels at or above which a text counts as fully unreadable.
pub const UNREADABLE_GRADE: f64 = 20.0;

/// A US school grade level. May be negative or above 20.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct GradeScore<F>(pub F);

impl<F: Scalar> GradeScore<F> {
    pub fn value(self) -> F {
        self.0
    }
}

/// Word, sentence, syllable and character counts of a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    pub characters: usize,
}

impl TextStats {
    pub fn of(text: &str) -> Self {
        Self::from_tokens(&tokenize(text))
    }

    pub fn from_tokens(tokens: &TokenList) -> Self {
        let mut stats = TextStats {
            sentences: tokens.sentence_count(),
            ..Default::default()
        };
        for w in tokens.words() {
            stats.words += 1;
            stats.syllables += count_syllables(&w.surface).expect("word tokens are words");
            stats.characters += w.surface.chars().filter(|c| c.is_alphanumeric()).count();
        }
        stats
    }

    pub fn flesch_kincaid<F: Scalar>(&self) -> Result<GradeScore<F>> {
        if self.words == 0 {
            return Err(Error::NoWords);
        }
        let words = F::from_count(self.words);
        let per_sentence = words / F::from_count(self.sentences.max(1));
        let per_word = F::from_count(self.syllables) / words;
        Ok(GradeScore(
            F::of(0.39) * per_sentence + F::of(11.8) * per_word - F::of(15.59),
        ))
    }

    pub fn ari<F: Scalar>(&self) -> Result<GradeScore<F>> {
        if self.words == 0 {
            return Err(Error::NoWords);
        }
        let words = F::from_count(self.words);
        let chars_per_word = F::from_count(self.characters) / words;
        let per_sentence = words / F::from_count(self.sentences.max(1));
        Ok(GradeScore(
            F::of(4.71) * chars_per_word + F::of(0.5) * per_sentence - F::of(21.43),
        ))
    }
}

/// Flesch-Kincaid grade: `0.39 w/s + 11.8 syl/w - 15.59`.
pub fn flesch_kincaid<F: Scalar>(text: &str) -> Result<GradeScore<F>> {
    TextStats::of(text).flesch_kincaid()
}

/// Automated Readability Index: `4.71 chars/w + 0.5 w/s - 21.43`.
pub fn ari<F: Scalar>(text: &str) -> Result<GradeScore<F>> {
    TextStats::of(text).ari()
}

/// FK grade of a token sequence such as a partial beam, joined with spaces.
pub fn flesch_kincaid_tokens<F: Scalar, S: AsRef<str>>(tokens: &[S]) -> Result<GradeScore<F>> {
    let text = tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    flesch_kincaid(&text)
}

/// FK grade of a single word read as a one-word sentence, clamped at zero.
pub fn word_fk<F: Scalar>(word: &str) -> Result<F> {
    if word.is_empty() {
        return Err(Error::NotAWord(String::new()));
    }
    let syllables = count_syllables(word)?;
    let raw = F::of(0.39) + F::of(11.8) * F::from_count(syllables) - F::of(15.59);
    Ok(raw.max(F::zero()))
}

/// Maps an FK grade to `[0, 1]`: 1 below grade 4, 0 above grade 20, linear
/// in between.
pub fn readability_subscore<F: Scalar>(grade: F) -> F {
    let lo = F::of(READABLE_GRADE);
    let hi = F::of(UNREADABLE_GRADE);
    if grade < lo {
        F::one()
    } else if grade > hi {
        F::zero()
    } else {
        (hi - grade) / (hi - lo)
    }
}

/// Non-negative FK weight per vocabulary word.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FkWeightTable<F> {
    weights: BTreeMap<String, F>,
}

impl<F: Scalar> FkWeightTable<F> {
    pub fn new() -> Self {
        Self {
            weights: BTreeMap::new(),
        }
    }

    /// Computes [`word_fk`] for every entry. Special markers and punctuation
    /// get weight 0.
    pub fn for_vocabulary(vocab: &Vocabulary) -> Self {
        let mut table = Self::new();
        for (id, word) in vocab.iter() {
            let w = if vocab.is_special(id) {
                F::zero()
            } else {
                word_fk(word).unwrap_or_else(|_| F::zero())
            };
            table.weights.insert(word.to_string(), w);
        }
        table
    }

    pub fn insert(&mut self, word: impl Into<String>, weight: F) -> Result<()> {
        if weight.is_nan() || weight < F::zero() {
            return Err(Error::OutOfRange {
                name: "FK weight",
                value: weight.as_f64(),
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        self.weights.insert(word.into(), weight);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<F> {
        self.weights.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights aligned with vocabulary ids.
    pub fn aligned(&self, vocab: &Vocabulary) -> Result<Vec<F>> {
        vocab
            .iter()
            .map(|(_, w)| self.get(w).ok_or_else(|| Error::MissingWeight(w.to_string())))
            .collect()
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: F) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|(w, &v)| (w.clone(), v * factor))
                .collect(),
        }
    }

    /// `word<TAB>weight` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.weights {
            let _ = writeln!(out, "{w}\t{v}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, weight) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected word<TAB>weight"))?;
            let value: f64 = weight
                .trim()
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad weight {weight:?}: {e}")))?;
            table
                .insert(word, F::of(value))
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(table)
    }
}
