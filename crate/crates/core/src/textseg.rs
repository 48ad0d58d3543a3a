//! Tokenization, sentence splitting, syllable counting, n-grams and
//! rule-based entity extraction.
//!
//! Every other module reads text through here, so the rules are kept small
//! and deterministic:
//!
//! * a word is a maximal alphanumeric run, allowing an apostrophe or hyphen
//!   between two alphanumerics and a `.`/`,` between two digits (`0.73`,
//!   `7,843`); a fixed set of abbreviations (`e.g.`, `Dr.`, ...) is a single
//!   word including its periods;
//! * every other non-whitespace character is a one-character punctuation
//!   token;
//! * a sentence ends at `.`, `!` or `?` followed by whitespace or the end of
//!   the text.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Abbreviations whose trailing period never ends a sentence. Matched
/// case-insensitively at the start of a word.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "vs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "fig.", "al.", "cf.", "approx.",
];

const SENTENCE_TERMINATORS: &[&str] = &[".", "!", "?"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Whitespace between the previous token (or start of text) and this one.
    pub leading: String,
    /// Byte offset of `surface` in the original text.
    pub offset: usize,
    pub is_word: bool,
    pub is_numeric: bool,
    pub is_capitalized: bool,
    pub sentence_index: usize,
    pub is_sentence_initial: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenList {
    pub tokens: Vec<Token>,
    /// Whitespace after the last token.
    pub trailing: String,
}

impl TokenList {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_word)
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    /// Lowercased word surfaces, the unit for n-gram and overlap metrics.
    pub fn lowercase_words(&self) -> Vec<String> {
        self.words().map(|t| t.surface.to_lowercase()).collect()
    }

    /// Number of sentences that contain at least one word.
    pub fn sentence_count(&self) -> usize {
        self.words()
            .map(|t| t.sentence_index + 1)
            .max()
            .unwrap_or(0)
    }

    /// Rebuilds the original text from surfaces and separators.
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&t.leading);
            out.push_str(&t.surface);
        }
        out.push_str(&self.trailing);
        out
    }
}

impl<'a> IntoIterator for &'a TokenList {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '’' | '-')
}

fn match_abbreviation(rest: &str) -> Option<usize> {
    for abbr in ABBREVIATIONS {
        let Some(head) = rest.get(..abbr.len()) else {
            continue;
        };
        if !head.eq_ignore_ascii_case(abbr) {
            continue;
        }
        let boundary = rest[abbr.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if boundary {
            return Some(abbr.len());
        }
    }
    None
}

/// Length in bytes of the word starting at the beginning of `rest`.
fn word_len(rest: &str) -> usize {
    if let Some(n) = match_abbreviation(rest) {
        return n;
    }
    let chars: Vec<(usize, char)> = rest.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_alphanumeric() {
            i += 1;
            continue;
        }
        let prev = if i > 0 { Some(chars[i - 1].1) } else { None };
        let next = chars.get(i + 1).map(|&(_, c)| c);
        let joins = match (prev, next) {
            (Some(p), Some(n)) if is_joiner(c) => p.is_alphanumeric() && n.is_alphanumeric(),
            (Some(p), Some(n)) if c == '.' || c == ',' => p.is_ascii_digit() && n.is_ascii_digit(),
            _ => false,
        };
        if !joins {
            break;
        }
        i += 2;
    }
    chars.get(i).map_or(rest.len(), |&(b, _)| b)
}

fn numeric(surface: &str) -> bool {
    surface.chars().any(|c| c.is_ascii_digit())
        && surface
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

/// Splits `text` into word and punctuation tokens with sentence information.
pub fn tokenize(text: &str) -> TokenList {
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut leading_start = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let c = rest.chars().next().expect("pos is inside text");
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        let (len, is_word) = if c.is_alphanumeric() {
            (word_len(rest), true)
        } else {
            (c.len_utf8(), false)
        };
        let surface = &rest[..len];
        tokens.push(Token {
            surface: surface.to_string(),
            leading: text[leading_start..pos].to_string(),
            offset: pos,
            is_word,
            is_numeric: is_word && numeric(surface),
            is_capitalized: is_word && c.is_uppercase(),
            sentence_index: 0,
            is_sentence_initial: false,
        });
        pos += len;
        leading_start = pos;
    }
    let trailing = text[leading_start..].to_string();
    assign_sentences(&mut tokens);
    TokenList { tokens, trailing }
}

fn assign_sentences(tokens: &mut [Token]) {
    let mut sentence = 0;
    let mut has_word = false;
    for i in 0..tokens.len() {
        let ends = SENTENCE_TERMINATORS.contains(&tokens[i].surface.as_str())
            && tokens.get(i + 1).is_none_or(|next| !next.leading.is_empty());
        let tok = &mut tokens[i];
        tok.sentence_index = sentence;
        if tok.is_word {
            tok.is_sentence_initial = !has_word;
            has_word = true;
        }
        if ends && has_word {
            sentence += 1;
            has_word = false;
        }
    }
}

/// Sentence count plus the sentence index of every token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplit {
    pub count: usize,
    pub token_sentence: Vec<usize>,
}

pub fn split_sentences(text: &str) -> SentenceSplit {
    let tokens = tokenize(text);
    SentenceSplit {
        count: tokens.sentence_count(),
        token_sentence: tokens.iter().map(|t| t.sentence_index).collect(),
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable estimate with a silent final `e`.
pub fn count_syllables(word: &str) -> Result<usize> {
    if !word.chars().any(char::is_alphanumeric) {
        return Err(Error::NotAWord(word.to_string()));
    }
    let chars: Vec<char> = word.chars().flat_map(char::to_lowercase).collect();
    let mut groups: usize = 0;
    let mut in_group = false;
    for &c in &chars {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = chars.len();
    if n >= 2 && chars[n - 1] == 'e' && !is_vowel(chars[n - 2]) {
        let consonant_le = n >= 3
            && chars[n - 2] == 'l'
            && chars[n - 3].is_alphabetic()
            && !is_vowel(chars[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    Ok(groups.max(1))
}

pub type Ngram = Vec<String>;

/// Multiset of n-grams.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NgramCounts {
    counts: BTreeMap<Ngram, usize>,
}

impl NgramCounts {
    pub fn count(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Number of n-grams counted with multiplicity.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ngram, usize)> {
        self.counts.iter().map(|(g, &c)| (g, c))
    }

    pub fn to_set(&self) -> BTreeSet<Ngram> {
        self.counts.keys().cloned().collect()
    }
}

/// All contiguous windows of length `n` over lowercased `words`.
pub fn extract_ngrams<S: AsRef<str>>(words: &[S], n: usize) -> Result<NgramCounts> {
    if n == 0 {
        return Err(Error::ZeroOrder);
    }
    let lower: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
    let mut counts = BTreeMap::new();
    for window in lower.windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    Ok(NgramCounts { counts })
}

/// Set of entity surface strings. Never contains the empty string.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntitySet {
    entities: BTreeSet<String>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a trimmed entity; blank strings are ignored.
    pub fn insert(&mut self, entity: impl AsRef<str>) -> bool {
        let e = entity.as_ref().trim();
        !e.is_empty() && self.entities.insert(e.to_string())
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entities.contains(entity)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }
}

impl<S: AsRef<str>> FromIterator<S> for EntitySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = EntitySet::new();
        for e in iter {
            set.insert(e);
        }
        set
    }
}

fn join_span(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push_str(&t.leading);
        }
        out.push_str(&t.surface);
    }
    out
}

/// Rule-based entity extraction.
///
/// R1: maximal runs of adjacent capitalized words that are not
/// sentence-initial. R2: a sentence-initial capitalized word that also
/// appears capitalized mid-sentence elsewhere. R3: numeric tokens.
pub fn extract_entities(text: &str) -> EntitySet {
    entities_in(&tokenize(text))
}

pub fn entities_in(tokens: &TokenList) -> EntitySet {
    let toks = &tokens.tokens;
    let mut set = EntitySet::new();
    let mid_caps = |t: &Token| t.is_word && t.is_capitalized && !t.is_sentence_initial;

    let mut i = 0;
    while i < toks.len() {
        if mid_caps(&toks[i]) {
            let start = i;
            while i < toks.len() && mid_caps(&toks[i]) {
                i += 1;
            }
            set.insert(join_span(&toks[start..i]));
        } else {
            i += 1;
        }
    }

    let mid_surfaces: BTreeSet<&str> = toks
        .iter()
        .filter(|t| mid_caps(t))
        .map(|t| t.surface.as_str())
        .collect();
    for t in toks {
        if t.is_word && t.is_capitalized && t.is_sentence_initial && mid_surfaces.contains(t.surface.as_str())
        {
            set.insert(&t.surface);
        }
        if t.is_numeric {
            set.insert(&t.surface);
        }
    }
    set
}
