//! Factual-consistency scoring of a candidate against its source.
//!
//! [`LexicalScorer`] is a deterministic greedy token-matching F1 over
//! character-trigram cosine similarity. [`PrecomputedScorer`] serves scores
//! computed elsewhere (for example neural BERTScore F1) keyed by candidate
//! id.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::scalar::{check_unit, Scalar};
use crate::textseg::{entities_in, tokenize, EntitySet};

/// Raw scores below this are treated as equally inconsistent.
pub const CONSISTENCY_FLOOR: f64 = 0.60;

/// Text to be scored, optionally carrying an identifier for lookup-based
/// scorers.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: Option<&'a str>,
    pub text: &'a str,
}

impl<'a> Candidate<'a> {
    pub fn text(text: &'a str) -> Self {
        Candidate { id: None, text }
    }

    pub fn with_id(id: &'a str, text: &'a str) -> Self {
        Candidate { id: Some(id), text }
    }
}

/// Produces a raw consistency score in `[0, 1]` for a candidate given its
/// source.
pub trait ConsistencyScorer: Send + Sync {
    fn score(&self, candidate: Candidate<'_>, source: &str) -> Result<f64>;
}

impl<S: ConsistencyScorer + ?Sized> ConsistencyScorer for &S {
    fn score(&self, candidate: Candidate<'_>, source: &str) -> Result<f64> {
        (**self).score(candidate, source)
    }
}

impl<S: ConsistencyScorer + ?Sized> ConsistencyScorer for Box<S> {
    fn score(&self, candidate: Candidate<'_>, source: &str) -> Result<f64> {
        (**self).score(candidate, source)
    }
}

type Trigram = [char; 3];

/// Sparse trigram count vector, sorted by trigram, with its L2 norm.
#[derive(Debug, Clone)]
struct TrigramProfile {
    word: String,
    grams: Vec<(Trigram, f64)>,
    norm: f64,
}

impl TrigramProfile {
    fn new(word: String) -> Self {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts: BTreeMap<Trigram, f64> = BTreeMap::new();
        for w in padded.windows(3) {
            *counts.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
        }
        let grams: Vec<_> = counts.into_iter().collect();
        let norm = grams.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        TrigramProfile { word, grams, norm }
    }

    fn cosine(&self, other: &TrigramProfile) -> f64 {
        if self.word == other.word {
            return 1.0;
        }
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < self.grams.len() && j < other.grams.len() {
            match self.grams[i].0.cmp(&other.grams[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += self.grams[i].1 * other.grams[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        if dot == 0.0 {
            0.0
        } else {
            (dot / (self.norm * other.norm)).min(1.0)
        }
    }
}

fn profiles(text: &str) -> Vec<TrigramProfile> {
    tokenize(text)
        .lowercase_words()
        .into_iter()
        .map(TrigramProfile::new)
        .collect()
}

fn greedy_f1(candidate: &[TrigramProfile], source: &[TrigramProfile]) -> f64 {
    let best = |from: &[TrigramProfile], to: &[TrigramProfile]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|a| to.iter().map(|b| a.cosine(b)).fold(0.0, f64::max))
            .sum();
        total / from.len() as f64
    };
    let precision = best(candidate, source);
    let recall = best(source, candidate);
    if precision + recall == 0.0 {
        0.0
    } else {
        // grouped so that swapping precision and recall is bit-exact
        (2.0 * (precision * recall) / (precision + recall)).clamp(0.0, 1.0)
    }
}

/// Greedy trigram-cosine token-matching F1 between `candidate` and `source`.
pub fn lexical_score(candidate: &str, source: &str) -> Result<f64> {
    let cand = profiles(candidate);
    if cand.is_empty() {
        return Err(Error::Empty("candidate"));
    }
    let src = profiles(source);
    if src.is_empty() {
        return Ok(0.0);
    }
    Ok(greedy_f1(&cand, &src))
}

/// Built-in scorer backed by [`lexical_score`]. Source profiles are cached
/// because decoding scores many candidates against one source.
#[derive(Debug, Default)]
pub struct LexicalScorer {
    cache: Mutex<Option<(String, std::sync::Arc<Vec<TrigramProfile>>)>>,
}

impl LexicalScorer {
    pub fn new() -> Self {
        Self::default()
    }

    fn source_profiles(&self, source: &str) -> std::sync::Arc<Vec<TrigramProfile>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((cached, prof)) = cache.as_ref() {
            if cached == source {
                return prof.clone();
            }
        }
        let prof = std::sync::Arc::new(profiles(source));
        *cache = Some((source.to_string(), prof.clone()));
        prof
    }
}

impl ConsistencyScorer for LexicalScorer {
    fn score(&self, candidate: Candidate<'_>, source: &str) -> Result<f64> {
        let cand = profiles(candidate.text);
        if cand.is_empty() {
            return Err(Error::Empty("candidate"));
        }
        let src = self.source_profiles(source);
        if src.is_empty() {
            return Ok(0.0);
        }
        Ok(greedy_f1(&cand, &src))
    }
}

/// Scores looked up by candidate id, falling back to the candidate text as
/// the key when no id is given.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedScorer {
    scores: HashMap<String, f64>,
}

impl PrecomputedScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, score: f64) -> Result<()> {
        check_unit("precomputed score", score, 0.0, 1.0)?;
        self.scores.insert(id.into(), score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Parses `candidate_id<TAB>score` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut scorer = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, score) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected candidate_id<TAB>score"))?;
            let value: f64 = score
                .trim()
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad score {score:?}: {e}")))?;
            scorer
                .insert(id, value)
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(scorer)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

impl ConsistencyScorer for PrecomputedScorer {
    fn score(&self, candidate: Candidate<'_>, _source: &str) -> Result<f64> {
        let key = candidate.id.unwrap_or(candidate.text);
        self.scores
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingScore(key.to_string()))
    }
}

/// Counts calls made to the wrapped scorer.
#[derive(Debug, Default)]
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        CountingScorer {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<S: ConsistencyScorer> ConsistencyScorer for CountingScorer<S> {
    fn score(&self, candidate: Candidate<'_>, source: &str) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(candidate, source)
    }
}

/// Maps a raw score in `[0, 1]` to `[0, 1]`, zero below 0.60.
pub fn consistency_subscore<F: Scalar>(raw: F) -> Result<F> {
    check_unit("f_B", raw, 0.0, 1.0)?;
    let floor = F::of(CONSISTENCY_FLOOR);
    if raw >= floor {
        Ok((raw - floor) / (F::one() - floor))
    } else {
        Ok(F::zero())
    }
}

/// Finds the entities of a text. The decoder's hallucination check goes
/// through this so that externally supplied entity lists can replace the
/// rule-based extractor.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str) -> EntitySet;
}

/// The rule-based extractor of [`crate::textseg::extract_entities`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicEntities;

impl EntityExtractor for HeuristicEntities {
    fn extract(&self, text: &str) -> EntitySet {
        entities_in(&tokenize(text))
    }
}

fn lower_surfaces(text: &str) -> Vec<String> {
    tokenize(text)
        .iter()
        .map(|t| t.surface.to_lowercase())
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// A fixed list of entity strings; a text's entities are the listed strings
/// that occur in it as a token sequence (case-insensitive).
#[derive(Debug, Clone, Default)]
pub struct ListedEntities {
    entries: Vec<(String, Vec<String>)>,
}

impl ListedEntities {
    pub fn new<I, S>(entities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries: Vec<(String, Vec<String>)> = entities
            .into_iter()
            .map(|e| e.as_ref().trim().to_string())
            .filter(|e| !e.is_empty())
            .map(|e| {
                let toks = lower_surfaces(&e);
                (e, toks)
            })
            .collect();
        entries.sort();
        entries.dedup();
        ListedEntities { entries }
    }
}

impl EntityExtractor for ListedEntities {
    fn extract(&self, text: &str) -> EntitySet {
        let toks = lower_surfaces(text);
        self.entries
            .iter()
            .filter(|(_, needle)| contains_run(&toks, needle))
            .map(|(e, _)| e.as_str())
            .collect()
    }
}

/// Entity lists per document read from `document_id<TAB>entity` lines. The
/// id `*` applies to every document.
#[derive(Debug, Clone, Default)]
pub struct ExternalEntityFile {
    by_id: BTreeMap<String, Vec<String>>,
}

impl ExternalEntityFile {
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, entity) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected document_id<TAB>entity"))?;
            if entity.trim().is_empty() {
                return Err(Error::parse(i + 1, "empty entity"));
            }
            by_id
                .entry(id.to_string())
                .or_default()
                .push(entity.trim().to_string());
        }
        Ok(ExternalEntityFile { by_id })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    pub fn for_document(&self, id: &str) -> ListedEntities {
        let listed = self
            .by_id
            .get(id)
            .into_iter()
            .chain(self.by_id.get("*"))
            .flatten();
        ListedEntities::new(listed)
    }
}

/// Entities of `candidate` whose token sequence does not occur in `source`.
pub fn unsupported_entities(candidate: &str, source: &str) -> EntitySet {
    unsupported_entities_with(&HeuristicEntities, candidate, source)
}

pub fn unsupported_entities_with(
    extractor: &dyn EntityExtractor,
    candidate: &str,
    source: &str,
) -> EntitySet {
    let entities = extractor.extract(candidate);
    if entities.is_empty() {
        return entities;
    }
    let src = lower_surfaces(source);
    entities
        .iter()
        .filter(|e| !contains_run(&src, &lower_surfaces(e)))
        .collect()
}
