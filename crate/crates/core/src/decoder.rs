//! Beam search with periodic reranking by readability and consistency.
//!
//! Every step expands each live beam by every vocabulary entry with nonzero
//! probability and keeps the `expansion_factor * beam_width` candidates with
//! the highest cumulative log-probability. On steps that are multiples of
//! the rerank interval those candidates are reordered by
//! [`crate::rerank::rank_with`]; on all other steps they keep log-probability
//! order. The first `beam_width` survive. Survivors that emitted EOS are
//! frozen and wait for the final selection.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use crate::consistency::{unsupported_entities_with, ConsistencyScorer, EntityExtractor, HeuristicEntities};
use crate::error::{Error, Result};
use crate::rerank::{compare_ranked, BeamScore, Hypothesis, RerankContext};
use crate::textseg::tokenize;
use crate::ulloss::StepDistribution;
use crate::vocab::Vocabulary;

/// Next-token distributions over a fixed vocabulary.
pub trait LanguageModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Distribution of the token following `prefix`, which starts with BOS.
    fn next_distribution(&self, prefix: &[usize], source: &str) -> StepDistribution<f64>;
}

/// Add-one smoothed n-gram model. It ignores the source text; source
/// conditioning comes only from which target texts it was trained on.
#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    vocab: Vocabulary,
    counts: HashMap<Vec<usize>, HashMap<usize, usize>>,
    totals: HashMap<Vec<usize>, usize>,
}

/// Trains an order-`order` model on the token surfaces of `corpus`.
///
/// The outcome space is every corpus token plus EOS; BOS only pads contexts
/// and is never predicted.
pub fn train_ngram_lm<S: AsRef<str>>(corpus: &[S], order: usize) -> Result<NGramLm> {
    if order == 0 {
        return Err(Error::ZeroOrder);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<Vec<String>> = corpus
        .iter()
        .map(|t| tokenize(t.as_ref()).iter().map(|tok| tok.surface.clone()).collect())
        .collect();
    let vocab = Vocabulary::new(sentences.iter().flatten());
    let mut lm = NGramLm {
        order,
        vocab,
        counts: HashMap::new(),
        totals: HashMap::new(),
    };
    for sentence in &sentences {
        let mut padded = vec![Vocabulary::BOS_ID; order - 1];
        padded.extend(lm.vocab.encode(sentence)?);
        padded.push(Vocabulary::EOS_ID);
        for i in (order - 1)..padded.len() {
            let context = padded[i + 1 - order..i].to_vec();
            *lm.counts
                .entry(context.clone())
                .or_default()
                .entry(padded[i])
                .or_insert(0) += 1;
            *lm.totals.entry(context).or_insert(0) += 1;
        }
    }
    Ok(lm)
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of tokens the model can emit (vocabulary minus BOS).
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() - 1
    }

    fn context(&self, prefix: &[usize]) -> Vec<usize> {
        let want = self.order - 1;
        let take = prefix.len().min(want);
        let mut ctx = vec![Vocabulary::BOS_ID; want - take];
        ctx.extend_from_slice(&prefix[prefix.len() - take..]);
        ctx
    }

    /// `(count(context, word) + 1) / (count(context) + V)`; 0 for BOS.
    pub fn probability(&self, context: &[usize], word: usize) -> f64 {
        if word == Vocabulary::BOS_ID {
            return 0.0;
        }
        let ctx = self.context(context);
        let joint = self
            .counts
            .get(&ctx)
            .and_then(|m| m.get(&word))
            .copied()
            .unwrap_or(0);
        let total = self.totals.get(&ctx).copied().unwrap_or(0);
        (joint + 1) as f64 / (total + self.outcome_count()) as f64
    }
}

impl LanguageModel for NGramLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize], _source: &str) -> StepDistribution<f64> {
        let probs = (0..self.vocab.len())
            .map(|w| self.probability(prefix, w))
            .collect();
        StepDistribution::new(probs).expect("laplace estimates form a distribution")
    }
}

/// Lookup-table model: distributions keyed by the full prefix. Unlisted
/// prefixes emit EOS with probability 1.
#[derive(Debug, Clone)]
pub struct ScriptedLm {
    vocab: Vocabulary,
    table: HashMap<Vec<usize>, StepDistribution<f64>>,
}

impl ScriptedLm {
    pub fn new(vocab: Vocabulary) -> Self {
        ScriptedLm {
            vocab,
            table: HashMap::new(),
        }
    }

    /// Sets the distribution after `prefix` (words, without BOS). Words not
    /// listed get probability 0.
    pub fn set(&mut self, prefix: &[&str], probs: &[(&str, f64)]) -> Result<()> {
        let mut key = vec![Vocabulary::BOS_ID];
        key.extend(self.vocab.encode(prefix)?);
        let mut dense = vec![0.0; self.vocab.len()];
        for &(w, p) in probs {
            let id = self
                .vocab
                .id(w)
                .ok_or_else(|| Error::UnknownToken(w.to_string()))?;
            dense[id] = p;
        }
        self.table.insert(key, StepDistribution::new(dense)?);
        Ok(())
    }

    pub fn with(mut self, prefix: &[&str], probs: &[(&str, f64)]) -> Result<Self> {
        self.set(prefix, probs)?;
        Ok(self)
    }
}

impl LanguageModel for ScriptedLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize], _source: &str) -> StepDistribution<f64> {
        if let Some(d) = self.table.get(prefix) {
            return d.clone();
        }
        let mut probs = vec![0.0; self.vocab.len()];
        probs[Vocabulary::EOS_ID] = 1.0;
        StepDistribution::new(probs).expect("one-hot")
    }
}

/// Most probable non-BOS token per step (lowest id on ties) until EOS or
/// `max_length` tokens. Returns content ids without BOS or EOS.
pub fn greedy_decode(lm: &dyn LanguageModel, source: &str, max_length: usize) -> Vec<usize> {
    let mut prefix = vec![Vocabulary::BOS_ID];
    for _ in 0..max_length {
        let d = lm.next_distribution(&prefix, source);
        let mut best = None::<(usize, f64)>;
        for (id, &p) in d.probs().iter().enumerate().skip(1) {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((id, p));
            }
        }
        match best {
            Some((id, p)) if p > 0.0 && id != Vocabulary::EOS_ID => prefix.push(id),
            _ => break,
        }
    }
    prefix.remove(0);
    prefix
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoderConfig {
    pub beam_width: usize,
    /// Rerank on every step that is a multiple of this. Values above
    /// `max_length` disable reranking.
    pub rerank_interval: usize,
    pub max_length: usize,
    pub heuristic_on: bool,
    /// Exponent `a` in `log_prob / length^a` used for log-probability
    /// ordering of finished sequences.
    pub length_penalty: f64,
    /// Candidates considered per step, as a multiple of `beam_width`.
    pub expansion_factor: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_width: 4,
            rerank_interval: 5,
            max_length: 128,
            heuristic_on: true,
            length_penalty: 0.0,
            expansion_factor: 2,
        }
    }
}

impl DecoderConfig {
    /// Plain beam search: no reranking, no hallucination heuristic.
    pub fn vanilla(beam_width: usize, max_length: usize) -> Self {
        DecoderConfig {
            beam_width,
            rerank_interval: max_length + 1,
            max_length,
            heuristic_on: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beam width", self.beam_width),
            ("rerank interval", self.rerank_interval),
            ("max length", self.max_length),
            ("expansion factor", self.expansion_factor),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "length penalty must be a non-negative number, got {}",
                self.length_penalty
            )));
        }
        Ok(())
    }

    pub fn reranking_enabled(&self) -> bool {
        self.rerank_interval <= self.max_length
    }

    pub fn is_rerank_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.rerank_interval)
    }
}

/// A partial or finished decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Token ids starting with BOS; ends with EOS when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    /// Set when the beam went through a rerank.
    pub score: Option<BeamScore>,
}

impl Beam {
    fn root() -> Self {
        Beam {
            tokens: vec![Vocabulary::BOS_ID],
            log_prob: 0.0,
            finished: false,
            score: None,
        }
    }

    /// Ids without BOS and EOS.
    pub fn content(&self) -> &[usize] {
        let end = if self.finished {
            self.tokens.len() - 1
        } else {
            self.tokens.len()
        };
        &self.tokens[1..end]
    }

    /// Tokens generated so far, EOS included.
    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }

    fn hypothesis(&self, vocab: &Vocabulary) -> Hypothesis {
        Hypothesis {
            tokens: self.content().iter().map(|&i| vocab.word(i).to_string()).collect(),
            log_prob: self.log_prob,
        }
    }

    fn length_score(&self, penalty: f64) -> f64 {
        if penalty == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.generated_len().max(1) as f64).powf(penalty)
        }
    }
}

/// Log-probability order used between rerank steps and for unreranked final
/// selection: length-penalized score, log-probability, shorter content,
/// then token ids in vocabulary order.
pub fn compare_by_log_prob(a: &Beam, b: &Beam, length_penalty: f64) -> Ordering {
    b.length_score(length_penalty)
        .total_cmp(&a.length_score(length_penalty))
        .then_with(|| b.log_prob.total_cmp(&a.log_prob))
        .then_with(|| a.content().len().cmp(&b.content().len()))
        .then_with(|| a.content().cmp(b.content()))
        .then_with(|| b.finished.cmp(&a.finished))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeOutput {
    /// Content words, no BOS or EOS.
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub log_prob: f64,
    /// Whether the sequence ended with EOS (otherwise it hit `max_length`).
    pub finished: bool,
    pub score: BeamScore,
    /// Every final candidate had an unsupported entity; the output is the
    /// most probable of them.
    pub hallucination_warning: bool,
    /// Steps at which candidates were reranked.
    pub rerank_steps: Vec<usize>,
    /// Number of sequences that competed in the final selection.
    pub final_pool: usize,
}

impl DecodeOutput {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Beam search with the rule-based entity extractor.
pub fn beam_search(
    lm: &dyn LanguageModel,
    source: &str,
    config: &DecoderConfig,
    scorer: &dyn ConsistencyScorer,
) -> Result<DecodeOutput> {
    beam_search_with_entities(lm, source, config, scorer, &HeuristicEntities)
}

pub fn beam_search_with_entities(
    lm: &dyn LanguageModel,
    source: &str,
    config: &DecoderConfig,
    scorer: &dyn ConsistencyScorer,
    entities: &dyn EntityExtractor,
) -> Result<DecodeOutput> {
    config.validate()?;
    let vocab = lm.vocabulary();
    let ctx = RerankContext::new(source, scorer, config.heuristic_on).with_entities(entities);
    let pool_size = config.beam_width * config.expansion_factor;

    let mut live = vec![Beam::root()];
    let mut finished: Vec<Beam> = Vec::new();
    let mut rerank_steps = Vec::new();

    for step in 1..=config.max_length {
        let mut candidates = Vec::new();
        for beam in &live {
            let dist = lm.next_distribution(&beam.tokens, source);
            for (id, &p) in dist.probs().iter().enumerate() {
                if id == Vocabulary::BOS_ID || p <= 0.0 {
                    continue;
                }
                let mut tokens = beam.tokens.clone();
                tokens.push(id);
                candidates.push(Beam {
                    tokens,
                    log_prob: beam.log_prob + p.ln(),
                    finished: id == Vocabulary::EOS_ID,
                    score: None,
                });
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| compare_by_log_prob(a, b, config.length_penalty));
        candidates.truncate(pool_size);

        let kept: Vec<Beam> = if config.is_rerank_step(step) {
            rerank_steps.push(step);
            let hyps: Vec<Hypothesis> = candidates.iter().map(|c| c.hypothesis(vocab)).collect();
            let ranked = crate::rerank::rank_with(&hyps, &ctx, config.beam_width)?;
            ranked
                .into_iter()
                .map(|r| Beam {
                    score: Some(r.score),
                    ..candidates[r.index].clone()
                })
                .collect()
        } else {
            candidates.truncate(config.beam_width);
            candidates
        };

        live.clear();
        for beam in kept {
            if beam.finished {
                finished.push(beam);
            } else {
                live.push(beam);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    finished.extend(live);
    select_final(finished, vocab, &ctx, config, rerank_steps)
}

fn select_final(
    pool: Vec<Beam>,
    vocab: &Vocabulary,
    ctx: &RerankContext<'_>,
    config: &DecoderConfig,
    rerank_steps: Vec<usize>,
) -> Result<DecodeOutput> {
    let pool_len = pool.len();
    let by_log_prob = |beams: &[&Beam]| -> Option<usize> {
        (0..beams.len()).min_by(|&i, &j| compare_by_log_prob(beams[i], beams[j], config.length_penalty))
    };
    let refs: Vec<&Beam> = pool.iter().collect();

    let (chosen, score, warning) = if config.reranking_enabled() {
        let hyps: Vec<Hypothesis> = pool.iter().map(|b| b.hypothesis(vocab)).collect();
        // a beam scored at the last step it was reranked keeps that score
        let mut scored = Vec::with_capacity(pool.len());
        for (beam, h) in pool.iter().zip(&hyps) {
            scored.push(match beam.score {
                Some(s) => s,
                None => ctx.score_text(&h.text())?,
            });
        }
        if scored.iter().all(|s| s.hallucination_zeroed) {
            let i = by_log_prob(&refs).ok_or(Error::Empty("decode"))?;
            (i, scored[i], true)
        } else {
            let i = (0..pool.len())
                .min_by(|&i, &j| {
                    compare_ranked((&scored[i], &hyps[i]), (&scored[j], &hyps[j])).then(i.cmp(&j))
                })
                .ok_or(Error::Empty("decode"))?;
            (i, scored[i], false)
        }
    } else {
        let supported: Vec<usize> = (0..pool.len())
            .filter(|&i| {
                !config.heuristic_on
                    || unsupported_entities_with(ctx.entities, &pool[i].hypothesis(vocab).text(), ctx.source)
                        .is_empty()
            })
            .collect();
        let (i, warning) = if supported.is_empty() {
            (by_log_prob(&refs).ok_or(Error::Empty("decode"))?, true)
        } else {
            let subset: Vec<&Beam> = supported.iter().map(|&i| &pool[i]).collect();
            (supported[by_log_prob(&subset).expect("nonempty")], false)
        };
        let score = match pool[i].score {
            Some(s) => s,
            None => ctx.score_text(&pool[i].hypothesis(vocab).text())?,
        };
        (i, score, warning)
    };

    if warning {
        log::warn!(
            "every final candidate contains an unsupported entity; returning the most probable one"
        );
    }
    let beam = &pool[chosen];
    let ids = beam.content().to_vec();
    Ok(DecodeOutput {
        tokens: ids.iter().map(|&i| vocab.word(i).to_string()).collect(),
        ids,
        log_prob: beam.log_prob,
        finished: beam.finished,
        score,
        hallucination_warning: warning,
        rerank_steps,
        final_pool: pool_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::LexicalScorer;

    #[test]
    fn ngram_laplace() {
        let lm = train_ngram_lm(&["a b"], 2).unwrap();
        let v = lm.vocabulary();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        // V = {a, b, EOS}
        assert_eq!(lm.outcome_count(), 3);
        assert_eq!(lm.probability(&[0, a], b), 2.0 / 4.0);
        assert_eq!(lm.probability(&[0, a], Vocabulary::BOS_ID), 0.0);
        // only the last word matters for a bigram model
        let d = lm.next_distribution(&[0, b, b, a, b, b], "");
        assert_eq!(d, lm.next_distribution(&[0, b], ""));
        assert!((d.prob(Vocabulary::EOS_ID) - 0.5).abs() < 1e-12);
        // unseen context: uniform over outcomes
        let unseen = train_ngram_lm(&["a b", "c"], 3).unwrap();
        let v3 = unseen.vocabulary();
        let ctx = [0, v3.id("c").unwrap(), v3.id("c").unwrap()];
        let d = unseen.next_distribution(&ctx, "");
        assert!(d.probs()[1..].iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn unigram_ignores_context() {
        let lm = train_ngram_lm(&["a a b"], 1).unwrap();
        let a = lm.vocabulary().id("a").unwrap();
        let d1 = lm.next_distribution(&[0], "");
        let d2 = lm.next_distribution(&[0, a, a], "");
        assert_eq!(d1, d2);
        // counts a:2 b:1 EOS:1, total 4, V = 3
        assert!((d1.prob(a) - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn ngram_errors() {
        assert!(matches!(train_ngram_lm::<&str>(&[], 2), Err(Error::EmptyCorpus)));
        assert!(matches!(train_ngram_lm(&["a"], 0), Err(Error::ZeroOrder)));
    }

    fn script() -> ScriptedLm {
        ScriptedLm::new(Vocabulary::new(["a", "b"]))
            .with(&[], &[("a", 0.9), ("b", 0.1)])
            .unwrap()
            .with(&["a"], &[("b", 0.8), ("</s>", 0.2)])
            .unwrap()
            .with(&["a", "b"], &[("</s>", 1.0)])
            .unwrap()
    }

    #[test]
    fn greedy_follows_script() {
        let lm = script();
        let out = greedy_decode(&lm, "", 10);
        assert_eq!(lm.vocabulary().decode(&out), ["a", "b"]);
        let eos_first = ScriptedLm::new(Vocabulary::new(["a"]));
        assert!(greedy_decode(&eos_first, "", 10).is_empty());
        assert_eq!(greedy_decode(&lm, "", 1).len(), 1);
    }

    #[test]
    fn width_one_vanilla_matches_greedy() {
        let lm = script();
        let config = DecoderConfig::vanilla(1, 10);
        let out = beam_search(&lm, "a b", &config, &LexicalScorer::new()).unwrap();
        assert_eq!(out.ids, greedy_decode(&lm, "a b", 10));
        assert!(out.finished);
        assert!(out.rerank_steps.is_empty());
        assert!((out.log_prob - (0.9_f64.ln() + 0.8_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn rerank_schedule() {
        // never emits EOS, so every step runs
        let vocab = Vocabulary::new(["a", "b"]);
        struct Loop(Vocabulary);
        impl LanguageModel for Loop {
            fn vocabulary(&self) -> &Vocabulary {
                &self.0
            }
            fn next_distribution(&self, _: &[usize], _: &str) -> StepDistribution<f64> {
                StepDistribution::new(vec![0.0, 0.0, 0.6, 0.4]).unwrap()
            }
        }
        let lm = Loop(vocab);
        let config = DecoderConfig {
            rerank_interval: 3,
            max_length: 10,
            heuristic_on: false,
            ..Default::default()
        };
        let out = beam_search(&lm, "a b", &config, &LexicalScorer::new()).unwrap();
        assert_eq!(out.rerank_steps, [3, 6, 9]);
        assert_eq!(out.tokens.len(), 10);
        assert!(!out.finished);
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        let bad = DecoderConfig {
            beam_width: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DecoderConfig {
            length_penalty: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(!DecoderConfig::vanilla(4, 10).reranking_enabled());
    }

    #[test]
    fn all_hallucinated_still_returns_output() {
        let lm = ScriptedLm::new(Vocabulary::new(["in", "1999", "2000"]))
            .with(&[], &[("in", 1.0)])
            .unwrap()
            .with(&["in"], &[("1999", 0.7), ("2000", 0.3)])
            .unwrap();
        let config = DecoderConfig {
            beam_width: 2,
            rerank_interval: 2,
            max_length: 5,
            ..Default::default()
        };
        let out = beam_search(&lm, "it happened in 2020", &config, &LexicalScorer::new()).unwrap();
        assert!(out.hallucination_warning);
        assert_eq!(out.tokens, ["in", "1999"]);
        assert!(out.score.hallucination_zeroed);
    }
}
