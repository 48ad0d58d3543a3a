//! Random scripted language models and an enumeration oracle for the
//! reranking beam search.

use std::cmp::Ordering;
use std::hash::{Hash, Hasher};

use medsimp::consistency::{Candidate, ConsistencyScorer};
use medsimp::decoder::LanguageModel;
use medsimp::ulloss::StepDistribution;
use medsimp::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Content words with hand-counted syllables. "1999" is an entity absent
/// from [`ORACLE_SOURCE`]; "2001" is present there.
pub const WORDS: [(&str, usize); 8] = [
    ("go", 1),
    ("water", 2),
    ("medication", 4),
    ("1999", 1),
    ("simple", 2),
    ("facilitate", 4),
    ("help", 1),
    ("2001", 1),
];

pub const ORACLE_SOURCE: &str = "the water in 2001 helped";

fn mix(seed: u64, prefix: &[usize]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut h);
    prefix.hash(&mut h);
    h.finish()
}

/// Every prefix gets its own pseudo-random distribution. Weights are small
/// integers so exact ties between continuations are common.
pub struct RandomLm {
    pub vocab: Vocabulary,
    pub seed: u64,
    pub zero_rate: f64,
}

impl RandomLm {
    pub fn new(content: usize, seed: u64) -> Self {
        RandomLm {
            vocab: Vocabulary::new(WORDS[..content].iter().map(|(w, _)| *w)),
            seed,
            zero_rate: 0.3,
        }
    }
}

impl LanguageModel for RandomLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[usize], _source: &str) -> StepDistribution<f64> {
        let n = self.vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, prefix));
        let mut w: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 || rng.random_bool(self.zero_rate) {
                    0.0
                } else {
                    rng.random_range(1..=4) as f64
                }
            })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            w[rng.random_range(1..n)] = 1.0;
        }
        let total: f64 = w.iter().sum();
        StepDistribution::new(w.into_iter().map(|x| x / total).collect()).unwrap()
    }
}

/// Deterministic pseudo-random consistency in `[0, 1)` keyed by text.
pub struct HashScorer;

pub fn hash_score(text: &str) -> f64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    text.hash(&mut h);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64
}

impl ConsistencyScorer for HashScorer {
    fn score(&self, candidate: Candidate<'_>, _source: &str) -> medsimp::Result<f64> {
        Ok(hash_score(candidate.text))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub width: usize,
    pub k: usize,
    pub max_length: usize,
    pub heuristic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub content: Vec<usize>,
    pub warning: bool,
    pub rerank_steps: Vec<usize>,
}

const BOS: usize = 0;
const EOS: usize = 1;

struct Seq {
    ids: Vec<usize>,
    lp: f64,
}

impl Seq {
    fn finished(&self) -> bool {
        *self.ids.last().unwrap() == EOS
    }

    fn content(&self) -> &[usize] {
        let end = self.ids.len() - usize::from(self.finished());
        &self.ids[1..end]
    }
}

/// Sum of log-probabilities along the whole path, from BOS.
fn path_log_prob(lm: &RandomLm, ids: &[usize]) -> f64 {
    let mut lp = 0.0;
    for t in 1..ids.len() {
        lp += lm.next_distribution(&ids[..t], "").prob(ids[t]).ln();
    }
    lp
}

fn syllables(word: &str) -> usize {
    WORDS.iter().find(|(w, _)| *w == word).unwrap().1
}

/// Composite score and whether it was forced to zero.
fn composite(lm: &RandomLm, content: &[usize], heuristic: bool) -> (f64, bool) {
    let words: Vec<&str> = content.iter().map(|&i| lm.vocab.word(i)).collect();
    if words.is_empty() {
        return (0.0, false);
    }
    let n = words.len() as f64;
    let syl = words.iter().map(|w| syllables(w)).sum::<usize>() as f64;
    // one sentence: no terminators in the vocabulary
    let fk = 0.39 * (n / 1.0) + 11.8 * (syl / n) - 15.59;
    let r_f = if fk < 4.0 {
        1.0
    } else if fk > 20.0 {
        0.0
    } else {
        (20.0 - fk) / (20.0 - 4.0)
    };
    let f_b = hash_score(&words.join(" "));
    let r_b = if f_b >= 0.6 { (f_b - 0.6) / (1.0 - 0.6) } else { 0.0 };
    let zeroed = heuristic && words.contains(&"1999");
    if zeroed || r_f + r_b == 0.0 {
        return (0.0, zeroed);
    }
    let h = (r_f + r_f) * r_b / (r_f + r_b);
    (h * h, zeroed)
}

fn by_log_prob(a: &Seq, b: &Seq) -> Ordering {
    b.lp.total_cmp(&a.lp)
        .then(a.content().len().cmp(&b.content().len()))
        .then(a.content().cmp(b.content()))
        .then(b.finished().cmp(&a.finished()))
}

/// `(sequence, r, zeroed, pool index)`
type Scored<'a> = (&'a Seq, f64, bool, usize);

fn by_score(lm: &RandomLm, a: Scored<'_>, b: Scored<'_>) -> Ordering {
    let text = |s: &Seq| -> Vec<String> { s.content().iter().map(|&i| lm.vocab.word(i).to_string()).collect() };
    b.1.total_cmp(&a.1)
        .then(a.2.cmp(&b.2))
        .then(b.0.lp.total_cmp(&a.0.lp))
        .then(a.0.content().len().cmp(&b.0.content().len()))
        .then(text(a.0).cmp(&text(b.0)))
        .then(a.3.cmp(&b.3))
}

/// Expands every survivor by every continuation, recomputing each path's
/// probability from scratch, and applies the pruning schedule step by step.
pub fn oracle_decode(lm: &RandomLm, cfg: OracleConfig) -> OracleResult {
    let n = lm.vocab.len();
    let mut live = vec![Seq { ids: vec![BOS], lp: 0.0 }];
    let mut done: Vec<Seq> = Vec::new();
    let mut rerank_steps = Vec::new();
    for t in 1..=cfg.max_length {
        let mut all: Vec<Seq> = Vec::new();
        for s in &live {
            for tok in 1..n {
                let mut ids = s.ids.clone();
                ids.push(tok);
                let p = lm.next_distribution(&s.ids, "").prob(tok);
                if p > 0.0 {
                    let lp = path_log_prob(lm, &ids);
                    all.push(Seq { ids, lp });
                }
            }
        }
        if all.is_empty() {
            break;
        }
        all.sort_by(by_log_prob);
        all.truncate(2 * cfg.width);
        let kept: Vec<Seq> = if t % cfg.k == 0 {
            rerank_steps.push(t);
            let scores: Vec<(f64, bool)> = all.iter().map(|s| composite(lm, s.content(), cfg.heuristic)).collect();
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.sort_by(|&i, &j| {
                by_score(lm, (&all[i], scores[i].0, scores[i].1, i), (&all[j], scores[j].0, scores[j].1, j))
            });
            order.truncate(cfg.width);
            let mut slots: Vec<Option<Seq>> = all.into_iter().map(Some).collect();
            order.into_iter().map(|i| slots[i].take().unwrap()).collect()
        } else {
            all.truncate(cfg.width);
            all
        };
        live.clear();
        for s in kept {
            if s.finished() {
                done.push(s);
            } else {
                live.push(s);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    done.extend(live);
    let pool = done;
    let best_lp = |idx: &[usize]| -> usize {
        *idx.iter().min_by(|&&i, &&j| by_log_prob(&pool[i], &pool[j])).unwrap()
    };
    let everyone: Vec<usize> = (0..pool.len()).collect();
    let (chosen, warning) = if cfg.k <= cfg.max_length {
        let scored: Vec<(f64, bool)> = pool.iter().map(|s| composite(lm, s.content(), cfg.heuristic)).collect();
        if scored.iter().all(|s| s.1) {
            (best_lp(&everyone), true)
        } else {
            let i = (0..pool.len())
                .min_by(|&i, &j| {
                    by_score(lm, (&pool[i], scored[i].0, scored[i].1, i), (&pool[j], scored[j].0, scored[j].1, j))
                })
                .unwrap();
            (i, false)
        }
    } else {
        let ok: Vec<usize> = everyone
            .iter()
            .copied()
            .filter(|&i| !cfg.heuristic || !composite(lm, pool[i].content(), true).1)
            .collect();
        if ok.is_empty() {
            (best_lp(&everyone), true)
        } else {
            (best_lp(&ok), false)
        }
    };
    OracleResult {
        content: pool[chosen].content().to_vec(),
        warning,
        rerank_steps,
    }
}
