//! Readability and consistency unlikelihood losses.
//!
//! At every step the word with the highest probability is penalized by
//! `-log(1 - p)`, weighted by its FK grade (readability term) or by whether
//! it is a hallucinated entity (consistency term). The total objective is
//! `nll + lambda_r * ul_r + lambda_c * ul_c`.
//!
//! [`ToyModel`] is a free logit table (one row per step) that makes the
//! objective and its gradient checkable at desk scale.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::readability::FkWeightTable;
use crate::scalar::Scalar;
use crate::textseg::tokenize;
use crate::vocab::Vocabulary;

/// Default readability weight.
pub const DEFAULT_LAMBDA_R: f64 = 7.5e-4;
/// Default consistency weight.
pub const DEFAULT_LAMBDA_C: f64 = 2.5e-4;
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Probability vector over the vocabulary for one generation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution<F> {
    probs: Vec<F>,
    argmax: usize,
}

fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<F: Scalar> StepDistribution<F> {
    /// Validates that every entry is in `[0, 1]` and the total is 1.
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= F::zero() && **p <= F::one())) {
            return Err(Error::InvalidDistribution(format!("probability {p} outside [0, 1]")));
        }
        let sum = probs.iter().fold(F::zero(), |a, &b| a + b);
        let tol = (F::epsilon() * F::from_count(4 * probs.len())).max(F::of(1e-9));
        if (sum - F::one()).abs() > tol {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        let argmax = argmax(&probs);
        Ok(StepDistribution { probs, argmax })
    }

    /// Softmax of `logits`.
    pub fn from_logits(logits: &[F]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        let max = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total = exps.iter().fold(F::zero(), |a, &b| a + b);
        let probs: Vec<F> = exps.into_iter().map(|e| e / total).collect();
        let argmax = argmax(&probs);
        Ok(StepDistribution { probs, argmax })
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> F {
        self.probs[index]
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        self.argmax
    }

    pub fn argmax_prob(&self) -> F {
        self.probs[self.argmax]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Vocabulary ids of hallucinated words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HallucinationSet {
    indices: BTreeSet<usize>,
}

impl HallucinationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: usize) -> bool {
        self.indices.insert(index)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn words<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.iter().map(|i| vocab.word(i)).collect()
    }

    /// One word per line.
    pub fn to_lines(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for w in self.words(vocab) {
            let _ = writeln!(out, "{w}");
        }
        out
    }

    pub fn from_lines(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut set = Self::new();
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            let id = vocab
                .id(word)
                .ok_or_else(|| Error::parse(i + 1, format!("word {word:?} not in vocabulary")))?;
            set.insert(id);
        }
        Ok(set)
    }
}

impl FromIterator<usize> for HallucinationSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        HallucinationSet {
            indices: iter.into_iter().collect(),
        }
    }
}

/// Weights of the two unlikelihood terms and the clamp for `1 - p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossConfig<F> {
    pub lambda_r: F,
    pub lambda_c: F,
    pub epsilon: F,
}

impl<F: Scalar> Default for LossConfig<F> {
    fn default() -> Self {
        LossConfig {
            lambda_r: F::of(DEFAULT_LAMBDA_R),
            lambda_c: F::of(DEFAULT_LAMBDA_C),
            epsilon: F::of(DEFAULT_EPSILON),
        }
    }
}

impl<F: Scalar> LossConfig<F> {
    pub fn new(lambda_r: F, lambda_c: F) -> Result<Self> {
        let config = LossConfig {
            lambda_r,
            lambda_c,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, v: F| Error::OutOfRange {
            name,
            value: v.as_f64(),
            lo: 0.0,
            hi: f64::INFINITY,
        };
        if self.lambda_r.is_nan() || self.lambda_r < F::zero() {
            return Err(bad("lambda_R", self.lambda_r));
        }
        if self.lambda_c.is_nan() || self.lambda_c < F::zero() {
            return Err(bad("lambda_C", self.lambda_c));
        }
        if !(self.epsilon > F::zero() && self.epsilon < F::one()) {
            return Err(Error::OutOfRange {
                name: "epsilon",
                value: self.epsilon.as_f64(),
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }
}

/// `-log(max(1 - p, epsilon))`.
fn unlikelihood<F: Scalar>(p: F, epsilon: F) -> F {
    -(F::one() - p).max(epsilon).ln()
}

/// Readability term with weights already aligned to vocabulary ids.
pub fn ul_readability_aligned<F: Scalar>(steps: &[StepDistribution<F>], weights: &[F], epsilon: F) -> F {
    steps.iter().fold(F::zero(), |acc, s| {
        let w = weights[s.argmax()];
        if w == F::zero() {
            acc
        } else {
            acc + w * unlikelihood(s.argmax_prob(), epsilon)
        }
    })
}

/// Sum over steps of `FK(argmax word) * -log(1 - p_argmax)`.
pub fn ul_readability<F: Scalar>(
    steps: &[StepDistribution<F>],
    vocab: &Vocabulary,
    weights: &FkWeightTable<F>,
    epsilon: F,
) -> Result<F> {
    check_width(steps, vocab)?;
    let aligned = weights.aligned(vocab)?;
    Ok(ul_readability_aligned(steps, &aligned, epsilon))
}

/// Sum over steps whose argmax is in `e` of `-log(1 - p_argmax)`.
pub fn ul_consistency<F: Scalar>(steps: &[StepDistribution<F>], e: &HallucinationSet, epsilon: F) -> F {
    steps
        .iter()
        .filter(|s| e.contains(s.argmax()))
        .fold(F::zero(), |acc, s| acc + unlikelihood(s.argmax_prob(), epsilon))
}

fn check_width<F>(steps: &[StepDistribution<F>], vocab: &Vocabulary) -> Result<()> {
    match steps.iter().find(|s| s.probs.len() != vocab.len()) {
        Some(s) => Err(Error::Shape(format!(
            "distribution over {} entries for a vocabulary of {}",
            s.probs.len(),
            vocab.len()
        ))),
        None => Ok(()),
    }
}

/// Words of the greedy sequence that occur in neither the input nor the
/// label (case-insensitively) and look like entities.
///
/// A word counts as an entity when it is numeric or capitalized. The
/// sentence-position exemption of [`crate::textseg::extract_entities`] is
/// not applied: it exists to discount orthographic capitals on ordinary
/// words, and every word reaching this filter is already absent from both
/// texts in any casing.
pub fn hallucinated_set(greedy: &[usize], vocab: &Vocabulary, input: &str, label: &str) -> HallucinationSet {
    let known: HashSet<String> = tokenize(input)
        .iter()
        .chain(tokenize(label).iter())
        .map(|t| t.surface.to_lowercase())
        .collect();
    greedy
        .iter()
        .copied()
        .filter(|&id| !vocab.is_special(id))
        .filter(|&id| {
            let word = vocab.word(id);
            if known.contains(&word.to_lowercase()) {
                return false;
            }
            let found = tokenize(word).words().any(|t| t.is_numeric || t.is_capitalized);
            found
        })
        .collect()
}

/// The three loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown<F> {
    pub nll: F,
    pub ul_r: F,
    pub ul_c: F,
    pub total: F,
}

pub fn loss_breakdown<F: Scalar>(
    nll: F,
    steps: &[StepDistribution<F>],
    vocab: &Vocabulary,
    weights: &FkWeightTable<F>,
    e: &HallucinationSet,
    config: &LossConfig<F>,
) -> Result<LossBreakdown<F>> {
    if !nll.is_finite() {
        return Err(Error::OutOfRange {
            name: "nll",
            value: nll.as_f64(),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        });
    }
    config.validate()?;
    let ul_r = ul_readability(steps, vocab, weights, config.epsilon)?;
    let ul_c = ul_consistency(steps, e, config.epsilon);
    Ok(LossBreakdown {
        nll,
        ul_r,
        ul_c,
        total: nll + config.lambda_r * ul_r + config.lambda_c * ul_c,
    })
}

/// `nll + lambda_r * ul_r + lambda_c * ul_c`.
pub fn total_loss<F: Scalar>(
    nll: F,
    steps: &[StepDistribution<F>],
    vocab: &Vocabulary,
    weights: &FkWeightTable<F>,
    e: &HallucinationSet,
    config: &LossConfig<F>,
) -> Result<F> {
    Ok(loss_breakdown(nll, steps, vocab, weights, e, config)?.total)
}

/// Row-major `(step, vocabulary)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }
}

/// Free logits for each generation step. Stand-in for a seq2seq decoder
/// under teacher forcing: row `t` is the model's output at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<F> {
    logits: Matrix<F>,
}

impl<F: Scalar> ToyModel<F> {
    pub fn new(logits: Matrix<F>) -> Result<Self> {
        if logits.rows == 0 || logits.cols == 0 || logits.data.len() != logits.rows * logits.cols {
            return Err(Error::Shape(format!(
                "{}x{} logits with {} entries",
                logits.rows,
                logits.cols,
                logits.data.len()
            )));
        }
        if logits.data.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite logit".into()));
        }
        Ok(ToyModel { logits })
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged logit rows".into()));
        }
        let n = rows.len();
        Self::new(Matrix {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn steps(&self) -> usize {
        self.logits.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.cols
    }

    pub fn logits(&self) -> &Matrix<F> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Matrix<F> {
        &mut self.logits
    }

    pub fn distributions(&self) -> Vec<StepDistribution<F>> {
        (0..self.steps())
            .map(|t| StepDistribution::from_logits(self.logits.row(t)).expect("rows are nonempty"))
            .collect()
    }

    /// Per-step argmax ids, the model's greedy output.
    pub fn greedy(&self) -> Vec<usize> {
        self.distributions().iter().map(StepDistribution::argmax).collect()
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.len() != self.steps() {
            return Err(Error::Shape(format!(
                "target of length {} for {} steps",
                target.len(),
                self.steps()
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::Shape(format!("target id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Summed cross-entropy of `target`.
    pub fn nll(&self, target: &[usize]) -> Result<F> {
        self.check_target(target)?;
        Ok(self
            .distributions()
            .iter()
            .zip(target)
            .fold(F::zero(), |acc, (d, &y)| acc - d.prob(y).ln()))
    }

    /// Total loss with the penalized word of each step given explicitly.
    /// With `frozen = self.greedy()` this equals [`ToyModel::loss`].
    pub fn loss_frozen(
        &self,
        target: &[usize],
        weights: &[F],
        e: &HallucinationSet,
        config: &LossConfig<F>,
        frozen: &[usize],
    ) -> Result<LossBreakdown<F>> {
        self.check_target(target)?;
        self.check_weights(weights)?;
        let dists = self.distributions();
        let mut nll = F::zero();
        let mut ul_r = F::zero();
        let mut ul_c = F::zero();
        for ((d, &y), &a) in dists.iter().zip(target).zip(frozen) {
            nll = nll - d.prob(y).ln();
            let u = unlikelihood(d.prob(a), config.epsilon);
            ul_r = ul_r + weights[a] * u;
            if e.contains(a) {
                ul_c = ul_c + u;
            }
        }
        Ok(LossBreakdown {
            nll,
            ul_r,
            ul_c,
            total: nll + config.lambda_r * ul_r + config.lambda_c * ul_c,
        })
    }

    pub fn loss(
        &self,
        target: &[usize],
        weights: &[F],
        e: &HallucinationSet,
        config: &LossConfig<F>,
    ) -> Result<LossBreakdown<F>> {
        self.loss_frozen(target, weights, e, config, &self.greedy())
    }

    fn check_weights(&self, weights: &[F]) -> Result<()> {
        if weights.len() != self.vocab_size() {
            return Err(Error::Shape(format!(
                "{} weights for a vocabulary of {}",
                weights.len(),
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Gradient of the total loss with respect to every logit, holding the
    /// argmax choice and `e` fixed.
    ///
    /// Per step with probabilities `p`, target `y` and argmax `a`:
    /// `dL/dz_j = p_j - [j = y] + c * p_a ([j = a] - p_j) / (1 - p_a)` where
    /// `c = lambda_r * w_a + lambda_c * [a in e]`; the unlikelihood part is
    /// zero where `1 - p_a` is clamped.
    pub fn loss_gradient(
        &self,
        target: &[usize],
        weights: &[F],
        e: &HallucinationSet,
        config: &LossConfig<F>,
    ) -> Result<Matrix<F>> {
        self.check_target(target)?;
        self.check_weights(weights)?;
        let mut grad = Matrix::zeros(self.steps(), self.vocab_size());
        for (t, d) in self.distributions().iter().enumerate() {
            let row = grad.row_mut(t);
            for (g, &p) in row.iter_mut().zip(d.probs()) {
                *g = p;
            }
            row[target[t]] = row[target[t]] - F::one();

            let a = d.argmax();
            let mut coef = config.lambda_r * weights[a];
            if e.contains(a) {
                coef = coef + config.lambda_c;
            }
            let p_a = d.prob(a);
            // 1 - p_a from the other entries keeps precision when p_a is near 1
            let rest = d
                .probs()
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != a)
                .fold(F::zero(), |acc, (_, &p)| acc + p);
            if coef == F::zero() || rest <= config.epsilon {
                continue;
            }
            let scale = coef * p_a / rest;
            for (j, (g, &p)) in row.iter_mut().zip(d.probs()).enumerate() {
                let delta = if j == a { F::one() } else { F::zero() };
                *g = *g + scale * (delta - p);
            }
        }
        Ok(grad)
    }

    /// One plain gradient-descent update.
    pub fn sgd_step(&mut self, grad: &Matrix<F>, learning_rate: F) -> Result<()> {
        if grad.rows != self.logits.rows || grad.cols != self.logits.cols {
            return Err(Error::Shape("gradient does not match logits".into()));
        }
        for (z, &g) in self.logits.data.iter_mut().zip(&grad.data) {
            *z = *z - learning_rate * g;
        }
        Ok(())
    }
}

/// Gradient of [`total_loss`] for `model` with weights looked up in `table`.
pub fn loss_gradient<F: Scalar>(
    model: &ToyModel<F>,
    target: &[usize],
    vocab: &Vocabulary,
    table: &FkWeightTable<F>,
    e: &HallucinationSet,
    config: &LossConfig<F>,
) -> Result<Matrix<F>> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Shape(format!(
            "model has {} logits per step, vocabulary has {} words",
            model.vocab_size(),
            vocab.len()
        )));
    }
    model.loss_gradient(target, &table.aligned(vocab)?, e, config)
}
