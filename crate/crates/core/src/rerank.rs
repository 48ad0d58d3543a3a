//! Composite readability/consistency score and the beam ordering used when
//! reranking.

use std::cmp::Ordering;

use serde::Serialize;

use crate::consistency::{
    consistency_subscore, unsupported_entities_with, Candidate, ConsistencyScorer, EntityExtractor,
    HeuristicEntities,
};
use crate::error::Result;
use crate::readability::{readability_subscore, TextStats};
use crate::scalar::{check_unit, Scalar};
use crate::textseg::tokenize;

/// Squared harmonic mean of the two subscores; 0 when both are 0.
pub fn composite_score<F: Scalar>(readability: F, consistency: F) -> Result<F> {
    check_unit("r_F", readability, 0.0, 1.0)?;
    check_unit("r_B", consistency, 0.0, 1.0)?;
    let sum = readability + consistency;
    if sum == F::zero() {
        return Ok(F::zero());
    }
    let harmonic = (readability + readability) * consistency / sum;
    Ok(harmonic * harmonic)
}

/// Score breakdown of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BeamScore {
    /// FK grade of the candidate text.
    pub f_f: f64,
    /// Raw consistency score.
    pub f_b: f64,
    pub r_f: f64,
    pub r_b: f64,
    /// Composite score; forced to 0 when an unsupported entity was found.
    pub r: f64,
    pub hallucination_zeroed: bool,
}

impl BeamScore {
    pub fn from_raw(f_f: f64, f_b: f64, zeroed: bool) -> Result<Self> {
        let r_f = readability_subscore(f_f);
        let r_b = consistency_subscore(f_b)?;
        let r = if zeroed { 0.0 } else { composite_score(r_f, r_b)? };
        Ok(BeamScore {
            f_f,
            f_b,
            r_f,
            r_b,
            r,
            hallucination_zeroed: zeroed,
        })
    }
}

/// A candidate sequence of content tokens (no BOS/EOS) and its cumulative
/// log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, log_prob: f64) -> Self {
        Hypothesis {
            tokens: tokens.into_iter().map(Into::into).collect(),
            log_prob,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Everything needed to score candidates against one source.
#[derive(Clone, Copy)]
pub struct RerankContext<'a> {
    pub source: &'a str,
    pub scorer: &'a dyn ConsistencyScorer,
    pub entities: &'a dyn EntityExtractor,
    pub heuristic_on: bool,
}

impl<'a> RerankContext<'a> {
    pub fn new(source: &'a str, scorer: &'a dyn ConsistencyScorer, heuristic_on: bool) -> Self {
        RerankContext {
            source,
            scorer,
            entities: &HeuristicEntities,
            heuristic_on,
        }
    }

    pub fn with_entities(mut self, entities: &'a dyn EntityExtractor) -> Self {
        self.entities = entities;
        self
    }

    /// Scores a detokenized candidate. A candidate without words scores
    /// `f_F = 0`, `f_B = 0` (so `r = 0`) without consulting the scorer.
    pub fn score_text(&self, text: &str) -> Result<BeamScore> {
        let stats = TextStats::from_tokens(&tokenize(text));
        if stats.words == 0 {
            return BeamScore::from_raw(0.0, 0.0, false);
        }
        let f_f = stats.flesch_kincaid::<f64>()?.value();
        let f_b = self.scorer.score(Candidate::text(text), self.source)?;
        let zeroed = self.heuristic_on
            && !unsupported_entities_with(self.entities, text, self.source).is_empty();
        BeamScore::from_raw(f_f, f_b, zeroed)
    }
}

/// Position of a beam in the input list together with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedBeam {
    pub index: usize,
    pub score: BeamScore,
}

/// Orders by composite score (descending), zeroed beams after the rest at
/// equal score, then log-probability (descending), shorter sequence, and
/// lexicographic token order.
pub fn compare_ranked(a: (&BeamScore, &Hypothesis), b: (&BeamScore, &Hypothesis)) -> Ordering {
    b.0.r
        .total_cmp(&a.0.r)
        .then_with(|| a.0.hallucination_zeroed.cmp(&b.0.hallucination_zeroed))
        .then_with(|| compare_by_log_prob(a.1, b.1))
}

/// Log-probability descending, then shorter, then lexicographic.
pub fn compare_by_log_prob(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Scores every beam and returns the best `top_n` in rank order.
pub fn rank_beams(
    beams: &[Hypothesis],
    source: &str,
    scorer: &dyn ConsistencyScorer,
    heuristic_on: bool,
    top_n: usize,
) -> Result<Vec<RankedBeam>> {
    rank_with(beams, &RerankContext::new(source, scorer, heuristic_on), top_n)
}

pub fn rank_with(beams: &[Hypothesis], ctx: &RerankContext<'_>, top_n: usize) -> Result<Vec<RankedBeam>> {
    let mut ranked = beams
        .iter()
        .enumerate()
        .map(|(index, h)| {
            Ok(RankedBeam {
                index,
                score: ctx.score_text(&h.text())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        compare_ranked((&a.score, &beams[a.index]), (&b.score, &beams[b.index]))
            .then(a.index.cmp(&b.index))
    });
    ranked.truncate(top_n.max(1));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{LexicalScorer, PrecomputedScorer};

    #[test]
    fn composite_examples() {
        assert_eq!(composite_score(1.0_f64, 1.0).unwrap(), 1.0);
        assert_eq!(composite_score(0.5_f64, 0.5).unwrap(), 0.25);
        assert!((composite_score(0.8_f64, 0.2).unwrap() - 0.1024).abs() < 1e-15);
        assert_eq!(composite_score(0.0_f64, 0.7).unwrap(), 0.0);
        assert_eq!(composite_score(0.0_f64, 0.0).unwrap(), 0.0);
        assert!(composite_score(1.1_f64, 0.5).is_err());
        assert!(composite_score(0.5_f64, -0.5).is_err());
        assert!((composite_score(0.5_f64, 0.6).unwrap() - 0.297520661157).abs() < 1e-9);
    }

    /// Scores keyed by candidate text so tests can pin f_B.
    fn fixed(entries: &[(&str, f64)]) -> PrecomputedScorer {
        let mut s = PrecomputedScorer::new();
        for &(k, v) in entries {
            s.insert(k, v).unwrap();
        }
        s
    }

    #[test]
    fn orders_by_composite() {
        // "go" has FK < 4 (r_F = 1). f_B 1.0 -> r_B 1, f_B 0.8 -> r_B 0.5.
        let scorer = fixed(&[("go", 1.0), ("we go", 0.8)]);
        let beams = [Hypothesis::new(["we", "go"], -0.1), Hypothesis::new(["go"], -5.0)];
        let ranked = rank_beams(&beams, "src", &scorer, false, 2).unwrap();
        assert_eq!(ranked[0].index, 1);
        assert_eq!(ranked[0].score.r, 1.0);
        assert!((ranked[1].score.r - (2.0 * 0.5 / 1.5_f64).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn ties_fall_back_to_log_prob_then_length() {
        let scorer = fixed(&[("a", 0.9), ("b", 0.9), ("a b", 0.9)]);
        let beams = [
            Hypothesis::new(["b"], -2.0),
            Hypothesis::new(["a"], -1.0),
        ];
        let ranked = rank_beams(&beams, "s", &scorer, false, 5).unwrap();
        assert_eq!(ranked.iter().map(|r| r.index).collect::<Vec<_>>(), [1, 0]);

        let beams = [Hypothesis::new(["b"], -1.0), Hypothesis::new(["a"], -1.0)];
        let ranked = rank_beams(&beams, "s", &scorer, false, 5).unwrap();
        assert_eq!(ranked[0].index, 1, "lexicographic last resort");
    }

    #[test]
    fn hallucinated_beam_is_zeroed() {
        let source = "the trial ended in 2001 with good results";
        let beams = [
            Hypothesis::new(["the", "trial", "ended", "in", "1999"], -0.5),
            Hypothesis::new(["the", "trial", "ended", "in", "2001"], -3.0),
        ];
        let scorer = LexicalScorer::new();
        let ranked = rank_beams(&beams, source, &scorer, true, 2).unwrap();
        assert_eq!(ranked[0].index, 1);
        assert!(ranked[1].score.hallucination_zeroed);
        assert_eq!(ranked[1].score.r, 0.0);
        let off = rank_beams(&beams, source, &scorer, false, 2).unwrap();
        assert!(off.iter().all(|r| !r.score.hallucination_zeroed));
    }

    #[test]
    fn zeroed_beam_ranks_below_unscored_tie() {
        // both candidates have f_B < 0.6, so r = 0 either way
        let scorer = fixed(&[("in 1999", 0.1), ("in 2001", 0.1)]);
        let beams = [Hypothesis::new(["in", "1999"], -0.1), Hypothesis::new(["in", "2001"], -4.0)];
        let ranked = rank_beams(&beams, "in 2001", &scorer, true, 2).unwrap();
        assert_eq!(ranked[0].index, 1);
        assert!(ranked[1].score.hallucination_zeroed);
    }

    #[test]
    fn truncates_and_handles_wordless() {
        let scorer = LexicalScorer::new();
        let beams = [Hypothesis::new(["."], -0.1), Hypothesis::new(["cat"], -0.2)];
        let ranked = rank_beams(&beams, "cat", &scorer, true, 1).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].index, 1);
        let empty = RerankContext::new("cat", &scorer, true).score_text("").unwrap();
        assert_eq!(empty.r, 0.0);
        assert_eq!(empty.r_f, 1.0);
    }
}
