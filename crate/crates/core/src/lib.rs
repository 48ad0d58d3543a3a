//! Readability-controlled medical text simplification.
//!
//! The crate provides text statistics and readability grades, a pluggable
//! consistency scorer, the composite score used to rerank beams, the
//! readability/consistency unlikelihood loss with its gradient, a beam
//! search decoder that reranks every `k` steps, simplification metrics, and
//! corpus/judge plumbing for the `medsimp` CLI.
//!
//! Numeric code that does not depend on a language model is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the type for callers
//! who do not need the choice.

pub mod consistency;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod readability;
pub mod rerank;
mod scalar;
pub mod simpeval;
pub mod textseg;
pub mod ulloss;
pub mod vocab;

pub use consistency::{
    CountingScorer, ConsistencyScorer, EntityExtractor, HeuristicEntities, LexicalScorer, ListedEntities,
    PrecomputedScorer,
};
pub use decoder::{beam_search, greedy_decode, train_ngram_lm, DecodeOutput, DecoderConfig, LanguageModel, NGramLm, ScriptedLm};
pub use error::{Error, Result};
pub use harness::{build_judge_prompt, load_jsonl, parse_judgment, Document, RunConfig};
pub use readability::{ari, flesch_kincaid, readability_subscore, word_fk, TextStats};
pub use rerank::{composite_score, rank_beams, BeamScore, Hypothesis};
pub use scalar::Scalar;
pub use simpeval::{evaluate_corpus, fourgram_overlap, rouge_lsum, sari, EvalReport, MetricBundle};
pub use textseg::{tokenize, EntitySet, TokenList};
pub use ulloss::{loss_gradient, total_loss, HallucinationSet};
pub use vocab::Vocabulary;

pub type GradeScoreF64 = readability::GradeScore<f64>;
pub type GradeScoreF32 = readability::GradeScore<f32>;
pub type FkWeightTableF64 = readability::FkWeightTable<f64>;
pub type FkWeightTableF32 = readability::FkWeightTable<f32>;
pub type StepDistributionF64 = ulloss::StepDistribution<f64>;
pub type StepDistributionF32 = ulloss::StepDistribution<f32>;
pub type LossConfigF64 = ulloss::LossConfig<f64>;
pub type LossConfigF32 = ulloss::LossConfig<f32>;
pub type LossBreakdownF64 = ulloss::LossBreakdown<f64>;
pub type ToyModelF64 = ulloss::ToyModel<f64>;
pub type ToyModelF32 = ulloss::ToyModel<f32>;
