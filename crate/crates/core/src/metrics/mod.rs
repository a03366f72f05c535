//! Identity-matching metrics and caption-quality scores.
//!
//! * pair precision / recall over same-identity frame pairs (multiset
//!   semantics);
//! * sequence similarity, the optimal one-to-one assignment weight between
//!   predicted and ground-truth sequences over the ground-truth total;
//! * text coverage and the LLM-judged GPT-score for caption content.

mod assignment;
mod coverage;
mod gpt_score;
mod pairs;
mod report;

pub use assignment::{
    build_matching_problem, solve_assignment, solve_assignment_bruteforce, Assignment,
    MatchingProblem, BRUTE_FORCE_MAX_SIDE,
};
pub use coverage::{
    cosine, split_sub_sentences, text_coverage, CoverageInput, Embedder, DEFAULT_RHO,
};
pub use gpt_score::{gpt_score, parse_score, GptScore, SCORE_MAX};
pub use pairs::{decompose_pairs, pair_counts, pair_precision_recall, PairCounts, PairMultiset};
pub use report::{
    aggregate_reports, evaluate_clip, parse_report_blocks, render_report, sequence_similarity,
    AggregateReport, IdMatchReport, MatchedPair, ScoreBlock, RESERVED_KEYS,
};

use crate::gateway::GatewayError;
use crate::par::{self, Execution};
use crate::types::IdSequence;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("matrix side {side} exceeds the brute-force bound {max}")]
    TooLarge { side: usize, max: usize },
    #[error("undefined: empty ground truth")]
    EmptyGroundTruth,
    #[error("no reports to aggregate")]
    NoReports,
    #[error("clip id '{0}' collides with a reserved report key")]
    ReservedClipId(String),
    #[error("report schema: {0}")]
    ReportSchema(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unparseable score in judge response: {raw:?}")]
    Scoring { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
}

/// One clip's prediction paired with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ClipPair<'a> {
    pub clip_id: &'a str,
    pub predicted: &'a [IdSequence],
    pub ground_truth: &'a [IdSequence],
}

/// Evaluates many clips, in parallel when `exec` allows. Output order
/// follows input order.
pub fn evaluate_batch(
    exec: Execution,
    clips: &[ClipPair<'_>],
) -> Vec<Result<IdMatchReport, MetricsError>> {
    par::map(exec, clips, |c| evaluate_clip(c.clip_id, c.predicted, c.ground_truth))
}
