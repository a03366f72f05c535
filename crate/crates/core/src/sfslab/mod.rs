//! Feature exploration: which descriptive features let a model re-identify
//! a person from text alone.

mod bench;
mod catalog;
mod scene;
mod search;
mod strength;
mod trial;

pub use bench::{generate_pairs, judge_criterion_bench, BenchResult, LabeledPair, PairGenConfig};
pub use catalog::{FeatureCatalog, FeatureSpec};
pub use scene::{builtin_formats, load_formats, parse_formats, SceneFormat, ANCHOR};
pub use search::{
    plan_round, prune, recompute_scores, resume_search, search_sfs, FeatureScores, PruneEvent,
    PruneRule, RoundSummary, SearchBudget, SearchConfig, SearchOutcome, SearchState, TraceEntry,
};
pub use strength::{evaluate_sfs_strength, StrengthConfig, StrengthScores};
pub use trial::{instantiate_trial, parse_verdict, run_trial, FilledTrial, TrialMode, TrialSpec};

use crate::gateway::GatewayError;
use crate::prompt::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum SfsError {
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("{0}")]
    Spec(String),
    #[error("unparseable verdict after retry: {raw:?}")]
    Unparseable { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("search interrupted in round {}: {source}", state.n)]
    Interrupted {
        source: GatewayError,
        state: Box<SearchState>,
    },
}
