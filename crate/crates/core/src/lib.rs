//! Identity-consistency tooling for long-video captions.
//!
//! * [`metrics`]: pair precision/recall, assignment-based sequence
//!   similarity, text coverage and the LLM-judged score;
//! * [`extraction`]: caption → per-identity frame sequences;
//! * [`captioner`]: baseline and windowed feature-constrained captioning;
//! * [`sfslab`]: search for the features that make people re-identifiable
//!   from text alone;
//! * [`gateway`]: the single path to remote models, with record/replay.

pub mod captioner;
pub mod dataset;
pub mod extraction;
pub mod gateway;
pub mod jsonfmt;
pub mod metrics;
pub mod par;
pub mod prompt;
pub mod render;
pub mod sfslab;
pub mod types;

pub use par::Execution;
pub use types::{
    AnnotatedClip, CaptionSegment, CharacterDescription, FeatureProfile, FrameRef, IdSequence,
    InvariantError, StructuredCaption,
};
