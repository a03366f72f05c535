//! Turning a free-form caption into predicted identity sequences.
//!
//! 1. [`assign_frame_indices`] splits the caption into per-frame segments;
//! 2. [`extract_characters`] lists the people each segment mentions;
//! 3. [`DynamicSequenceUpdater`] links mentions across frames into tracks.
//!
//! Model output is never trusted to be verbatim: every quoted span is
//! located in the source text and rejected replies get one corrective
//! re-prompt before the stage fails.

mod characters;
mod dsu;
mod judge;
mod segment;
pub mod verbatim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use characters::{bracket_mentions, extract_characters};
pub use dsu::{
    dynamic_sequence_update, find_most_fit, track_sequences, CharacterTrack, DsuState,
    DynamicSequenceUpdater, VerdictRecord, DEFAULT_THRESHOLD,
};
pub use judge::{
    deterministic_judge, judge_by_name, Criterion, ExactTextJudge, FeatureOverlapJudge, Judge, JudgeVerdict,
    LlmJudge, ProfileEqualityJudge, TokenJudge,
};
pub use segment::{assign_frame_indices, has_frame_markers, split_marked};

use crate::dataset::{write_atomic, DatasetError};
use crate::gateway::{Gateway, GatewayError};
use crate::prompt::{PromptError, PromptSet};
use crate::types::{AnnotatedClip, IdSequence, StructuredCaption};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segment,
    Characters,
    Judge,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Segment => "frame assignment",
            Stage::Characters => "character extraction",
            Stage::Judge => "identity judging",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("{stage}: {detail}")]
    Verbatim { stage: Stage, detail: String },
    #[error("{stage}: {detail}")]
    Parse { stage: Stage, detail: String },
    #[error("{stage}: {source}")]
    Gateway {
        stage: Stage,
        #[source]
        source: GatewayError,
    },
    #[error("invalid caption structure: {0}")]
    Structure(String),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("interrupted at frame {frame}: {source}")]
    Interrupted {
        frame: u32,
        #[source]
        source: Box<ExtractionError>,
        partial: Box<DsuState>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] DatasetError),
}

impl ExtractionError {
    /// The gateway error at the root of this failure, if any.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            Self::Gateway { source, .. } => Some(source),
            Self::Interrupted { source, .. } => source.gateway_error(),
            _ => None,
        }
    }
}

/// Final sequences plus every intermediate artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutput {
    pub clip_id: String,
    pub structured: StructuredCaption,
    pub verdicts: Vec<VerdictRecord>,
    pub tracks: Vec<CharacterTrack>,
    pub sequences: Vec<IdSequence>,
}

pub const AUDIT_FILES: [&str; 4] = [
    "01_structured.json",
    "02_characters.json",
    "03_verdicts.json",
    "04_sequences.json",
];

impl ExtractionOutput {
    /// Writes one file per stage into `dir`.
    pub fn write_audit(&self, dir: &Path) -> Result<(), ExtractionError> {
        #[derive(Serialize)]
        struct FrameCharacters<'a> {
            frame: u32,
            characters: &'a [crate::types::CharacterDescription],
        }
        let structured = StructuredCaption {
            segments: self
                .structured
                .segments
                .iter()
                .map(|s| crate::types::CaptionSegment {
                    characters: Vec::new(),
                    ..s.clone()
                })
                .collect(),
            ..self.structured.clone()
        };
        let chars: Vec<_> = self
            .structured
            .segments
            .iter()
            .map(|s| FrameCharacters {
                frame: s.frame_index,
                characters: &s.characters,
            })
            .collect();
        let seqs = crate::dataset::PredictionFile::from_sequences(&self.clip_id, &self.sequences);
        let docs = [
            to_json(&structured),
            to_json(&chars),
            to_json(&self.verdicts),
            to_json(&seqs),
        ];
        std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        for (name, doc) in AUDIT_FILES.iter().zip(docs) {
            write_atomic(&dir.join(name), doc.as_bytes())?;
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Settings shared by every clip of an extraction run.
pub struct Extractor<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub judge: &'a dyn Judge,
    pub threshold: f64,
    pub criterion: Criterion,
}

impl Extractor<'_> {
    /// All three steps for one clip.
    pub fn run(&self, caption: &str, clip: &AnnotatedClip) -> Result<ExtractionOutput, ExtractionError> {
        let mut structured = assign_frame_indices(caption, clip, self.gateway, self.prompts)?;
        for seg in &mut structured.segments {
            seg.characters = extract_characters(&seg.text, self.gateway, self.prompts)?;
        }
        let mut u = DynamicSequenceUpdater::new(self.judge, self.threshold)?
            .with_criterion(self.criterion);
        for seg in &structured.segments {
            u.process_frame(seg.frame_index, &seg.characters)?;
        }
        let (sequences, state) = u.finish();
        Ok(ExtractionOutput {
            clip_id: clip.clip_id.clone(),
            structured,
            verdicts: state.log,
            tracks: state.tracks,
            sequences,
        })
    }
}

/// Predicted sequences for `caption`; see [`Extractor::run`] for the
/// intermediate artifacts.
pub fn extract_predictions(
    caption: &str,
    clip: &AnnotatedClip,
    gateway: &Gateway,
    judge: &dyn Judge,
    threshold: f64,
    prompts: &PromptSet,
) -> Result<Vec<IdSequence>, ExtractionError> {
    let ex = Extractor {
        gateway,
        prompts,
        judge,
        threshold,
        criterion: Criterion::Unrestricted,
    };
    Ok(ex.run(caption, clip)?.sequences)
}
