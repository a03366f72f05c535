//! Caption generation for a clip, from one of six modes.
//!
//! The free-text modes (`st`, `mtsc_text`, `mtsc_notext`, `mtdc`,
//! `baseline`) produce a caption whose identity sequences are read back
//! with the extraction module. The windowed mode (`rice`) captions
//! fixed-length windows with people described by strong features only and
//! links them across windows; its registry is the prediction.

mod modes;
mod summarize;
mod windows;

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use modes::{free_text_caption, Exchange};
pub use summarize::{registry_label, summarize_windows, RegistryEntry, Summary};
pub use windows::{caption_window, plan_windows, WindowCaption, WindowCharacter};

use crate::dataset::{write_atomic, DatasetError};
use crate::extraction::{
    judge_by_name, Criterion, ExtractionError, ExtractionOutput, Extractor, VerdictRecord,
    DEFAULT_THRESHOLD,
};
use crate::gateway::{Gateway, GatewayError};
use crate::par::{self, Execution};
use crate::prompt::{PromptError, PromptSet};
use crate::render;
use crate::types::{AnnotatedClip, IdSequence};

pub(crate) static MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<([^<>\s][^<>]*)>").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    St,
    MtscText,
    MtscNotext,
    Mtdc,
    Rice,
    Baseline,
}

impl CaptionMode {
    pub const ALL: [CaptionMode; 6] = [
        CaptionMode::St,
        CaptionMode::MtscText,
        CaptionMode::MtscNotext,
        CaptionMode::Mtdc,
        CaptionMode::Rice,
        CaptionMode::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::St => "st",
            Self::MtscText => "mtsc_text",
            Self::MtscNotext => "mtsc_notext",
            Self::Mtdc => "mtdc",
            Self::Rice => "rice",
            Self::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for CaptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CaptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown caption mode '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: CaptionMode,
    /// Frames per window in `rice` mode.
    pub window_len: u32,
    /// Features people may be described by in `rice` mode.
    pub sfs: Vec<String>,
    pub judge_criterion: Criterion,
    /// `llm` or a deterministic judge name.
    pub judge: String,
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: CaptionMode::Rice,
            window_len: 4,
            sfs: Vec::new(),
            judge_criterion: Criterion::FeaturesOnly,
            judge: "llm".into(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CaptionError> {
        if self.window_len == 0 {
            return Err(CaptionError::Config("window length must be >= 1".into()));
        }
        if self.mode == CaptionMode::Rice {
            if self.window_len < 2 {
                return Err(CaptionError::Config("rice mode needs a window length of at least 2".into()));
            }
            if self.sfs.is_empty() {
                return Err(CaptionError::Config("rice mode needs a non-empty feature set".into()));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CaptionError::Config(format!("threshold must lie in (0, 1], got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{}{source}", window.map(|w| format!("window {w}: ")).unwrap_or_default())]
    Gateway {
        window: Option<usize>,
        #[source]
        source: GatewayError,
    },
    #[error("window {window}: unusable reply after retry: {detail}")]
    Window { window: usize, detail: String },
    #[error("linking window {window}: {source}")]
    Link {
        window: usize,
        #[source]
        source: Box<ExtractionError>,
    },
    #[error("extraction: {0}")]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Io(#[from] DatasetError),
}

/// The per-clip caption file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionOutput {
    pub clip_id: String,
    pub mode: CaptionMode,
    pub caption: String,
    pub registry: Vec<RegistryEntry>,
}

impl CaptionOutput {
    pub fn sequences(&self) -> Vec<IdSequence> {
        self.registry.iter().map(RegistryEntry::to_sequence).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub message: String,
}

/// Everything a pipeline run produced on the way to its caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionAudit {
    pub clip_id: String,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<WindowCaption>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<VerdictRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionOutput>,
    pub errors: Vec<StageError>,
}

impl CaptionAudit {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    /// Writes `caption_audit.json`, plus the extraction stage files under
    /// `extraction/` for free-text modes.
    pub fn write(&self, dir: &Path) -> Result<(), CaptionError> {
        std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let mut doc = serde_json::to_string_pretty(self).expect("serializable");
        doc.push('\n');
        write_atomic(&dir.join("caption_audit.json"), doc.as_bytes())?;
        if let Some(x) = &self.extraction {
            x.write_audit(&dir.join("extraction"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub caption: CaptionOutput,
    pub sequences: Vec<IdSequence>,
    pub audit: CaptionAudit,
}

fn registry_from_extraction(x: &ExtractionOutput) -> Vec<RegistryEntry> {
    x.tracks
        .iter()
        .enumerate()
        .map(|(k, t)| RegistryEntry {
            label: registry_label(k),
            frames: t.frames(),
            profile: t
                .canonical
                .features
                .clone()
                .or_else(|| render::parse_people(&t.canonical.surface_text).into_iter().next())
                .unwrap_or_default(),
        })
        .collect()
}

/// Captions `clip` and predicts its identity sequences. Window and
/// extraction failures are recorded in the audit and leave a partial
/// result; a failure before any caption text exists is returned as an
/// error.
pub fn run_pipeline(
    clip: &AnnotatedClip,
    config: &PipelineConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
    exec: Execution,
) -> Result<PipelineOutput, CaptionError> {
    config.validate()?;
    if clip.n_frames() == 0 {
        return Err(CaptionError::Config(format!("clip '{}' has no frames", clip.clip_id)));
    }
    let judge = judge_by_name(&config.judge, gateway, prompts, config.judge_criterion)
        .ok_or_else(|| CaptionError::Config(format!("unknown judge '{}'", config.judge)))?;
    let mut audit = CaptionAudit {
        clip_id: clip.clip_id.clone(),
        config: config.clone(),
        exchanges: Vec::new(),
        windows: Vec::new(),
        links: Vec::new(),
        extraction: None,
        errors: Vec::new(),
    };
    let (caption, registry) = if config.mode == CaptionMode::Rice {
        let plan: Vec<_> = plan_windows(clip.n_frames(), config.window_len).into_iter().enumerate().collect();
        let results = par::map(exec, &plan, |(i, range)| {
            caption_window(clip, *i, range.clone(), config, prompts, gateway)
        });
        let mut first_error = None;
        for ((i, _), r) in plan.iter().zip(results) {
            match r {
                Ok(w) => audit.windows.push(w),
                Err(e) => {
                    log::warn!("clip '{}': {e}", clip.clip_id);
                    audit.errors.push(StageError {
                        stage: "caption_window".into(),
                        window: Some(*i),
                        message: e.to_string(),
                    });
                    first_error.get_or_insert(e);
                }
            }
        }
        if audit.windows.is_empty() {
            return Err(first_error.expect("at least one window"));
        }
        let summary = summarize_windows(&audit.windows, judge.as_ref(), config.threshold, config.judge_criterion)?;
        audit.links = summary.links;
        (summary.caption, summary.registry)
    } else {
        let (caption, exchanges) = free_text_caption(clip, config.mode, prompts, gateway)?;
        audit.exchanges = exchanges;
        let extractor = Extractor {
            gateway,
            prompts,
            judge: judge.as_ref(),
            threshold: config.threshold,
            criterion: config.judge_criterion,
        };
        let registry = match extractor.run(&caption, clip) {
            Ok(x) => {
                let r = registry_from_extraction(&x);
                audit.extraction = Some(x);
                r
            }
            Err(e) => {
                log::warn!("clip '{}': {e}", clip.clip_id);
                audit.errors.push(StageError {
                    stage: "extraction".into(),
                    window: None,
                    message: e.to_string(),
                });
                Vec::new()
            }
        };
        (caption, registry)
    };
    let caption = CaptionOutput {
        clip_id: clip.clip_id.clone(),
        mode: config.mode,
        caption,
        registry,
    };
    Ok(PipelineOutput {
        sequences: caption.sequences(),
        caption,
        audit,
    })
}
