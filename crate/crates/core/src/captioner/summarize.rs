//! Cross-window linking and the final caption.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::windows::WindowCaption;
use super::CaptionError;
use crate::extraction::{Criterion, DynamicSequenceUpdater, Judge, VerdictRecord};
use crate::types::{FeatureProfile, IdSequence};

/// One linked individual of a clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub label: String,
    pub frames: Vec<u32>,
    pub profile: FeatureProfile,
}

impl RegistryEntry {
    pub fn to_sequence(&self) -> IdSequence {
        IdSequence::from_unsorted(&self.label, self.frames.clone()).expect("registry entries mention at least one frame")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub caption: String,
    pub registry: Vec<RegistryEntry>,
    /// One record per window character; `frame` holds the 1-based window
    /// number.
    pub links: Vec<VerdictRecord>,
}

pub fn registry_label(k: usize) -> String {
    format!("P{}", k + 1)
}

/// Links characters across windows and writes the caption with registry
/// labels in place of window-local names.
pub fn summarize_windows(
    windows: &[WindowCaption],
    judge: &dyn Judge,
    threshold: f64,
    criterion: Criterion,
) -> Result<Summary, CaptionError> {
    if windows.is_empty() {
        return Err(CaptionError::Config("no windows to summarize".into()));
    }
    let mut updater = DynamicSequenceUpdater::new(judge, threshold)
        .map_err(|e| CaptionError::Link { window: 0, source: Box::new(e) })?
        .with_criterion(criterion);
    for (pos, w) in windows.iter().enumerate() {
        let chars: Vec<_> = w.characters.iter().map(|c| c.description.clone()).collect();
        updater
            .process_frame(pos as u32 + 1, &chars)
            .map_err(|e| CaptionError::Link { window: w.window_index, source: Box::new(e) })?;
    }
    let state = updater.state().clone();
    let mut frames: Vec<Vec<u32>> = vec![Vec::new(); state.tracks.len()];
    let mut names: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); windows.len()];
    let mut records = state.log.iter();
    for (pos, w) in windows.iter().enumerate() {
        for c in &w.characters {
            let rec = records.next().expect("one record per character");
            frames[rec.track].extend(&c.frames);
            names[pos].insert(c.name.to_lowercase(), rec.track);
        }
    }
    let registry: Vec<RegistryEntry> = state
        .tracks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut f = frames[k].clone();
            f.sort_unstable();
            f.dedup();
            RegistryEntry {
                label: registry_label(k),
                frames: f,
                profile: t.canonical.features.clone().unwrap_or_default(),
            }
        })
        .collect();
    let mut parts = Vec::new();
    for (pos, w) in windows.iter().enumerate() {
        for (f, text) in &w.frame_texts {
            let relabeled = super::MENTION.replace_all(text, |c: &regex::Captures| {
                match names[pos].get(&c[1].trim().to_lowercase()) {
                    Some(&k) => format!("<{}>", registry_label(k)),
                    None => c[0].to_string(),
                }
            });
            parts.push(format!("[frame {f}] {relabeled}"));
        }
    }
    Ok(Summary {
        caption: parts.join(" "),
        registry,
        links: state.log,
    })
}
