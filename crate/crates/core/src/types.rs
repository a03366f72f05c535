//! Domain types shared by every module.
//!
//! All values are immutable after construction. Frame indices are 1-based.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Error raised when a domain value violates one of its invariants.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct InvariantError(pub String);

fn invariant(msg: impl Into<String>) -> InvariantError {
    InvariantError(msg.into())
}

/// One key frame of a clip.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub clip_id: String,
    pub index: u32,
    pub image_key: String,
}

impl FrameRef {
    pub fn new(
        clip_id: impl Into<String>,
        index: u32,
        image_key: impl Into<String>,
    ) -> Result<Self, InvariantError> {
        let image_key = image_key.into();
        if index == 0 {
            return Err(invariant("frame index must be >= 1"));
        }
        if image_key.trim().is_empty() {
            return Err(invariant(format!("frame {index}: empty image key")));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            index,
            image_key,
        })
    }
}

/// The sorted frame indices where one identity appears.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawIdSequence")]
pub struct IdSequence {
    label: String,
    frames: Vec<u32>,
}

#[derive(Deserialize)]
struct RawIdSequence {
    label: String,
    frames: Vec<u32>,
}

impl TryFrom<RawIdSequence> for IdSequence {
    type Error = InvariantError;

    fn try_from(raw: RawIdSequence) -> Result<Self, Self::Error> {
        IdSequence::new(raw.label, raw.frames)
    }
}

impl IdSequence {
    /// Frames must be non-empty, strictly increasing and 1-based.
    pub fn new(label: impl Into<String>, frames: Vec<u32>) -> Result<Self, InvariantError> {
        let label = label.into();
        if frames.is_empty() {
            return Err(invariant(format!("identity '{label}': empty frame list")));
        }
        if frames[0] == 0 {
            return Err(invariant(format!("identity '{label}': frame index 0")));
        }
        if let Some(w) = frames.windows(2).find(|w| w[0] >= w[1]) {
            return Err(invariant(format!(
                "identity '{label}': frames not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { label, frames })
    }

    /// Builds a sequence from unordered, possibly duplicated frames.
    pub fn from_unsorted(
        label: impl Into<String>,
        mut frames: Vec<u32>,
    ) -> Result<Self, InvariantError> {
        frames.sort_unstable();
        frames.dedup();
        Self::new(label, frames)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn frames(&self) -> &[u32] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn relabeled(&self, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            frames: self.frames.clone(),
        }
    }

    /// Size of the frame-set intersection with `other`.
    pub fn overlap(&self, other: &IdSequence) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.frames, &other.frames);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Feature name → value assignment for one individual.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureProfile(BTreeMap<String, String>);

impl FeatureProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Keeps only the named features.
    pub fn restricted_to<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = Self::new();
        for n in names {
            if let Some(v) = self.0.get(n) {
                out.insert(n, v.clone());
            }
        }
        out
    }

    /// Renders as `name: value; name: value` in name order.
    pub fn render(&self) -> String {
        self.iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Inverse of [`render`](Self::render). Returns `None` on a malformed item.
    pub fn parse(text: &str) -> Option<Self> {
        let mut out = Self::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once(':')?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return None;
            }
            out.insert(k, v);
        }
        Some(out)
    }
}

impl FromIterator<(String, String)> for FeatureProfile {
    fn from_iter<T: IntoIterator<Item = (String, String)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for FeatureProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Key frames and ground-truth identities of one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedClip {
    pub clip_id: String,
    pub frames: Vec<FrameRef>,
    pub ground_truth: Vec<IdSequence>,
    pub source: String,
    /// Per-identity feature profiles, keyed by label. Present on synthetic clips.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<String, FeatureProfile>,
}

impl AnnotatedClip {
    pub fn new(
        clip_id: impl Into<String>,
        frames: Vec<FrameRef>,
        ground_truth: Vec<IdSequence>,
        source: impl Into<String>,
    ) -> Result<Self, InvariantError> {
        let clip = Self {
            clip_id: clip_id.into(),
            frames,
            ground_truth,
            source: source.into(),
            profiles: BTreeMap::new(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn with_profiles(
        mut self,
        profiles: BTreeMap<String, FeatureProfile>,
    ) -> Result<Self, InvariantError> {
        for label in profiles.keys() {
            if !self.ground_truth.iter().any(|g| g.label() == label) {
                return Err(invariant(format!(
                    "clip '{}': profile for unknown identity '{label}'",
                    self.clip_id
                )));
            }
        }
        self.profiles = profiles;
        Ok(self)
    }

    pub fn n_frames(&self) -> u32 {
        self.frames.len() as u32
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let id = &self.clip_id;
        if id.is_empty() {
            return Err(invariant("empty clip id"));
        }
        for (pos, f) in self.frames.iter().enumerate() {
            let expected = pos as u32 + 1;
            if f.index != expected {
                return Err(if f.index > expected {
                    invariant(format!("clip '{id}': gap at index {expected}"))
                } else {
                    invariant(format!("clip '{id}': duplicate or unordered frame index {}", f.index))
                });
            }
            if f.clip_id != *id {
                return Err(invariant(format!(
                    "clip '{id}': frame {} belongs to clip '{}'",
                    f.index, f.clip_id
                )));
            }
            if f.image_key.trim().is_empty() {
                return Err(invariant(format!("clip '{id}': frame {} has empty image", f.index)));
            }
        }
        let n = self.n_frames();
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.ground_truth {
            if !seen.insert(g.label()) {
                return Err(invariant(format!(
                    "clip '{id}': duplicate identity label '{}'",
                    g.label()
                )));
            }
            if let Some(&bad) = g.frames().iter().find(|&&f| f > n) {
                return Err(invariant(format!(
                    "clip '{id}': identity '{}' refers to frame {bad} beyond {n} frames",
                    g.label()
                )));
            }
        }
        Ok(())
    }
}

/// One person mention extracted from a caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterDescription {
    pub surface_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureProfile>,
}

impl CharacterDescription {
    pub fn new(surface_text: impl Into<String>) -> Result<Self, InvariantError> {
        let surface_text = surface_text.into();
        if surface_text.trim().is_empty() {
            return Err(invariant("empty character description"));
        }
        Ok(Self {
            surface_text,
            features: None,
        })
    }

    pub fn with_features(mut self, features: FeatureProfile) -> Self {
        self.features = Some(features);
        self
    }
}

/// The caption text attached to one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSegment {
    pub frame_index: u32,
    pub text: String,
    #[serde(default)]
    pub characters: Vec<CharacterDescription>,
}

/// A caption split into per-frame segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredCaption {
    pub clip_id: String,
    pub segments: Vec<CaptionSegment>,
    pub full_text: String,
}

impl StructuredCaption {
    /// Checks that segment indices increase strictly and stay within `n_frames`.
    pub fn validate(&self, n_frames: u32) -> Result<(), InvariantError> {
        let mut last = 0;
        for s in &self.segments {
            if s.frame_index <= last || s.frame_index > n_frames {
                return Err(invariant(format!(
                    "caption for '{}': segment frame {} out of order or beyond {n_frames}",
                    self.clip_id, s.frame_index
                )));
            }
            last = s.frame_index;
        }
        Ok(())
    }
}

/// Collapses runs of whitespace to one space and trims.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
