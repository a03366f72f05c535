//! Deterministic caption text for clips that carry feature profiles.
//!
//! Used by the vision mock and by round-trip oracles: a caption rendered
//! here can be turned back into the clip's ground truth.

use std::sync::LazyLock;

use regex::Regex;

use crate::types::{AnnotatedClip, FeatureProfile};

/// Matches one rendered person, capturing the profile text.
pub static PERSON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\ba person \(([^()]*)\)").expect("valid regex"));

/// How much of a profile a rendered description reveals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DescriptionStyle {
    Full,
    Only(Vec<String>),
}

impl DescriptionStyle {
    pub fn apply(&self, profile: &FeatureProfile) -> FeatureProfile {
        match self {
            Self::Full => profile.clone(),
            Self::Only(names) => profile.restricted_to(names.iter().map(String::as_str)),
        }
    }
}

/// `a person (name: value; ...)`
pub fn describe(profile: &FeatureProfile) -> String {
    format!("a person ({})", profile.render())
}

/// Profiles of every rendered person in `text`, in order of appearance.
pub fn parse_people(text: &str) -> Vec<FeatureProfile> {
    PERSON_RE
        .captures_iter(text)
        .filter_map(|c| FeatureProfile::parse(&c[1]))
        .collect()
}

/// Ground-truth labels present in `frame`, in clip order.
pub fn present_in(clip: &AnnotatedClip, frame: u32) -> Vec<&str> {
    clip.ground_truth
        .iter()
        .filter(|g| g.frames().binary_search(&frame).is_ok())
        .map(|g| g.label())
        .collect()
}

/// Sentence describing one frame, without the frame marker.
pub fn frame_sentence(clip: &AnnotatedClip, frame: u32, style: &DescriptionStyle) -> String {
    let people: Vec<String> = present_in(clip, frame)
        .into_iter()
        .map(|label| {
            let profile = clip.profiles.get(label).cloned().unwrap_or_default();
            describe(&style.apply(&profile))
        })
        .collect();
    match people.len() {
        0 => "The scene is empty.".to_string(),
        1 => format!("{} is visible.", people[0]),
        _ => format!("{} are visible.", people.join(" and ")),
    }
}

pub fn frame_caption(clip: &AnnotatedClip, frame: u32, style: &DescriptionStyle) -> String {
    format!("[frame {frame}] {}", frame_sentence(clip, frame, style))
}

/// Caption of the whole clip with one `[frame k]` segment per frame.
pub fn clip_caption(clip: &AnnotatedClip, style: &DescriptionStyle) -> String {
    (1..=clip.n_frames())
        .map(|f| frame_caption(clip, f, style))
        .collect::<Vec<_>>()
        .join(" ")
}
