//! Scene formats: caption templates whose person descriptions are blanks.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::SfsError;

const DEFAULT_FORMATS: &str = include_str!("../../data/scene_formats.json");

pub const ANCHOR: &str = "{{anchor}}";

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([^{}]*)\}\}").expect("valid regex"));

/// Frame templates. `{{anchor}}` marks the probed person and must appear in
/// the first and last frame only; `{{blank_k}}` marks other people, the
/// same `k` meaning the same person throughout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFormat {
    pub id: String,
    pub frames: Vec<String>,
}

#[derive(Deserialize, Serialize)]
struct FormatFile {
    formats: Vec<SceneFormat>,
}

impl SceneFormat {
    pub fn validate(&self) -> Result<(), SfsError> {
        let err = |m: String| SfsError::Spec(format!("scene format '{}': {m}", self.id));
        if self.frames.len() < 2 {
            return Err(err("needs at least two frames".into()));
        }
        let last = self.frames.len() - 1;
        for (i, frame) in self.frames.iter().enumerate() {
            let anchored = frame.contains(ANCHOR);
            if (i == 0 || i == last) && !anchored {
                return Err(err(format!("frame {} lacks the anchor", i + 1)));
            }
            if i != 0 && i != last && anchored {
                return Err(err(format!("anchor in middle frame {}", i + 1)));
            }
            for c in SLOT.captures_iter(frame) {
                let name = &c[1];
                if name != "anchor" && blank_number(name).is_none() {
                    return Err(err(format!("unknown placeholder {{{{{name}}}}}")));
                }
            }
        }
        Ok(())
    }

    /// Distinct blank numbers used anywhere in the format.
    pub fn blanks(&self) -> BTreeSet<u32> {
        self.frames
            .iter()
            .flat_map(|f| SLOT.captures_iter(f).filter_map(|c| blank_number(&c[1])))
            .collect()
    }

    /// Substitutes the anchor descriptions and blanks, one frame per entry.
    pub fn fill(
        &self,
        anchor_first: &str,
        anchor_last: &str,
        blank: impl Fn(u32) -> String,
    ) -> Vec<String> {
        let last = self.frames.len() - 1;
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let anchor = if i == last { anchor_last } else { anchor_first };
                let text = SLOT.replace_all(f, |c: &regex::Captures| match &c[1] {
                    "anchor" => anchor.to_string(),
                    other => blank(blank_number(other).expect("validated")),
                });
                capitalize(&text)
            })
            .collect()
    }
}

fn blank_number(name: &str) -> Option<u32> {
    name.strip_prefix("blank_")?.parse().ok()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn builtin_formats() -> Vec<SceneFormat> {
    parse_formats(DEFAULT_FORMATS).expect("embedded scene formats are valid")
}

pub fn parse_formats(text: &str) -> Result<Vec<SceneFormat>, SfsError> {
    let file: FormatFile =
        serde_json::from_str(text).map_err(|e| SfsError::Spec(format!("scene formats: {e}")))?;
    let mut ids = BTreeSet::new();
    for f in &file.formats {
        f.validate()?;
        if !ids.insert(f.id.as_str()) {
            return Err(SfsError::Spec(format!("duplicate scene format '{}'", f.id)));
        }
    }
    if file.formats.is_empty() {
        return Err(SfsError::Spec("no scene formats".into()));
    }
    Ok(file.formats)
}

pub fn load_formats(path: &Path) -> Result<Vec<SceneFormat>, SfsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SfsError::Spec(format!("{}: {e}", path.display())))?;
    parse_formats(&text)
}
