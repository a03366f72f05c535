//! Prompt templates with `{name}` placeholders.
//!
//! Defaults are compiled in from `prompts/`; a directory of `<name>.txt`
//! files overrides any subset of them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::gateway::TaskContext;

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("valid regex"));

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt '{template}' needs a value for {{{var}}}")]
    MissingVar { template: String, var: String },
    #[error("unknown prompt '{0}'")]
    Unknown(String),
    #[error("reading prompts from {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        PLACEHOLDER
            .captures_iter(&self.text)
            .map(|c| c.get(1).expect("group 1").as_str())
            .collect()
    }

    /// Substitutes every placeholder. Vars without a placeholder are allowed.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, PromptError> {
        if let Some(missing) = self.placeholders().into_iter().find(|p| !vars.contains_key(*p)) {
            return Err(PromptError::MissingVar {
                template: self.name.clone(),
                var: missing.to_string(),
            });
        }
        Ok(PLACEHOLDER
            .replace_all(&self.text, |c: &regex::Captures| vars[&c[1]].clone())
            .into_owned())
    }

    /// Renders and returns the task context describing the render, so the
    /// gateway request records which prompt and values produced it.
    pub fn task(&self, vars: &[(&str, String)]) -> Result<(TaskContext, String), PromptError> {
        let mut ctx = TaskContext::new(&self.name);
        for (k, v) in vars {
            ctx.vars.insert((*k).to_string(), v.clone());
        }
        let text = self.render(&ctx.vars)?;
        Ok((ctx, text))
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("segment_frames", include_str!("../prompts/segment_frames.txt")),
    ("extract_characters", include_str!("../prompts/extract_characters.txt")),
    ("judge_identity", include_str!("../prompts/judge_identity.txt")),
    ("caption_st", include_str!("../prompts/caption_st.txt")),
    ("caption_mtsc", include_str!("../prompts/caption_mtsc.txt")),
    ("caption_mtdc", include_str!("../prompts/caption_mtdc.txt")),
    ("caption_baseline", include_str!("../prompts/caption_baseline.txt")),
    ("summarize", include_str!("../prompts/summarize.txt")),
    ("caption_window", include_str!("../prompts/caption_window.txt")),
    ("sfs_trial", include_str!("../prompts/sfs_trial.txt")),
    ("judge_pair", include_str!("../prompts/judge_pair.txt")),
    ("gpt_score", include_str!("../prompts/gpt_score.txt")),
    ("criterion_features", include_str!("../prompts/criterion_features.txt")),
    ("criterion_actions", include_str!("../prompts/criterion_actions.txt")),
    ("criterion_environment", include_str!("../prompts/criterion_environment.txt")),
    ("criterion_unrestricted", include_str!("../prompts/criterion_unrestricted.txt")),
];

/// A named collection of templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(n, t)| (n.to_string(), PromptTemplate::new(*n, *t)))
                .collect(),
        }
    }

    /// Built-in set with every `<name>.txt` in `dir` replacing its default.
    /// Unknown names are added as new templates.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let io = |e: std::io::Error| PromptError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut set = Self::builtin();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io)?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(io)?;
            log::debug!("prompt '{name}' overridden from {}", path.display());
            set.templates
                .insert(name.to_string(), PromptTemplate::new(name, text));
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// The outermost JSON array or object in a model reply, ignoring code
/// fences and surrounding prose.
pub fn json_block(text: &str) -> Option<&str> {
    let start = text.find(['[', '{'])?;
    let close = if text[start..].starts_with('[') { ']' } else { '}' };
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_block_strips_fences() {
        assert_eq!(json_block("```json\n[1, 2]\n```"), Some("[1, 2]"));
        assert_eq!(json_block("sure: {\"a\": 1} done"), Some("{\"a\": 1}"));
        assert_eq!(json_block("nothing"), None);
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        let t = PromptTemplate::new("t", r#"Answer {"index": 1} for {candidate}"#);
        assert_eq!(t.placeholders().into_iter().collect::<Vec<_>>(), vec!["candidate"]);
        let (ctx, text) = t.task(&[("candidate", "x".into())]).unwrap();
        assert_eq!(text, r#"Answer {"index": 1} for x"#);
        assert_eq!(ctx.name, "t");
    }

    #[test]
    fn missing_var_is_reported() {
        let t = PromptTemplate::new("t", "{a} {b}");
        let err = t.task(&[("a", "1".into())]).unwrap_err();
        assert!(err.to_string().contains("{b}"), "{err}");
    }

    #[test]
    fn builtin_window_prompt_has_required_placeholders() {
        let set = PromptSet::builtin();
        let p = set.get("caption_window").unwrap().placeholders();
        assert!(p.contains("frames") && p.contains("sfs_features"));
        let p = set.get("caption_mtdc").unwrap().placeholders();
        assert!(p.contains("previous_caption"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gpt_score.txt"), "Rate {prediction}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get("gpt_score").unwrap().text, "Rate {prediction}");
        assert_eq!(
            set.get("summarize").unwrap(),
            PromptSet::builtin().get("summarize").unwrap()
        );
    }
}
