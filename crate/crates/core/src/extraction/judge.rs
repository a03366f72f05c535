//! "Same person?" judges used to link a description to known tracks.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ExtractionError, Stage};
use crate::gateway::mock::profile_overlap;
use crate::gateway::{Gateway, Message};
use crate::prompt::{json_block, PromptSet};
use crate::render;
use crate::types::{normalize_ws, CharacterDescription, FeatureProfile};

/// Best-matching track for a candidate, by position in the list the judge
/// was shown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub candidate_index: Option<usize>,
    pub score: Option<f64>,
}

impl JudgeVerdict {
    pub const NONE: Self = Self {
        candidate_index: None,
        score: None,
    };

    pub fn at(index: usize, score: f64) -> Self {
        Self {
            candidate_index: Some(index),
            score: Some(score),
        }
    }

    /// Highest score wins; ties go to the lowest index.
    pub fn best_of(scores: &[f64]) -> Self {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in scores.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map_or(Self::NONE, |(i, s)| Self::at(i, s))
    }
}

/// Which cues a judge may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    FeaturesOnly,
    Actions,
    Environment,
    Unrestricted,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::FeaturesOnly,
        Criterion::Actions,
        Criterion::Environment,
        Criterion::Unrestricted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FeaturesOnly => "features",
            Self::Actions => "actions",
            Self::Environment => "environment",
            Self::Unrestricted => "unrestricted",
        }
    }

    pub fn instruction_prompt(self) -> String {
        format!("criterion_{}", self.as_str())
    }

    /// What the judge is shown. Under `FeaturesOnly`, a description that
    /// carries a profile is replaced by the rendered profile alone.
    pub fn prepare(self, d: &CharacterDescription) -> CharacterDescription {
        match (self, &d.features) {
            (Self::FeaturesOnly, Some(p)) => CharacterDescription {
                surface_text: render::describe(p),
                features: Some(p.clone()),
            },
            _ => d.clone(),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "features" | "features_only" => Ok(Self::FeaturesOnly),
            "actions" => Ok(Self::Actions),
            "environment" => Ok(Self::Environment),
            "unrestricted" => Ok(Self::Unrestricted),
            other => Err(format!("unknown judge criterion '{other}'")),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait Judge: Send + Sync {
    fn name(&self) -> String;

    /// Scores `candidate` against `known`, which is never empty.
    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError>;
}

/// 1.0 when the normalized texts are equal, ignoring case.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactTextJudge;

impl Judge for ExactTextJudge {
    fn name(&self) -> String {
        "exact".into()
    }

    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError> {
        let c = normalize_ws(&candidate.surface_text).to_lowercase();
        let scores: Vec<f64> = known
            .iter()
            .map(|k| f64::from(u8::from(normalize_ws(&k.surface_text).to_lowercase() == c)))
            .collect();
        Ok(JudgeVerdict::best_of(&scores))
    }
}

fn profile_of(d: &CharacterDescription) -> Option<FeatureProfile> {
    d.features
        .clone()
        .or_else(|| render::parse_people(&d.surface_text).into_iter().next())
}

/// Share of equal-valued features over all features named by either side.
#[derive(Debug, Default, Clone, Copy)]
pub struct FeatureOverlapJudge;

impl Judge for FeatureOverlapJudge {
    fn name(&self) -> String {
        "overlap".into()
    }

    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError> {
        let c = profile_of(candidate);
        let scores: Vec<f64> = known
            .iter()
            .map(|k| match (&c, profile_of(k)) {
                (Some(a), Some(b)) => profile_overlap(a, &b),
                _ => 0.0,
            })
            .collect();
        Ok(JudgeVerdict::best_of(&scores))
    }
}

/// 1.0 when both profiles exist, are non-empty and are equal.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProfileEqualityJudge;

impl Judge for ProfileEqualityJudge {
    fn name(&self) -> String {
        "profile".into()
    }

    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError> {
        let c = profile_of(candidate).filter(|p| !p.is_empty());
        let scores: Vec<f64> = known
            .iter()
            .map(|k| f64::from(u8::from(c.is_some() && profile_of(k) == c)))
            .collect();
        Ok(JudgeVerdict::best_of(&scores))
    }
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#[\w-]+").expect("valid regex"));

/// Jaccard similarity of the `#token` sets of two descriptions.
#[derive(Debug, Default, Clone, Copy)]
pub struct TokenJudge;

impl TokenJudge {
    fn tokens(text: &str) -> BTreeSet<&str> {
        TOKEN.find_iter(text).map(|m| m.as_str()).collect()
    }
}

impl Judge for TokenJudge {
    fn name(&self) -> String {
        "token".into()
    }

    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError> {
        let c = Self::tokens(&candidate.surface_text);
        let scores: Vec<f64> = known
            .iter()
            .map(|k| {
                let t = Self::tokens(&k.surface_text);
                let union = c.union(&t).count();
                if union == 0 {
                    0.0
                } else {
                    c.intersection(&t).count() as f64 / union as f64
                }
            })
            .collect();
        Ok(JudgeVerdict::best_of(&scores))
    }
}

/// Model-backed judge: the known descriptions are listed with 1-based
/// numbers and the model names the matching number with a confidence.
pub struct LlmJudge<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    criterion: Criterion,
}

impl<'a> LlmJudge<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet, criterion: Criterion) -> Self {
        Self {
            gateway,
            prompts,
            criterion,
        }
    }
}

#[derive(Deserialize)]
struct RawVerdict {
    index: Option<serde_json::Value>,
    score: Option<f64>,
}

fn parse_verdict(reply: &str, n: usize) -> Result<JudgeVerdict, String> {
    let block = json_block(reply).ok_or("reply contains no JSON object")?;
    let raw: RawVerdict = serde_json::from_str(block).map_err(|e| format!("malformed verdict: {e}"))?;
    let index = match raw.index {
        None | Some(serde_json::Value::Null) => return Ok(JudgeVerdict::NONE),
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
            .ok_or_else(|| format!("index {v} is not a number"))?,
    };
    if index == 0 || index as usize > n {
        return Err(format!("index {index} outside 1..={n}"));
    }
    Ok(JudgeVerdict::at(index as usize - 1, raw.score.unwrap_or(1.0)))
}

impl Judge for LlmJudge<'_> {
    fn name(&self) -> String {
        format!("llm:{}", self.criterion)
    }

    fn judge(
        &self,
        known: &[CharacterDescription],
        candidate: &CharacterDescription,
    ) -> Result<JudgeVerdict, ExtractionError> {
        let tracks = known
            .iter()
            .enumerate()
            .map(|(i, k)| format!("{}. {}", i + 1, normalize_ws(&k.surface_text)))
            .collect::<Vec<_>>()
            .join("\n");
        let instruction = self
            .prompts
            .get(&self.criterion.instruction_prompt())?
            .text
            .trim()
            .to_string();
        let (task, text) = self.prompts.get("judge_identity")?.task(&[
            ("candidate", normalize_ws(&candidate.surface_text)),
            ("tracks", tracks),
            ("criterion_instruction", instruction),
            ("criterion", self.criterion.as_str().to_string()),
        ])?;
        let gw = |e| ExtractionError::Gateway {
            stage: Stage::Judge,
            source: e,
        };
        let mut messages = vec![Message::user(text)];
        let reply = self
            .gateway
            .chat(&self.gateway.request(task.clone(), messages.clone()))
            .map_err(gw)?;
        let problem = match parse_verdict(&reply.text, known.len()) {
            Ok(v) => return Ok(v),
            Err(p) => p,
        };
        messages.push(Message::assistant(reply.text));
        messages.push(Message::user(format!(
            "Your answer was rejected: {problem}. Answer with the JSON object only."
        )));
        let retry = self
            .gateway
            .chat(&self.gateway.request(task, messages))
            .map_err(gw)?;
        parse_verdict(&retry.text, known.len()).map_err(|detail| ExtractionError::Parse {
            stage: Stage::Judge,
            detail,
        })
    }
}

/// Deterministic judges selectable by name.
pub fn deterministic_judge(name: &str) -> Option<Box<dyn Judge>> {
    Some(match name {
        "exact" => Box::new(ExactTextJudge),
        "overlap" => Box::new(FeatureOverlapJudge),
        "profile" => Box::new(ProfileEqualityJudge),
        "token" => Box::new(TokenJudge),
        _ => return None,
    })
}

/// `llm` for the model-backed judge, otherwise a deterministic judge name.
pub fn judge_by_name<'a>(
    name: &str,
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    criterion: Criterion,
) -> Option<Box<dyn Judge + 'a>> {
    match name {
        "llm" => Some(Box::new(LlmJudge::new(gateway, prompts, criterion))),
        other => deterministic_judge(other),
    }
}
