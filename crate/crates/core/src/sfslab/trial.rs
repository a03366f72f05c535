//! One same-person probe: fill a scene format, ask the model, score it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::SceneFormat;
use super::{FeatureCatalog, SfsError};
use crate::gateway::{Gateway, Message};
use crate::prompt::PromptTemplate;
use crate::render;
use crate::types::FeatureProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Both anchors carry the same probe values.
    Base,
    /// Anchors differ on every probe value.
    Contrast,
    /// First anchor adds extra features; probe values shared.
    MixtureFirst,
    /// Last anchor adds extra features; probe values shared.
    MixtureLast,
    /// Both anchors carry the extras with differing values; probe shared.
    MixtureContrast,
}

impl TrialMode {
    pub const ALL: [TrialMode; 5] = [
        TrialMode::Base,
        TrialMode::Contrast,
        TrialMode::MixtureFirst,
        TrialMode::MixtureLast,
        TrialMode::MixtureContrast,
    ];

    pub fn expected_same(self) -> bool {
        self != TrialMode::Contrast
    }

    pub fn uses_extras(self) -> bool {
        matches!(
            self,
            TrialMode::MixtureFirst | TrialMode::MixtureLast | TrialMode::MixtureContrast
        )
    }
}

/// What to probe. Values are drawn from `seed` when the trial is filled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialSpec {
    pub format_id: String,
    pub mode: TrialMode,
    pub probe_features: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_features: Vec<String>,
    pub seed: u64,
}

impl TrialSpec {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledTrial {
    pub spec: TrialSpec,
    /// Filled frame texts, in order.
    pub frames: Vec<String>,
    pub anchor_first: FeatureProfile,
    pub anchor_last: FeatureProfile,
    pub expected_same: bool,
}

impl FilledTrial {
    pub fn scene_text(&self) -> String {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| format!("Frame {}: {f}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn anchor_texts(&self) -> (String, String) {
        (
            render::describe(&self.anchor_first),
            render::describe(&self.anchor_last),
        )
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, values: &'a [String]) -> &'a String {
    &values[rng.random_range(0..values.len())]
}

fn pick_other<'a>(
    rng: &mut ChaCha8Rng,
    values: &'a [String],
    avoid: &str,
) -> Option<&'a String> {
    let others: Vec<&String> = values.iter().filter(|v| *v != avoid).collect();
    (!others.is_empty()).then(|| others[rng.random_range(0..others.len())])
}

/// Fills `format` for `spec`. A pure function of its arguments.
pub fn instantiate_trial(
    format: &SceneFormat,
    spec: &TrialSpec,
    catalog: &FeatureCatalog,
) -> Result<FilledTrial, SfsError> {
    format.validate()?;
    if format.id != spec.format_id {
        return Err(SfsError::Spec(format!(
            "spec names format '{}' but got '{}'",
            spec.format_id, format.id
        )));
    }
    if spec.probe_features.is_empty() {
        return Err(SfsError::Spec("empty probe feature set".into()));
    }
    if spec.mode.uses_extras() == spec.extra_features.is_empty() {
        return Err(SfsError::Spec(format!(
            "{:?} mode with {} extra features",
            spec.mode,
            spec.extra_features.len()
        )));
    }
    if let Some(f) = spec.extra_features.iter().find(|f| spec.probe_features.contains(f)) {
        return Err(SfsError::Spec(format!("'{f}' is both probe and extra feature")));
    }
    let lookup = |name: &str| {
        catalog
            .get(name)
            .ok_or_else(|| SfsError::Spec(format!("feature '{name}' not in catalog")))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut first = FeatureProfile::new();
    let mut last = FeatureProfile::new();
    for name in &spec.probe_features {
        let values = &lookup(name)?.values;
        let v = pick(&mut rng, values);
        first.insert(name, v);
        if spec.mode == TrialMode::Contrast {
            let w = pick_other(&mut rng, values, v).ok_or_else(|| {
                SfsError::Spec(format!("feature '{name}' has one value; cannot contrast"))
            })?;
            last.insert(name, w);
        } else {
            last.insert(name, v);
        }
    }
    for name in &spec.extra_features {
        let values = &lookup(name)?.values;
        let v = pick(&mut rng, values);
        match spec.mode {
            TrialMode::MixtureFirst => first.insert(name, v),
            TrialMode::MixtureLast => last.insert(name, v),
            TrialMode::MixtureContrast => {
                let w = pick_other(&mut rng, values, v).ok_or_else(|| {
                    SfsError::Spec(format!("feature '{name}' has one value; cannot contrast"))
                })?;
                first.insert(name, v);
                last.insert(name, w);
            }
            TrialMode::Base | TrialMode::Contrast => unreachable!("checked above"),
        }
    }
    // Bystanders use the same features as the anchors but never coincide
    // with either anchor on the probe values.
    let mut feature_names: Vec<&String> = spec.probe_features.iter().chain(&spec.extra_features).collect();
    feature_names.shuffle(&mut rng);
    let mut blanks = std::collections::BTreeMap::new();
    for k in format.blanks() {
        let mut profile = FeatureProfile::new();
        for _ in 0..16 {
            profile = FeatureProfile::new();
            for name in &feature_names {
                profile.insert(name.as_str(), pick(&mut rng, &lookup(name)?.values));
            }
            let probe_of = |p: &FeatureProfile| p.restricted_to(spec.probe_features.iter().map(String::as_str));
            if probe_of(&profile) != probe_of(&first) && probe_of(&profile) != probe_of(&last) {
                break;
            }
        }
        blanks.insert(k, render::describe(&profile));
    }
    let frames = format.fill(&render::describe(&first), &render::describe(&last), |k| {
        blanks[&k].clone()
    });
    Ok(FilledTrial {
        spec: spec.clone(),
        frames,
        anchor_first: first,
        anchor_last: last,
        expected_same: spec.mode.expected_same(),
    })
}

/// Reads a yes/no verdict: the first standalone "yes" or "no".
pub fn parse_verdict(text: &str) -> Option<bool> {
    text.split(|c: char| !c.is_alphanumeric())
        .find_map(|w| match w.to_ascii_lowercase().as_str() {
            "yes" | "same" => Some(true),
            "no" | "different" => Some(false),
            _ => None,
        })
}

/// Asks whether the anchors are the same person; true means "same".
pub fn run_trial(
    trial: &FilledTrial,
    gateway: &Gateway,
    judge_prompt: &PromptTemplate,
) -> Result<bool, SfsError> {
    let (first, last) = trial.anchor_texts();
    let (task, text) = judge_prompt.task(&[
        ("scene", trial.scene_text()),
        ("anchor_first", first),
        ("anchor_last", last),
        ("probe", trial.spec.probe_features.join("; ")),
    ])?;
    let mut messages = vec![Message::user(text)];
    let reply = gateway.chat(&gateway.request(task.clone(), messages.clone()))?;
    if let Some(v) = parse_verdict(&reply.text) {
        return Ok(v);
    }
    messages.push(Message::assistant(reply.text));
    messages.push(Message::user("Answer with one word: yes or no."));
    let retry = gateway.chat(&gateway.request(task, messages))?;
    parse_verdict(&retry.text).ok_or(SfsError::Unparseable { raw: retry.text })
}
