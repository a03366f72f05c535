//! Deterministic offline backends.
//!
//! [`WorldMock`] answers every prompt the crate sends by reading the task
//! context attached to the request, and answers image prompts from the
//! profiles of the clips it was built with. [`OneHotEmbedder`] maps each
//! distinct normalized string to its own basis vector.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::json;

use super::{Backend, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, GatewayError};
use crate::render::{self, DescriptionStyle};
use crate::sfslab::FeatureCatalog;
use crate::types::{normalize_ws, AnnotatedClip, FeatureProfile};

pub const ONEHOT_DIM: usize = 1024;

/// Distinct normalized strings get distinct basis vectors, assigned in
/// order of first sight.
#[derive(Debug, Default)]
pub struct OneHotEmbedder {
    index: Mutex<HashMap<String, usize>>,
}

impl OneHotEmbedder {
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let mut index = self.index.lock();
        texts
            .iter()
            .map(|t| {
                let key = normalize_ws(t).to_lowercase();
                let next = index.len();
                let slot = *index.entry(key).or_insert(next);
                if slot >= ONEHOT_DIM {
                    return Err(GatewayError::Protocol(format!(
                        "onehot embedder exhausted its {ONEHOT_DIM} dimensions"
                    )));
                }
                let mut v = vec![0.0; ONEHOT_DIM];
                v[slot] = 1.0;
                Ok(v)
            })
            .collect()
    }
}

/// How the mock decides same-person questions in SFS trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrialPolicy {
    /// Same iff the anchors agree on every probe feature.
    ProfileEquality,
    /// Same iff the anchors agree on every feature both of them carry.
    ExtrasSensitive,
    /// Answers like `ProfileEquality` when the feature is probed and gives
    /// the opposite answer otherwise.
    Planted(String),
}

pub struct WorldMock {
    clips: Vec<AnnotatedClip>,
    frames: HashMap<String, (usize, u32)>,
    style: DescriptionStyle,
    weak_style: DescriptionStyle,
    policy: TrialPolicy,
    embedder: OneHotEmbedder,
}

impl WorldMock {
    pub fn new(clips: &[AnnotatedClip]) -> Self {
        let mut frames = HashMap::new();
        for (ci, clip) in clips.iter().enumerate() {
            for f in &clip.frames {
                frames.insert(f.image_key.clone(), (ci, f.index));
            }
        }
        Self {
            clips: clips.to_vec(),
            frames,
            style: DescriptionStyle::Only(FeatureCatalog::builtin().sfs),
            weak_style: DescriptionStyle::Only(vec!["gender".into()]),
            policy: TrialPolicy::ProfileEquality,
            embedder: OneHotEmbedder::default(),
        }
    }

    pub fn with_policy(mut self, policy: TrialPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Style used for free-text captions (ST, MTSC, MTDC).
    pub fn with_style(mut self, style: DescriptionStyle) -> Self {
        self.style = style;
        self
    }

    fn var<'a>(req: &'a ChatRequest, key: &str) -> Result<&'a str, GatewayError> {
        req.task
            .as_ref()
            .and_then(|t| t.get(key))
            .ok_or_else(|| GatewayError::Protocol(format!("mock: task lacks '{key}'")))
    }

    fn attached_frames(&self, req: &ChatRequest, last_only: bool) -> Result<Vec<(usize, u32)>, GatewayError> {
        let messages: Vec<_> = if last_only {
            req.messages
                .iter()
                .rev()
                .find(|m| !m.attachments.is_empty())
                .into_iter()
                .collect()
        } else {
            req.messages.iter().collect()
        };
        let mut out = Vec::new();
        for m in messages {
            for a in &m.attachments {
                let hit = self.frames.get(&a.image_key).ok_or_else(|| {
                    GatewayError::Protocol(format!("mock: unknown image '{}'", a.image_key))
                })?;
                out.push(*hit);
            }
        }
        if out.is_empty() {
            return Err(GatewayError::Protocol("mock: request carries no image".into()));
        }
        Ok(out)
    }

    fn caption_frames(&self, req: &ChatRequest, last_only: bool, style: &DescriptionStyle) -> Result<String, GatewayError> {
        let frames = self.attached_frames(req, last_only)?;
        Ok(frames
            .iter()
            .map(|&(c, f)| render::frame_caption(&self.clips[c], f, style))
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn caption_window(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let frames = self.attached_frames(req, false)?;
        let sfs: Vec<&str> = Self::var(req, "sfs_features")?
            .split(", ")
            .filter(|s| !s.is_empty())
            .collect();
        let mut names: Vec<&str> = Vec::new();
        let mut frame_items = Vec::new();
        for &(c, f) in &frames {
            let clip = &self.clips[c];
            let mut mentions = Vec::new();
            for label in render::present_in(clip, f) {
                let pos = match names.iter().position(|n| *n == label) {
                    Some(p) => p,
                    None => {
                        names.push(label);
                        names.len() - 1
                    }
                };
                mentions.push(format!("<person {}>", pos + 1));
            }
            let text = match mentions.len() {
                0 => "The scene is empty.".to_string(),
                1 => format!("{} is visible.", mentions[0]),
                _ => format!("{} are visible.", mentions.join(" and ")),
            };
            frame_items.push(json!({"frame": f, "text": text}));
        }
        let clip = &self.clips[frames[0].0];
        let characters: Vec<_> = names
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let profile = clip
                    .profiles
                    .get(*label)
                    .map(|p| p.restricted_to(sfs.iter().copied()))
                    .unwrap_or_default();
                json!({"name": format!("person {}", i + 1), "features": profile})
            })
            .collect();
        Ok(json!({"frames": frame_items, "characters": characters}).to_string())
    }

    fn segment_frames(req: &ChatRequest) -> Result<String, GatewayError> {
        let caption = Self::var(req, "caption")?;
        let marker = regex::Regex::new(r"(?i)\[frame\s+(\d+)\]").expect("valid regex");
        let starts: Vec<_> = marker.captures_iter(caption).collect();
        let items: Vec<_> = if starts.is_empty() {
            vec![json!({"frame": 1, "text": caption})]
        } else {
            starts
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let m = c.get(0).expect("group 0");
                    let end = starts
                        .get(i + 1)
                        .map_or(caption.len(), |n| n.get(0).expect("group 0").start());
                    json!({"frame": c[1].parse::<u32>().unwrap_or(1), "text": &caption[m.start()..end]})
                })
                .collect()
        };
        Ok(serde_json::Value::Array(items).to_string())
    }

    fn extract_characters(req: &ChatRequest) -> Result<String, GatewayError> {
        let segment = Self::var(req, "segment")?;
        let people: Vec<&str> = render::PERSON_RE
            .find_iter(segment)
            .map(|m| m.as_str())
            .collect();
        Ok(json!(people).to_string())
    }

    fn judge_identity(req: &ChatRequest) -> Result<String, GatewayError> {
        let candidate = Self::var(req, "candidate")?;
        let tracks = Self::var(req, "tracks")?;
        let mut best: Option<(usize, f64)> = None;
        for line in tracks.lines() {
            let Some((num, text)) = line.split_once(". ") else {
                continue;
            };
            let Ok(num) = num.trim().parse::<usize>() else {
                continue;
            };
            let score = description_similarity(candidate, text);
            if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
                best = Some((num, score));
            }
        }
        Ok(match best {
            Some((i, s)) => json!({"index": i, "score": s}),
            None => json!({"index": null, "score": null}),
        }
        .to_string())
    }

    fn sfs_trial(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let first = first_profile(Self::var(req, "anchor_first")?)?;
        let last = first_profile(Self::var(req, "anchor_last")?)?;
        let probe: Vec<&str> = Self::var(req, "probe")?
            .split("; ")
            .filter(|s| !s.is_empty())
            .collect();
        let agree = |n: &str| first.get(n).is_some() && first.get(n) == last.get(n);
        let same = match &self.policy {
            TrialPolicy::ProfileEquality => probe.iter().all(|n| agree(n)),
            TrialPolicy::ExtrasSensitive => first.names().filter(|n| last.contains(n)).all(agree),
            TrialPolicy::Planted(feature) => {
                let honest = probe.iter().all(|n| agree(n));
                if probe.contains(&feature.as_str()) {
                    honest
                } else {
                    !honest
                }
            }
        };
        Ok(if same { "yes" } else { "no" }.to_string())
    }

    fn judge_pair(req: &ChatRequest) -> Result<String, GatewayError> {
        let a = PairCues::parse(Self::var(req, "a")?);
        let b = PairCues::parse(Self::var(req, "b")?);
        let profile = a.profile.is_some() && a.profile == b.profile;
        let action = a.action.is_some() && a.action == b.action;
        let scene = a.scene.is_some() && a.scene == b.scene;
        let same = match Self::var(req, "criterion")? {
            "features" => profile,
            "actions" => action,
            "environment" => scene,
            _ => [profile, action, scene].iter().filter(|x| **x).count() >= 2,
        };
        Ok(if same { "yes" } else { "no" }.to_string())
    }

    fn gpt_score(req: &ChatRequest) -> Result<String, GatewayError> {
        let p = word_set(Self::var(req, "prediction")?);
        let g = word_set(Self::var(req, "ground_truth")?);
        let union = p.union(&g).count();
        let jaccard = if union == 0 {
            1.0
        } else {
            p.intersection(&g).count() as f64 / union as f64
        };
        Ok(format!("Score: {}", (jaccard * 10.0).round() as u32))
    }
}

fn first_profile(text: &str) -> Result<FeatureProfile, GatewayError> {
    render::parse_people(text)
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol(format!("mock: no rendered person in '{text}'")))
}

fn word_set(text: &str) -> std::collections::BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Equal-valued features over the union of features when both sides carry
/// rendered profiles, otherwise exact normalized text equality.
pub fn description_similarity(a: &str, b: &str) -> f64 {
    match (
        render::parse_people(a).into_iter().next(),
        render::parse_people(b).into_iter().next(),
    ) {
        (Some(pa), Some(pb)) => profile_overlap(&pa, &pb),
        _ => {
            if normalize_ws(a).eq_ignore_ascii_case(&normalize_ws(b)) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Features with equal values divided by the number of distinct features
/// named on either side.
pub fn profile_overlap(a: &FeatureProfile, b: &FeatureProfile) -> f64 {
    let mut union: Vec<&str> = a.names().chain(b.names()).collect();
    union.sort_unstable();
    union.dedup();
    if union.is_empty() {
        return 0.0;
    }
    let equal = union
        .iter()
        .filter(|n| a.get(n).is_some() && a.get(n) == b.get(n))
        .count();
    equal as f64 / union.len() as f64
}

/// Profile, action and scene parsed from `a person (...) is <action> in the <scene>.`
struct PairCues {
    profile: Option<FeatureProfile>,
    action: Option<String>,
    scene: Option<String>,
}

impl PairCues {
    fn parse(text: &str) -> Self {
        let profile = render::parse_people(text).into_iter().next();
        let rest = text.rsplit_once(") is ").map(|(_, r)| r.trim_end_matches('.'));
        let (action, scene) = match rest.and_then(|r| r.split_once(" in the ")) {
            Some((a, s)) => (Some(a.to_string()), Some(s.to_string())),
            None => (rest.map(str::to_string), None),
        };
        Self {
            profile,
            action,
            scene,
        }
    }
}

impl Backend for WorldMock {
    fn name(&self) -> String {
        "mock:world".into()
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = match req.task_name() {
            "segment_frames" => Self::segment_frames(req)?,
            "extract_characters" => Self::extract_characters(req)?,
            "judge_identity" => Self::judge_identity(req)?,
            "caption_st" => self.caption_frames(req, false, &self.style)?,
            "caption_mtsc" | "caption_mtdc" => self.caption_frames(req, true, &self.style)?,
            "caption_baseline" => self.caption_frames(req, true, &self.weak_style)?,
            "summarize" => normalize_ws(Self::var(req, "captions")?),
            "caption_window" => self.caption_window(req)?,
            "sfs_trial" => self.sfs_trial(req)?,
            "judge_pair" => Self::judge_pair(req)?,
            "gpt_score" => Self::gpt_score(req)?,
            other => {
                return Err(GatewayError::Unsupported {
                    backend: self.name(),
                    operation: format!("task '{other}'"),
                })
            }
        };
        Ok(ChatResponse::text(text))
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        Ok(EmbedResponse {
            vectors: self.embedder.embed_all(&req.texts)?,
        })
    }
}

/// A backend that returns canned responses keyed by task name, in order.
/// Handy for exercising parse-failure and retry paths.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    scripts: Mutex<BTreeMap<String, std::collections::VecDeque<String>>>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, task: &str, response: impl Into<String>) -> &Self {
        self.scripts
            .lock()
            .entry(task.to_string())
            .or_default()
            .push_back(response.into());
        self
    }
}

impl Backend for ScriptedMock {
    fn name(&self) -> String {
        "mock:scripted".into()
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut scripts = self.scripts.lock();
        scripts
            .get_mut(req.task_name())
            .and_then(|q| q.pop_front())
            .map(ChatResponse::text)
            .ok_or_else(|| GatewayError::Protocol(format!("script for '{}' exhausted", req.task_name())))
    }
}

/// Builds a named mock: `vision`, `onehot` and `profile` (profile-equality
/// trials), `extras` (extras-sensitive trials) or `planted:<feature>`.
pub fn builtin(
    name: &str,
    clips: Option<&[AnnotatedClip]>,
) -> Result<Arc<dyn Backend>, GatewayError> {
    let world = WorldMock::new(clips.unwrap_or(&[]));
    let policy = match name {
        "vision" | "onehot" | "profile" => TrialPolicy::ProfileEquality,
        "extras" => TrialPolicy::ExtrasSensitive,
        other => match other.strip_prefix("planted:") {
            Some(f) if !f.is_empty() => TrialPolicy::Planted(f.to_string()),
            _ => return Err(GatewayError::Config(format!("unknown mock backend '{name}'"))),
        },
    };
    Ok(Arc::new(world.with_policy(policy)))
}
