//! Multi-frame windows: several key frames captioned in one exchange, with
//! people described by strong features only.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::{CaptionError, PipelineConfig};
use crate::extraction::bracket_mentions;
use crate::gateway::{Attachment, Gateway, Message};
use crate::prompt::{json_block, PromptSet};
use crate::render;
use crate::types::{AnnotatedClip, CharacterDescription, FeatureProfile};

/// Non-overlapping 1-based frame ranges of `window_len` frames covering
/// `1..=n_frames`; the last one may be short.
pub fn plan_windows(n_frames: u32, window_len: u32) -> Vec<RangeInclusive<u32>> {
    assert!(n_frames >= 1 && window_len >= 1, "plan_windows needs positive sizes");
    (0..n_frames.div_ceil(window_len))
        .map(|w| {
            let start = w * window_len + 1;
            start..=(start + window_len - 1).min(n_frames)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCharacter {
    /// The window-local name, as mentioned in the text.
    pub name: String,
    pub description: CharacterDescription,
    /// Frames of the window whose text mentions this character.
    pub frames: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCaption {
    pub window_index: usize,
    pub frame_indices: Vec<u32>,
    /// Per-frame text with `<name>` mentions.
    pub frame_texts: Vec<(u32, String)>,
    pub characters: Vec<WindowCharacter>,
}

impl WindowCaption {
    pub fn text(&self) -> String {
        self.frame_texts
            .iter()
            .map(|(f, t)| format!("[frame {f}] {t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Deserialize)]
struct Reply {
    frames: Vec<ReplyFrame>,
    #[serde(default)]
    characters: Vec<ReplyCharacter>,
}

#[derive(Deserialize)]
struct ReplyFrame {
    frame: u32,
    text: String,
}

#[derive(Deserialize)]
struct ReplyCharacter {
    name: String,
    #[serde(default)]
    features: BTreeMap<String, String>,
}

fn parse_reply(
    reply: &str,
    window_index: usize,
    range: &RangeInclusive<u32>,
    sfs: &[String],
) -> Result<WindowCaption, String> {
    let block = json_block(reply).ok_or("reply contains no JSON object")?;
    let parsed: Reply = serde_json::from_str(block).map_err(|e| format!("malformed window reply: {e}"))?;
    let expected: Vec<u32> = range.clone().collect();
    let got: Vec<u32> = parsed.frames.iter().map(|f| f.frame).collect();
    if got != expected {
        return Err(format!("expected frames {expected:?}, got {got:?}"));
    }
    let mut names = BTreeSet::new();
    for c in &parsed.characters {
        if !names.insert(c.name.trim().to_lowercase()) {
            return Err(format!("character '{}' listed twice", c.name));
        }
    }
    let mut mentions: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for f in &parsed.frames {
        for m in bracket_mentions(&f.text) {
            let key = m.to_lowercase();
            if !names.contains(&key) {
                return Err(format!("frame {} mentions <{m}>, which is not among the characters", f.frame));
            }
            let frames = mentions.entry(key).or_default();
            if frames.last() != Some(&f.frame) {
                frames.push(f.frame);
            }
        }
    }
    let mut characters = Vec::new();
    for c in parsed.characters {
        let key = c.name.trim().to_lowercase();
        let Some(frames) = mentions.remove(&key) else {
            log::warn!("window {window_index}: character '{}' is never mentioned; dropped", c.name);
            continue;
        };
        let mut profile = FeatureProfile::new();
        for (k, v) in c.features {
            if !sfs.contains(&k) {
                log::warn!("window {window_index}: feature '{k}' of '{}' is outside the feature set; dropped", c.name);
                continue;
            }
            let v = v.trim();
            if v.is_empty() || v.contains([';', ':', '(', ')', '<', '>']) {
                log::warn!("window {window_index}: unusable value {v:?} for '{k}'; dropped");
                continue;
            }
            profile.insert(k, v);
        }
        let surface = format!(
            "{} in {}",
            render::describe(&profile),
            frames
                .iter()
                .map(|f| {
                    let t = &parsed.frames.iter().find(|x| x.frame == *f).expect("mentioned frame").text;
                    format!("\"{t}\"")
                })
                .collect::<Vec<_>>()
                .join(", ")
        );
        characters.push(WindowCharacter {
            name: c.name.trim().to_string(),
            description: CharacterDescription::new(surface)
                .map_err(|e| e.to_string())?
                .with_features(profile),
            frames,
        });
    }
    Ok(WindowCaption {
        window_index,
        frame_indices: expected,
        frame_texts: parsed.frames.into_iter().map(|f| (f.frame, f.text)).collect(),
        characters,
    })
}

/// Captions the frames of `range` in a single exchange. A reply that does
/// not parse gets one corrective re-prompt.
pub fn caption_window(
    clip: &AnnotatedClip,
    window_index: usize,
    range: RangeInclusive<u32>,
    config: &PipelineConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<WindowCaption, CaptionError> {
    let frames: Vec<u32> = range.clone().collect();
    let attachments = frames
        .iter()
        .map(|&f| Attachment::resolve(&clip.frames[f as usize - 1].image_key))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| CaptionError::Gateway { window: Some(window_index), source })?;
    let (task, text) = prompts.get("caption_window")?.task(&[
        (
            "frames",
            frames.iter().map(u32::to_string).collect::<Vec<_>>().join(", "),
        ),
        ("sfs_features", config.sfs.join(", ")),
    ])?;
    let mut messages = vec![Message::user(text).with_attachments(attachments)];
    let call = |messages: Vec<Message>| {
        gateway
            .chat(&gateway.request(task.clone(), messages))
            .map_err(|source| CaptionError::Gateway { window: Some(window_index), source })
    };
    let reply = call(messages.clone())?;
    let detail = match parse_reply(&reply.text, window_index, &range, &config.sfs) {
        Ok(w) => return Ok(w),
        Err(d) => d,
    };
    log::info!("window {window_index}: re-prompting after: {detail}");
    messages.push(Message::assistant(reply.text));
    messages.push(Message::user(format!(
        "That answer could not be used: {detail}. Answer again with JSON only, in the requested form."
    )));
    let retry = call(messages)?;
    parse_reply(&retry.text, window_index, &range, &config.sfs)
        .map_err(|detail| CaptionError::Window { window: window_index, detail })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_partition() {
        assert_eq!(plan_windows(10, 4), vec![1..=4, 5..=8, 9..=10]);
        assert_eq!(plan_windows(4, 4), vec![1..=4]);
        assert_eq!(plan_windows(1, 4), vec![1..=1]);
    }

    fn sfs() -> Vec<String> {
        vec!["hair color".into(), "eyewear".into()]
    }

    #[test]
    fn reply_features_outside_set_dropped() {
        let reply = r#"{"frames":[{"frame":1,"text":"<person 1> waves."},{"frame":2,"text":"Nobody."}],
            "characters":[{"name":"person 1","features":{"hair color":"black","gender":"male"}}]}"#;
        let w = parse_reply(reply, 0, &(1..=2), &sfs()).unwrap();
        let c = &w.characters[0];
        assert_eq!(c.frames, vec![1]);
        assert_eq!(c.description.features.as_ref().unwrap().render(), "hair color: black");
    }

    #[test]
    fn reply_with_unknown_mention_rejected() {
        let reply = r#"{"frames":[{"frame":1,"text":"<person 2> waves."}],"characters":[{"name":"person 1"}]}"#;
        assert!(parse_reply(reply, 0, &(1..=1), &sfs()).unwrap_err().contains("person 2"));
    }

    #[test]
    fn reply_with_wrong_frames_rejected() {
        let reply = r#"{"frames":[{"frame":2,"text":"x"}],"characters":[]}"#;
        assert!(parse_reply(reply, 0, &(1..=1), &sfs()).is_err());
    }
}
