//! Step 1: split a caption into per-frame segments.

use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use super::{verbatim, ExtractionError, Stage};
use crate::gateway::{Gateway, Message};
use crate::prompt::{json_block, PromptSet};
use crate::types::{AnnotatedClip, CaptionSegment, StructuredCaption};

static FRAME_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[frame\s+(\d+)\]").expect("valid regex"));

/// Whether `caption` carries `[frame k]` markers and can skip the model.
pub fn has_frame_markers(caption: &str) -> bool {
    FRAME_MARKER.is_match(caption)
}

/// Cuts `caption` at the given byte offsets. Text before the first cut
/// joins the first segment, so the segments concatenate to the caption.
fn cut(
    clip_id: &str,
    caption: &str,
    cuts: &[(usize, u32)],
    n_frames: u32,
) -> Result<StructuredCaption, ExtractionError> {
    let mut segments: Vec<CaptionSegment> = Vec::new();
    for (k, &(start, frame)) in cuts.iter().enumerate() {
        let begin = if k == 0 { 0 } else { start };
        let end = cuts.get(k + 1).map_or(caption.len(), |c| c.0);
        let text = &caption[begin..end];
        match segments.last_mut() {
            Some(last) if last.frame_index == frame => last.text.push_str(text),
            _ => segments.push(CaptionSegment {
                frame_index: frame,
                text: text.to_string(),
                characters: Vec::new(),
            }),
        }
    }
    let sc = StructuredCaption {
        clip_id: clip_id.to_string(),
        segments,
        full_text: caption.to_string(),
    };
    sc.validate(n_frames)
        .map_err(|e| ExtractionError::Structure(e.to_string()))?;
    Ok(sc)
}

/// Splits at `[frame k]` markers without a model call.
pub fn split_marked(
    clip_id: &str,
    caption: &str,
    n_frames: u32,
) -> Result<StructuredCaption, ExtractionError> {
    let cuts: Vec<(usize, u32)> = FRAME_MARKER
        .captures_iter(caption)
        .map(|c| {
            let m = c.get(0).expect("group 0");
            let frame = c[1].parse::<u32>().unwrap_or(0);
            (m.start(), frame)
        })
        .collect();
    cut(clip_id, caption, &cuts, n_frames)
}

#[derive(Deserialize)]
struct SegmentItem {
    frame: u32,
    text: String,
}

fn parse_segments(
    clip_id: &str,
    caption: &str,
    reply: &str,
    n_frames: u32,
) -> Result<StructuredCaption, String> {
    let block = json_block(reply).ok_or("reply contains no JSON array")?;
    let items: Vec<SegmentItem> =
        serde_json::from_str(block).map_err(|e| format!("malformed segment list: {e}"))?;
    if items.is_empty() {
        return Err("empty segment list".into());
    }
    let pieces: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
    let spans = verbatim::locate_in_order(caption, &pieces)?;
    let cuts: Vec<(usize, u32)> = spans
        .iter()
        .zip(&items)
        .map(|(s, i)| (s.0, i.frame))
        .collect();
    cut(clip_id, caption, &cuts, n_frames).map_err(|e| e.to_string())
}

/// Assigns frame indices to caption text. Marked captions are split
/// directly; otherwise the model segments the caption and every returned
/// span must occur verbatim, in order. One corrective re-prompt is allowed.
pub fn assign_frame_indices(
    caption: &str,
    clip: &AnnotatedClip,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<StructuredCaption, ExtractionError> {
    let n = clip.n_frames();
    if caption.trim().is_empty() {
        return Ok(StructuredCaption {
            clip_id: clip.clip_id.clone(),
            segments: Vec::new(),
            full_text: caption.to_string(),
        });
    }
    if has_frame_markers(caption) {
        return split_marked(&clip.clip_id, caption, n);
    }
    let (task, text) = prompts
        .get("segment_frames")?
        .task(&[("caption", caption.to_string()), ("n_frames", n.to_string())])?;
    let mut messages = vec![Message::user(text)];
    let gw = |e| ExtractionError::Gateway {
        stage: Stage::Segment,
        source: e,
    };
    let reply = gateway
        .chat(&gateway.request(task.clone(), messages.clone()))
        .map_err(gw)?;
    let problem = match parse_segments(&clip.clip_id, caption, &reply.text, n) {
        Ok(sc) => return Ok(sc),
        Err(p) => p,
    };
    log::warn!("clip '{}': segmentation rejected ({problem}); re-prompting", clip.clip_id);
    messages.push(Message::assistant(reply.text));
    messages.push(Message::user(format!(
        "Your answer was rejected: {problem}. Copy the caption text exactly and answer with the JSON array only."
    )));
    let retry = gateway.chat(&gateway.request(task, messages)).map_err(gw)?;
    parse_segments(&clip.clip_id, caption, &retry.text, n).map_err(|detail| {
        ExtractionError::Verbatim {
            stage: Stage::Segment,
            detail,
        }
    })
}
