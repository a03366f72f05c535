//! Free-text captioning: single-turn, multi-turn with a shared context, and
//! multi-turn with fresh contexts.

use serde::{Deserialize, Serialize};

use super::{CaptionError, CaptionMode};
use crate::gateway::{Attachment, Gateway, Message, TaskContext};
use crate::prompt::PromptSet;
use crate::types::AnnotatedClip;

/// One model exchange, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub task: String,
    pub frame: Option<u32>,
    pub reply: String,
}

fn attach(clip: &AnnotatedClip, frame: u32) -> Result<Attachment, CaptionError> {
    Attachment::resolve(&clip.frames[frame as usize - 1].image_key)
        .map_err(|source| CaptionError::Gateway { window: None, source })
}

fn ask(gateway: &Gateway, task: TaskContext, messages: Vec<Message>) -> Result<String, CaptionError> {
    gateway
        .chat(&gateway.request(task, messages))
        .map(|r| r.text)
        .map_err(|source| CaptionError::Gateway { window: None, source })
}

/// Caption text plus the exchanges that produced it.
pub fn free_text_caption(
    clip: &AnnotatedClip,
    mode: CaptionMode,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<(String, Vec<Exchange>), CaptionError> {
    let n = clip.n_frames();
    if n == 0 {
        return Err(CaptionError::Config(format!("clip '{}' has no frames", clip.clip_id)));
    }
    let mut log = Vec::new();
    let per_frame: Vec<String> = match mode {
        CaptionMode::St => {
            let (task, text) = prompts.get("caption_st")?.task(&[("n_frames", n.to_string())])?;
            let images = (1..=n).map(|f| attach(clip, f)).collect::<Result<Vec<_>, _>>()?;
            let reply = ask(gateway, task, vec![Message::user(text).with_attachments(images)])?;
            log.push(Exchange { task: "caption_st".into(), frame: None, reply: reply.clone() });
            return Ok((reply, log));
        }
        CaptionMode::MtscText | CaptionMode::MtscNotext => {
            let template = prompts.get("caption_mtsc")?;
            let mut history: Vec<Message> = Vec::new();
            let mut captions: Vec<String> = Vec::new();
            for f in 1..=n {
                let previous = if mode == CaptionMode::MtscText && !captions.is_empty() {
                    format!("Your captions so far:\n{}", captions.join("\n"))
                } else {
                    String::new()
                };
                let (task, text) = template.task(&[("frame", f.to_string()), ("previous_caption", previous)])?;
                history.push(Message::user(text).with_attachments(vec![attach(clip, f)?]));
                let reply = ask(gateway, task, history.clone())?;
                log.push(Exchange { task: "caption_mtsc".into(), frame: Some(f), reply: reply.clone() });
                history.push(Message::assistant(reply.clone()));
                captions.push(reply);
            }
            captions
        }
        CaptionMode::Mtdc | CaptionMode::Baseline => {
            let name = if mode == CaptionMode::Mtdc { "caption_mtdc" } else { "caption_baseline" };
            let template = prompts.get(name)?;
            let mut captions: Vec<String> = Vec::new();
            for f in 1..=n {
                let previous = if captions.is_empty() { "(none)".to_string() } else { captions.join("\n") };
                let (task, text) = template.task(&[("frame", f.to_string()), ("previous_caption", previous)])?;
                let reply = ask(gateway, task, vec![Message::user(text).with_attachments(vec![attach(clip, f)?])])?;
                log.push(Exchange { task: name.into(), frame: Some(f), reply: reply.clone() });
                captions.push(reply);
            }
            captions
        }
        CaptionMode::Rice => {
            return Err(CaptionError::Config("windowed mode has no free-text path".into()));
        }
    };
    let (task, text) = prompts.get("summarize")?.task(&[("captions", per_frame.join("\n"))])?;
    let summary = ask(gateway, task, vec![Message::user(text)])?;
    log.push(Exchange { task: "summarize".into(), frame: None, reply: summary.clone() });
    Ok((summary, log))
}
