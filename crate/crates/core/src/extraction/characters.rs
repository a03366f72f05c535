//! Step 2: pull person descriptions out of one segment.

use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use super::{verbatim, ExtractionError, Stage};
use crate::gateway::{Gateway, Message};
use crate::prompt::{json_block, PromptSet};
use crate::types::CharacterDescription;

static MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<([^<>\s][^<>]*)>").expect("valid regex"));

/// `<name>` mentions, as written by label-referencing captions.
pub fn bracket_mentions(text: &str) -> Vec<String> {
    MENTION
        .captures_iter(text)
        .map(|c| c[1].trim().to_string())
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Item {
    Text(String),
    Object { description: String },
}

fn parse_characters(segment: &str, reply: &str) -> Result<Vec<CharacterDescription>, String> {
    let block = json_block(reply).ok_or("reply contains no JSON array")?;
    let items: Vec<Item> =
        serde_json::from_str(block).map_err(|e| format!("malformed description list: {e}"))?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let text = match item {
            Item::Text(t) | Item::Object { description: t } => t,
        };
        let (s, e) = verbatim::locate(segment, &text, 0)
            .ok_or_else(|| verbatim::mismatch(segment, &text))?;
        out.push(CharacterDescription::new(&segment[s..e]).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Person descriptions in `segment`, in the order the model lists them.
/// Segments that reference people as `<name>` are read directly.
pub fn extract_characters(
    segment: &str,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<Vec<CharacterDescription>, ExtractionError> {
    if segment.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mentions = bracket_mentions(segment);
    if !mentions.is_empty() {
        return mentions
            .into_iter()
            .map(|m| CharacterDescription::new(m).map_err(|e| ExtractionError::Structure(e.to_string())))
            .collect();
    }
    let (task, text) = prompts
        .get("extract_characters")?
        .task(&[("segment", segment.to_string())])?;
    let gw = |e| ExtractionError::Gateway {
        stage: Stage::Characters,
        source: e,
    };
    let mut messages = vec![Message::user(text)];
    let reply = gateway
        .chat(&gateway.request(task.clone(), messages.clone()))
        .map_err(gw)?;
    let problem = match parse_characters(segment, &reply.text) {
        Ok(c) => return Ok(c),
        Err(p) => p,
    };
    log::warn!("character extraction rejected ({problem}); re-prompting");
    messages.push(Message::assistant(reply.text));
    messages.push(Message::user(format!(
        "Your answer was rejected: {problem}. Copy each description exactly from the text and answer with the JSON array only."
    )));
    let retry = gateway.chat(&gateway.request(task, messages)).map_err(gw)?;
    parse_characters(segment, &retry.text).map_err(|detail| ExtractionError::Verbatim {
        stage: Stage::Characters,
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_source_casing_and_order() {
        let seg = "A man in a red coat waves at a woman in blue.";
        let got = parse_characters(seg, r#"["a man in a red coat", "a woman in blue"]"#).unwrap();
        let texts: Vec<_> = got.iter().map(|c| c.surface_text.as_str()).collect();
        assert_eq!(texts, ["A man in a red coat", "a woman in blue"]);
    }

    #[test]
    fn empty_list() {
        assert!(parse_characters("A quiet street.", "[]").unwrap().is_empty());
    }

    #[test]
    fn rejects_invented_description() {
        assert!(parse_characters("A man waves.", r#"["a tall man"]"#).is_err());
    }

    #[test]
    fn bracket_mentions_in_order() {
        assert_eq!(
            bracket_mentions("[frame 1] <P2> greets <P1>."),
            vec!["P2".to_string(), "P1".to_string()]
        );
    }
}
