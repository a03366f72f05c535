use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::gateway::{Gateway, Message};
use crate::prompt::PromptTemplate;

pub const SCORE_MAX: f64 = 10.0;

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptScore {
    pub score: f64,
    pub raw: String,
}

/// First numeric literal in `text`, if it lies on the 0–10 scale.
pub fn parse_score(text: &str) -> Option<f64> {
    let v: f64 = NUMBER.find(text)?.as_str().parse().ok()?;
    (0.0..=SCORE_MAX).contains(&v).then_some(v)
}

/// Asks the judge model to rate `prediction` against `ground_truth`. An
/// unparseable answer is re-asked once before failing.
pub fn gpt_score(
    prediction: &str,
    ground_truth: &str,
    gateway: &Gateway,
    rubric: &PromptTemplate,
) -> Result<GptScore, MetricsError> {
    let (task, text) = rubric.task(&[
        ("prediction", prediction.to_string()),
        ("ground_truth", ground_truth.to_string()),
    ])?;
    let mut messages = vec![Message::user(text)];
    let first = gateway.chat(&gateway.request(task.clone(), messages.clone()))?;
    if let Some(score) = parse_score(&first.text) {
        return Ok(GptScore {
            score,
            raw: first.text,
        });
    }
    log::warn!("unparseable score {:?}; asking again", first.text);
    messages.push(Message::assistant(first.text));
    messages.push(Message::user(
        "Reply with only \"Score: N\" where N is a number from 0 to 10.",
    ));
    let second = gateway.chat(&gateway.request(task, messages))?;
    match parse_score(&second.text) {
        Some(score) => Ok(GptScore {
            score,
            raw: second.text,
        }),
        None => Err(MetricsError::Scoring { raw: second.text }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::ScriptedMock;
    use crate::gateway::GatewayConfig;
    use crate::prompt::PromptSet;
    use std::sync::Arc;

    #[test]
    fn extracts_first_number() {
        assert_eq!(parse_score("score: 7/10 because it is close"), Some(7.0));
        assert_eq!(parse_score("Score: 6.5"), Some(6.5));
        assert_eq!(parse_score("no idea"), None);
        assert_eq!(parse_score("Score: 42"), None);
    }

    #[test]
    fn reprompts_once_then_fails_with_raw() {
        let mock = ScriptedMock::new();
        mock.push("gpt_score", "hmm").push("gpt_score", "still no");
        let gw = Gateway::with_backend(&GatewayConfig::mock("scripted"), Arc::new(mock)).unwrap();
        let set = PromptSet::builtin();
        let err = gpt_score("a", "b", &gw, set.get("gpt_score").unwrap()).unwrap_err();
        match err {
            MetricsError::Scoring { raw } => assert_eq!(raw, "still no"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recovers_on_second_answer() {
        let mock = ScriptedMock::new();
        mock.push("gpt_score", "hmm").push("gpt_score", "Score: 4");
        let gw = Gateway::with_backend(&GatewayConfig::mock("scripted"), Arc::new(mock)).unwrap();
        let set = PromptSet::builtin();
        let s = gpt_score("a", "b", &gw, set.get("gpt_score").unwrap()).unwrap();
        assert_eq!(s.score, 4.0);
    }
}
