use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An image reference. Fingerprints see only `content_hash`, so moving a
/// file does not invalidate recorded fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attachment {
    pub image_key: String,
    pub content_hash: String,
}

impl Attachment {
    /// Hashes the file content when `image_key` names a readable local file,
    /// otherwise the key itself (URLs, synthetic frames).
    pub fn resolve(image_key: &str) -> Result<Self, GatewayError> {
        let path = Path::new(image_key);
        let digest = if !image_key.contains("://") && path.is_file() {
            let bytes = std::fs::read(path)
                .map_err(|e| GatewayError::Protocol(format!("reading '{image_key}': {e}")))?;
            Sha256::digest(&bytes)
        } else {
            Sha256::digest(image_key.as_bytes())
        };
        Ok(Self {
            image_key: image_key.to_string(),
            content_hash: hex::encode(digest),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            attachments: Vec::new(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, text)
    }

    pub fn with_attachments(mut self, attachments: Vec<Attachment>) -> Self {
        self.attachments = attachments;
        self
    }
}

/// Names the prompt a request was rendered from and the values substituted
/// into it. Providers never see it; offline mocks answer from it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vars: BTreeMap<String, String>,
}

impl TaskContext {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            vars: BTreeMap::new(),
        }
    }

    pub fn var(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.vars.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.vars.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f32,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskContext>,
}

#[derive(Serialize)]
struct CanonicalMessage<'a> {
    role: Role,
    text: &'a str,
    attachments: Vec<&'a str>,
}

#[derive(Serialize)]
struct CanonicalChat<'a> {
    kind: &'static str,
    model: &'a str,
    messages: Vec<CanonicalMessage<'a>>,
    temperature: f32,
    max_tokens: u32,
    task: Option<&'a TaskContext>,
}

impl ChatRequest {
    /// SHA-256 over the canonical request: message order matters,
    /// attachments contribute their content hash only.
    pub fn fingerprint(&self) -> String {
        let canon = CanonicalChat {
            kind: "chat",
            model: &self.model,
            messages: self
                .messages
                .iter()
                .map(|m| CanonicalMessage {
                    role: m.role,
                    text: &m.text,
                    attachments: m.attachments.iter().map(|a| a.content_hash.as_str()).collect(),
                })
                .collect(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            task: self.task.as_ref(),
        };
        let bytes = serde_json::to_vec(&canon).expect("canonical request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn task_name(&self) -> &str {
        self.task.as_ref().map_or("", |t| t.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: TokenUsage::default(),
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

impl EmbedRequest {
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::json!({"kind": "embed", "model": self.model, "texts": self.texts});
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}
