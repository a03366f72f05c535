use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{
    Attachment, Backend, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, GatewayConfig,
    GatewayError, Role, TokenUsage,
};

/// Translation between gateway requests and one provider's wire format.
pub trait ProviderDialect: Send + Sync {
    fn name(&self) -> &str;
    fn chat_path(&self) -> &str;
    fn embed_path(&self) -> &str;
    fn chat_body(&self, req: &ChatRequest) -> Result<Value, GatewayError>;
    fn parse_chat(&self, body: &Value) -> Result<ChatResponse, GatewayError>;
    fn embed_body(&self, req: &EmbedRequest) -> Value;
    fn parse_embed(&self, body: &Value) -> Result<EmbedResponse, GatewayError>;
}

/// The `/chat/completions` + `/embeddings` convention shared by OpenAI and
/// the OpenAI-compatible endpoints of Qwen and DeepSeek.
#[derive(Debug, Default, Clone, Copy)]
pub struct OpenAiCompatible;

fn image_url(a: &Attachment) -> Result<String, GatewayError> {
    let key = &a.image_key;
    if key.starts_with("http://") || key.starts_with("https://") || key.starts_with("data:") {
        return Ok(key.clone());
    }
    if key.contains("://") {
        return Err(GatewayError::Config(format!(
            "attachment '{key}' cannot be sent to a remote provider"
        )));
    }
    let bytes = std::fs::read(key)
        .map_err(|e| GatewayError::Config(format!("attachment '{key}': {e}")))?;
    let mime = match Path::new(key)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{data}"))
}

impl ProviderDialect for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn chat_path(&self) -> &str {
        "/chat/completions"
    }

    fn embed_path(&self) -> &str {
        "/embeddings"
    }

    fn chat_body(&self, req: &ChatRequest) -> Result<Value, GatewayError> {
        let mut messages = Vec::with_capacity(req.messages.len());
        for m in &req.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content = if m.attachments.is_empty() {
                json!(m.text)
            } else {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for a in &m.attachments {
                    parts.push(json!({"type": "image_url", "image_url": {"url": image_url(a)?}}));
                }
                Value::Array(parts)
            };
            messages.push(json!({"role": role, "content": content}));
        }
        Ok(json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }))
    }

    fn parse_chat(&self, body: &Value) -> Result<ChatResponse, GatewayError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Protocol("response lacks choices[0].message.content".into()))?;
        let usage = TokenUsage {
            prompt_tokens: body
                .pointer("/usage/prompt_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
            completion_tokens: body
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(ChatResponse {
            text: text.to_string(),
            usage,
            latency_ms: 0,
        })
    }

    fn embed_body(&self, req: &EmbedRequest) -> Value {
        json!({"model": req.model, "input": req.texts})
    }

    fn parse_embed(&self, body: &Value) -> Result<EmbedResponse, GatewayError> {
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Protocol("response lacks data array".into()))?;
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::Protocol("data item lacks embedding".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| GatewayError::Protocol("non-numeric embedding".into()))?;
            indexed.push((idx, vec));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(EmbedResponse {
            vectors: indexed.into_iter().map(|(_, v)| v).collect(),
        })
    }
}

/// Live backend over HTTP. The credential is read once, at construction.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    dialect: Box<dyn ProviderDialect>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("dialect", &self.dialect.name())
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.credential_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                GatewayError::Config(format!(
                    "credential variable {} is not set",
                    config.credential_env
                ))
            })?;
        Self::new(&config.endpoint, api_key, config.timeout_secs, Box::new(OpenAiCompatible))
    }

    pub fn new(
        endpoint: &str,
        api_key: String,
        timeout_secs: u64,
        dialect: Box<dyn ProviderDialect>,
    ) -> Result<Self, GatewayError> {
        if endpoint.is_empty() {
            return Err(GatewayError::Config("endpoint is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            dialect,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}{}", self.endpoint, path);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Status {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Protocol(format!("invalid JSON from {url}: {e}")))
    }
}

fn transport_error(e: ureq::Error) -> GatewayError {
    let transient = matches!(
        e,
        ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed
            | ureq::Error::Protocol(_)
    );
    GatewayError::Transport {
        message: e.to_string(),
        transient,
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.dialect.name())
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.dialect.chat_body(req)?;
        let value = self.post(self.dialect.chat_path(), &body)?;
        self.dialect.parse_chat(&value)
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        let body = self.dialect.embed_body(req);
        let value = self.post(self.dialect.embed_path(), &body)?;
        self.dialect.parse_embed(&value)
    }
}
