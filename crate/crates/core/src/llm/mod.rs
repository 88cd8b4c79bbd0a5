//! Chat-completion backends with tool calling.

mod openai;
mod scripted;

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use openai::{OpenAiBackend, OpenAiConfig, RateLimiter, RetryPolicy};
pub use scripted::{ScriptBuilder, ScriptStep, ScriptedBackend};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparseable backend reply: {0}")]
    Parse(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("script exhausted after {consumed} replies")]
    ScriptExhausted { consumed: usize },
    #[error("script step {step} expected latest message to contain {expected:?}")]
    ScriptMismatch { step: usize, expected: String },
    #[error("backend contract violated: {0}")]
    ContractViolation(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Usage {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for Usage {
    type Output = Usage;
    fn add(self, rhs: Usage) -> Usage {
        Usage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

/// Sums the usage of a sequence of replies.
pub fn accumulate_usage<'a>(replies: impl IntoIterator<Item = &'a AssistantReply>) -> Usage {
    replies.into_iter().map(|r| r.usage).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// Which kind of query produced an assistant message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Planning in prose; no tools offered.
    Plan,
    /// Tools offered.
    Act,
    /// Single-shot request outside the search loop (Dockerfile writing).
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: BTreeMap<String, String>,
    /// Set when the backend's argument payload could not be decoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument_error: Option<String>,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, args: &[(&str, &str)]) -> Self {
        ToolCall {
            id: id.into(),
            name: name.into(),
            arguments: args
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            argument_error: None,
        }
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).map(String::as_str)
    }

    /// Decodes a JSON object of arguments. Non-string values are kept as
    /// their JSON text.
    pub fn from_json_arguments(id: String, name: String, raw: &str) -> Self {
        let mut call = ToolCall {
            id,
            name,
            arguments: BTreeMap::new(),
            argument_error: None,
        };
        let raw = if raw.trim().is_empty() { "{}" } else { raw };
        match serde_json::from_str::<serde_json::Value>(raw) {
            Ok(serde_json::Value::Object(map)) => {
                for (k, v) in map {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    call.arguments.insert(k, v);
                }
            }
            Ok(_) => call.argument_error = Some("arguments must be a JSON object".into()),
            Err(e) => call.argument_error = Some(format!("invalid JSON arguments: {e}")),
        }
        call
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
            query: None,
            usage: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(reply: &AssistantReply, query: QueryKind) -> Self {
        Message {
            role: Role::Assistant,
            content: reply.text.clone(),
            tool_calls: reply.tool_calls.clone(),
            tool_call_id: None,
            query: Some(query),
            usage: Some(reply.usage),
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Message {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssistantReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: Usage,
}

impl AssistantReply {
    pub fn text(text: impl Into<String>) -> Self {
        AssistantReply {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn calls(calls: Vec<ToolCall>) -> Self {
        AssistantReply {
            tool_calls: calls,
            ..Default::default()
        }
    }

    pub fn with_usage(mut self, prompt: u64, completion: u64) -> Self {
        self.usage = Usage::new(prompt, completion);
        self
    }
}

/// A tool offered to the model. All parameters are required strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<(String, String)>,
}

impl ToolSchema {
    pub fn new(name: &str, description: &str, parameters: &[(&str, &str)]) -> Self {
        ToolSchema {
            name: name.to_string(),
            description: description.to_string(),
            parameters: parameters
                .iter()
                .map(|(n, d)| (n.to_string(), d.to_string()))
                .collect(),
        }
    }

    /// OpenAI-style `{"type": "function", "function": {...}}` declaration.
    pub fn to_openai(&self) -> serde_json::Value {
        let properties: serde_json::Map<String, serde_json::Value> = self
            .parameters
            .iter()
            .map(|(n, d)| {
                (
                    n.clone(),
                    serde_json::json!({"type": "string", "description": d}),
                )
            })
            .collect();
        let required: Vec<&str> = self.parameters.iter().map(|(n, _)| n.as_str()).collect();
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                }
            }
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Sends the conversation. With `allow_tools == false` the reply carries
    /// no tool calls.
    fn send(
        &self,
        messages: &[Message],
        tools: &[ToolSchema],
        allow_tools: bool,
    ) -> Result<AssistantReply, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn send(
        &self,
        messages: &[Message],
        tools: &[ToolSchema],
        allow_tools: bool,
    ) -> Result<AssistantReply, BackendError> {
        (**self).send(messages, tools, allow_tools)
    }
}

pub(crate) fn check_request(messages: &[Message]) -> Result<(), BackendError> {
    match messages.first() {
        Some(m) if m.role == Role::System => Ok(()),
        Some(_) => Err(BackendError::ContractViolation(
            "first message must be the system prompt".into(),
        )),
        None => Err(BackendError::ContractViolation("empty conversation".into())),
    }
}
