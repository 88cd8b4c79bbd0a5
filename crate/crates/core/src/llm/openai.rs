use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Value};

use super::{
    check_request, AssistantReply, BackendError, ChatBackend, Message, Role, ToolCall, ToolSchema,
    Usage,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `i` (the last entry repeats).
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: usize) -> Duration {
        self.backoff
            .get(retry)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    /// Base URL up to and including the API version, e.g.
    /// `https://api.openai.com/v1`.
    pub endpoint: String,
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
    pub requests_per_minute: Option<u32>,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        OpenAiConfig {
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-4o-mini-2024-07-18".into(),
            temperature: 0.0,
            request_timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
        }
    }
}

/// Token bucket shared by every clone of a backend.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    inner: Arc<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        let capacity = f64::from(rpm.max(1));
        RateLimiter {
            inner: Arc::new(Mutex::new(Bucket {
                capacity,
                tokens: capacity,
                per_sec: capacity / 60.0,
                last: Instant::now(),
            })),
        }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.inner.lock().expect("rate limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(b.last).as_secs_f64() * b.per_sec;
                b.tokens = (b.tokens + refill).min(b.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / b.per_sec)
            };
            thread::sleep(wait);
        }
    }
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    config: OpenAiConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl OpenAiBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: OpenAiConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            BackendError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: OpenAiConfig, api_key: String) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Ok(OpenAiBackend {
            config,
            api_key,
            client,
            limiter,
        })
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    pub(crate) fn request_body(
        &self,
        messages: &[Message],
        tools: &[ToolSchema],
        allow_tools: bool,
    ) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
        });
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(ToolSchema::to_openai).collect());
            body["tool_choice"] = json!(if allow_tools { "auto" } else { "none" });
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<AssistantReply, BackendError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        parse_reply(&text)
    }
}

fn wire_message(m: &Message) -> Value {
    match m.role {
        Role::System => json!({"role": "system", "content": m.content}),
        Role::User => json!({"role": "user", "content": m.content}),
        Role::Tool => json!({
            "role": "tool",
            "tool_call_id": m.tool_call_id.clone().unwrap_or_default(),
            "content": m.content,
        }),
        Role::Assistant => {
            let mut v = json!({"role": "assistant", "content": m.content});
            if !m.tool_calls.is_empty() {
                v["tool_calls"] = m
                    .tool_calls
                    .iter()
                    .map(|c| {
                        json!({
                            "id": c.id,
                            "type": "function",
                            "function": {
                                "name": c.name,
                                "arguments": serde_json::to_string(&c.arguments).expect("string map"),
                            }
                        })
                    })
                    .collect();
            }
            v
        }
    }
}

pub(crate) fn parse_reply(text: &str) -> Result<AssistantReply, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::Parse(e.to_string()))?;
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Parse("missing choices[0].message".into()))?;
    let content = msg
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let mut calls = Vec::new();
    if let Some(list) = msg.get("tool_calls").and_then(Value::as_array) {
        for (i, c) in list.iter().enumerate() {
            let id = c
                .get("id")
                .and_then(Value::as_str)
                .map_or_else(|| format!("call_{i}"), str::to_string);
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Parse("tool call without function name".into()))?;
            let args = c
                .pointer("/function/arguments")
                .and_then(Value::as_str)
                .unwrap_or("{}");
            calls.push(ToolCall::from_json_arguments(id, name.to_string(), args));
        }
    }
    if content.is_empty() && calls.is_empty() {
        return Err(BackendError::Parse(
            "reply has neither text nor tool calls".into(),
        ));
    }
    let usage = Usage::new(
        v.pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        v.pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    );
    Ok(AssistantReply {
        text: content,
        tool_calls: calls,
        usage,
    })
}

impl ChatBackend for OpenAiBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn send(
        &self,
        messages: &[Message],
        tools: &[ToolSchema],
        allow_tools: bool,
    ) -> Result<AssistantReply, BackendError> {
        check_request(messages)?;
        let body = self.request_body(messages, tools, allow_tools);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut retry = 0usize;
        loop {
            match self.attempt(&body) {
                Ok(mut reply) => {
                    if !allow_tools && !reply.tool_calls.is_empty() {
                        warn!("backend returned tool calls to a tool-less query; dropping them");
                        reply.tool_calls.clear();
                        if reply.text.is_empty() {
                            return Err(BackendError::Parse(
                                "tool-less query answered only with tool calls".into(),
                            ));
                        }
                    }
                    return Ok(reply);
                }
                Err(e) if e.is_transient() && (retry as u32 + 1) < attempts => {
                    let delay = self.config.retry.delay(retry);
                    debug!("transient backend error ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call_reply() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":null,"tool_calls":[{"id":"c1","type":"function","function":{"name":"check_presence","arguments":"{\"file\":\"setup.py\"}"}}]}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let reply = parse_reply(body).unwrap();
        assert_eq!(reply.tool_calls[0].name, "check_presence");
        assert_eq!(reply.tool_calls[0].arg("file"), Some("setup.py"));
        assert_eq!(reply.usage, Usage::new(12, 3));
    }

    #[test]
    fn empty_reply_is_parse_error() {
        let body = r#"{"choices":[{"message":{"content":""}}]}"#;
        assert!(matches!(parse_reply(body), Err(BackendError::Parse(_))));
        assert!(matches!(parse_reply("nope"), Err(BackendError::Parse(_))));
    }

    #[test]
    fn tool_less_queries_set_tool_choice_none() {
        let backend = OpenAiBackend::with_key(OpenAiConfig::default(), "k".into()).unwrap();
        let tools = [ToolSchema::new("t", "d", &[])];
        let msgs = [Message::system("s")];
        let body = backend.request_body(&msgs, &tools, false);
        assert_eq!(body["tool_choice"], "none");
        assert_eq!(body["temperature"], 0.0);
        let body = backend.request_body(&msgs, &tools, true);
        assert_eq!(body["tool_choice"], "auto");
        let body = backend.request_body(&msgs, &[], true);
        assert!(body.get("tools").is_none());
    }

    #[test]
    fn assistant_tool_calls_serialize_arguments_as_json_strings() {
        let reply = AssistantReply::calls(vec![ToolCall::new(
            "c9",
            "inspect_header",
            &[("file", "README.md"), ("header", "Install")],
        )]);
        let v = wire_message(&Message::assistant(&reply, super::super::QueryKind::Act));
        let args = v["tool_calls"][0]["function"]["arguments"]
            .as_str()
            .unwrap();
        let back: Value = serde_json::from_str(args).unwrap();
        assert_eq!(back["header"], "Install");
    }

    #[test]
    fn missing_key_env_is_config_error() {
        let cfg = OpenAiConfig {
            api_key_env: "INSTALLAMATIC_TEST_UNSET_KEY".into(),
            ..OpenAiConfig::default()
        };
        assert!(matches!(
            OpenAiBackend::from_env(cfg),
            Err(BackendError::Config(_))
        ));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(600);
        let start = Instant::now();
        // Burst capacity is the per-minute budget; draining it is immediate.
        for _ in 0..600 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_secs(1));
        limiter.acquire();
        assert!(start.elapsed() >= Duration::from_millis(50));
    }
}
