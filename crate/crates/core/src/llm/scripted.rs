use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    check_request, AssistantReply, BackendError, ChatBackend, Message, ToolCall, ToolSchema,
};

/// One canned reply, optionally guarded by a substring that must occur in
/// the latest message of the conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(flatten)]
    pub reply: AssistantReply,
}

/// Deterministic backend replaying a fixed list of replies.
///
/// Running past the end of the script is an error, never a repeat.
#[derive(Debug)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug)]
struct ScriptState {
    steps: VecDeque<ScriptStep>,
    consumed: usize,
    next_call: usize,
}

impl ScriptedBackend {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        ScriptedBackend {
            state: Mutex::new(ScriptState {
                steps: steps.into_iter().collect(),
                consumed: 0,
                next_call: 0,
            }),
        }
    }

    pub fn from_replies(replies: impl IntoIterator<Item = AssistantReply>) -> Self {
        Self::new(replies.into_iter().map(|reply| ScriptStep {
            expect: None,
            reply,
        }))
    }

    /// Parses a JSON array of steps.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let steps: Vec<ScriptStep> = serde_json::from_str(text)
            .map_err(|e| BackendError::Config(format!("invalid script: {e}")))?;
        Ok(Self::new(steps))
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("script lock").steps.len()
    }

    pub fn consumed(&self) -> usize {
        self.state.lock().expect("script lock").consumed
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn send(
        &self,
        messages: &[Message],
        _tools: &[ToolSchema],
        allow_tools: bool,
    ) -> Result<AssistantReply, BackendError> {
        check_request(messages)?;
        let mut state = self.state.lock().expect("script lock");
        let consumed = state.consumed;
        let step = state
            .steps
            .pop_front()
            .ok_or(BackendError::ScriptExhausted { consumed })?;
        state.consumed += 1;
        if let Some(expected) = &step.expect {
            let latest = messages
                .last()
                .map(|m| m.content.as_str())
                .unwrap_or_default();
            if !latest.contains(expected.as_str()) {
                return Err(BackendError::ScriptMismatch {
                    step: consumed,
                    expected: expected.clone(),
                });
            }
        }
        let mut reply = step.reply;
        if !allow_tools && !reply.tool_calls.is_empty() {
            return Err(BackendError::ContractViolation(format!(
                "script step {consumed} returns tool calls to a query that offered no tools"
            )));
        }
        for call in &mut reply.tool_calls {
            if call.id.is_empty() {
                call.id = format!("call_{}", state.next_call);
            }
            state.next_call += 1;
        }
        Ok(reply)
    }
}

/// Fluent construction of scripts for the plan/act search loop.
#[derive(Debug, Default, Clone)]
pub struct ScriptBuilder {
    steps: Vec<ScriptStep>,
    usage: (u64, u64),
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Usage attached to every subsequent reply.
    pub fn usage(mut self, prompt: u64, completion: u64) -> Self {
        self.usage = (prompt, completion);
        self
    }

    pub fn reply(mut self, reply: AssistantReply) -> Self {
        let (p, c) = self.usage;
        self.steps.push(ScriptStep {
            expect: None,
            reply: reply.with_usage(p, c),
        });
        self
    }

    /// A prose reply (plan, summary, diagnosis).
    pub fn say(self, text: &str) -> Self {
        self.reply(AssistantReply::text(text))
    }

    /// A reply making one tool call.
    pub fn call(self, name: &str, args: &[(&str, &str)]) -> Self {
        self.reply(AssistantReply::calls(vec![ToolCall::new("", name, args)]))
    }

    /// A plan followed by one tool call: a full search-loop round.
    pub fn round(self, plan: &str, name: &str, args: &[(&str, &str)]) -> Self {
        self.say(plan).call(name, args)
    }

    /// A reply whose text wraps `dockerfile` in a fenced block.
    pub fn dockerfile(self, prose: &str, dockerfile: &str) -> Self {
        self.say(&format!("{prose}\n\n```dockerfile\n{dockerfile}```\n"))
    }

    /// Requires the latest message to contain `needle` for the last step.
    pub fn expecting(mut self, needle: &str) -> Self {
        if let Some(last) = self.steps.last_mut() {
            last.expect = Some(needle.to_string());
        }
        self
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.steps).expect("script serializes")
    }

    pub fn build(self) -> ScriptedBackend {
        ScriptedBackend::new(self.steps)
    }
}
