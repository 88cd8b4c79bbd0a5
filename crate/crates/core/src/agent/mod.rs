//! The stage-parameterized search agent.
//!
//! Every search stage runs the same loop: a planning query with no tools
//! offered, then an action query offering the stage's tools, then dispatch of
//! whatever the model called. Stages differ in prompts, in the extra tools
//! they expose and in how they end:
//!
//! * documentation gathering ends on `finished_search`;
//! * summarizing ends on `submit_summary` and may only read gathered files;
//! * diagnosis ends when the model answers the action query without a tool.
//!
//! Dockerfile writing and repair are single queries appended after a search.
//! Repair always starts from a fresh transcript.

mod prompts;
mod tools;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    AssistantReply, BackendError, ChatBackend, Message, QueryKind, Role, ToolSchema, Usage,
};
use crate::navigator::RepoSnapshot;
use crate::oracle::is_error_line;
use crate::sandbox::BuildLog;

pub use prompts::{render, PromptSet, SearchPrompts, SinglePrompt};
pub use tools::{
    dispatch_tool, schema, DocSet, StageState, ToolResult, BASIC_TOOLS, CHECK_PRESENCE,
    FINISHED_SEARCH, GET_DIRECTORY_CONTENTS, GET_FILE_CONTENTS, INSPECT_HEADER,
    SUBMIT_DOCUMENTATION, SUBMIT_SUMMARY,
};

/// Default cap on tool calls per search stage.
pub const DEFAULT_SEARCH_BUDGET: usize = 30;
/// Repairs allowed after the first build.
pub const MAX_REPAIRS: usize = 2;
/// Trailing log lines embedded in the diagnosis prompt.
pub const LOG_TAIL_LINES: usize = 200;
/// Earlier error-looking lines kept in addition to the tail.
pub const LOG_EARLY_ERROR_LINES: usize = 50;
const LOG_LINE_CHARS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageName {
    DocGathering,
    Summarize,
    GenerateDockerfile,
    Diagnose,
    Repair,
}

impl StageName {
    pub fn slug(self) -> &'static str {
        match self {
            StageName::DocGathering => "gather",
            StageName::Summarize => "summarize",
            StageName::GenerateDockerfile => "generate",
            StageName::Diagnose => "diagnose",
            StageName::Repair => "repair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentStage {
    pub name: StageName,
    pub system_prompt: String,
    pub followup_prompt: String,
    pub act_prompt: String,
    pub extra_tools: Vec<&'static str>,
    /// When set, file reads are limited to these paths.
    pub visible_files: Option<BTreeSet<String>>,
}

impl AgentStage {
    fn search(
        name: StageName,
        prompts: &SearchPrompts,
        vars: &[(&str, &str)],
        extra_tools: Vec<&'static str>,
    ) -> Self {
        AgentStage {
            name,
            system_prompt: render(&prompts.system, vars),
            followup_prompt: render(&prompts.followup, vars),
            act_prompt: render(&prompts.act, vars),
            extra_tools,
            visible_files: None,
        }
    }

    pub fn doc_gathering(prompts: &PromptSet, snap: &RepoSnapshot) -> Self {
        let listing = root_listing(snap);
        Self::search(
            StageName::DocGathering,
            &prompts.doc_gathering,
            &[("repo_listing", &listing)],
            vec![SUBMIT_DOCUMENTATION, FINISHED_SEARCH],
        )
    }

    pub fn summarize(prompts: &PromptSet, snap: &RepoSnapshot, docset: &DocSet) -> Self {
        let listing = root_listing(snap);
        let docs = if docset.is_empty() {
            "(no install-relevant documentation was found; rely on the repository's files and common conventions)"
                .to_string()
        } else {
            docset
                .paths()
                .iter()
                .map(|p| format!("- {p}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let mut stage = Self::search(
            StageName::Summarize,
            &prompts.summarize,
            &[("repo_listing", &listing), ("docs", &docs)],
            vec![SUBMIT_SUMMARY],
        );
        stage.visible_files = Some(docset.paths().iter().cloned().collect());
        stage
    }

    pub fn diagnose(
        prompts: &PromptSet,
        snap: &RepoSnapshot,
        dockerfile: &str,
        build_log: &str,
    ) -> Self {
        let listing = root_listing(snap);
        Self::search(
            StageName::Diagnose,
            &prompts.diagnose,
            &[
                ("repo_listing", &listing),
                ("dockerfile", dockerfile.trim_end()),
                ("build_log", build_log),
            ],
            Vec::new(),
        )
    }

    pub fn tool_names(&self) -> Vec<&'static str> {
        BASIC_TOOLS
            .iter()
            .copied()
            .chain(self.extra_tools.iter().copied())
            .collect()
    }

    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.tool_names().into_iter().filter_map(schema).collect()
    }

    /// Whether an action reply without tool calls ends the search.
    fn ends_without_tool(&self) -> bool {
        self.name == StageName::Diagnose
    }
}

fn root_listing(snap: &RepoSnapshot) -> String {
    snap.get_directory_contents(".")
        .map(|l| l.render())
        .unwrap_or_else(|e| e.to_string())
}

/// Conversation of one stage (or one stage plus its final single query).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub stage: StageName,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new(stage: StageName, system_prompt: String) -> Self {
        Transcript {
            stage,
            messages: vec![Message::system(system_prompt)],
        }
    }

    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    /// Rough token count (four characters per token).
    pub fn token_estimate(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.content.len().div_ceil(4))
            .sum()
    }

    pub fn usage(&self) -> Usage {
        self.messages.iter().filter_map(|m| m.usage).sum()
    }

    pub fn tool_call_count(&self) -> usize {
        self.messages.iter().map(|m| m.tool_calls.len()).sum()
    }

    /// One JSON record per message.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("messages serialize"));
            out.push('\n');
        }
        out
    }

    pub fn messages_from_jsonl(text: &str) -> Result<Vec<Message>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Checks the structural invariants: a leading system message, every
    /// tool message answering exactly one earlier call, and plan/act queries
    /// strictly alternating, starting with a plan.
    pub fn validate(&self) -> Result<(), String> {
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return Err("first message is not the system prompt".into());
        }
        let mut open: Vec<&str> = Vec::new();
        let mut answered: BTreeSet<&str> = BTreeSet::new();
        let mut expect = QueryKind::Plan;
        for (i, m) in self.messages.iter().enumerate() {
            match m.role {
                Role::Assistant => {
                    match m.query {
                        Some(QueryKind::Final) => {}
                        Some(q) if q == expect => {
                            expect = if q == QueryKind::Plan {
                                QueryKind::Act
                            } else {
                                QueryKind::Plan
                            };
                        }
                        other => {
                            return Err(format!(
                                "message {i}: expected {expect:?} query, found {other:?}"
                            ))
                        }
                    }
                    if m.query != Some(QueryKind::Act) && !m.tool_calls.is_empty() {
                        return Err(format!("message {i}: tool calls outside an action query"));
                    }
                    open.extend(m.tool_calls.iter().map(|c| c.id.as_str()));
                }
                Role::Tool => {
                    let id = m.tool_call_id.as_deref().unwrap_or_default();
                    if !open.contains(&id) || !answered.insert(id) {
                        return Err(format!(
                            "message {i}: tool result {id:?} answers no open call"
                        ));
                    }
                }
                Role::System if i > 0 => return Err(format!("message {i}: extra system message")),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("search budget must be at least 1")]
    InvalidBudget,
    #[error("backend failed during {}: {source}", transcript.stage.slug())]
    Backend {
        source: BackendError,
        transcript: Box<Transcript>,
    },
    #[error("reply contained no fenced Dockerfile")]
    NoDockerfileInReply { transcript: Box<Transcript> },
    #[error("attempt {attempt_index} already used the maximum of {max} repairs")]
    RepairLimit { attempt_index: usize, max: usize },
}

impl AgentError {
    pub fn transcript(&self) -> Option<&Transcript> {
        match self {
            AgentError::Backend { transcript, .. }
            | AgentError::NoDockerfileInReply { transcript } => Some(transcript),
            _ => None,
        }
    }
}

/// What a search stage produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageResult {
    pub state: StageState,
    /// The budget ran out before the stage ended on its own.
    pub exhausted: bool,
    pub tool_calls: usize,
    /// Prose of the final plan and action replies.
    pub last_text: String,
}

fn ask(
    llm: &dyn ChatBackend,
    transcript: &mut Transcript,
    tools: &[ToolSchema],
    prompt: &str,
    query: QueryKind,
) -> Result<AssistantReply, AgentError> {
    transcript.push(Message::user(prompt));
    let allow_tools = query == QueryKind::Act;
    match llm.send(&transcript.messages, tools, allow_tools) {
        Ok(reply) => {
            transcript.push(Message::assistant(&reply, query));
            Ok(reply)
        }
        Err(source) => Err(AgentError::Backend {
            source,
            transcript: Box::new(transcript.clone()),
        }),
    }
}

/// Runs the plan/act loop for `stage`, appending to `transcript`.
pub fn run_search_loop_into(
    transcript: &mut Transcript,
    stage: &AgentStage,
    snap: &RepoSnapshot,
    llm: &dyn ChatBackend,
    budget: usize,
) -> Result<StageResult, AgentError> {
    if budget == 0 {
        return Err(AgentError::InvalidBudget);
    }
    let tools = stage.tool_schemas();
    let mut state = StageState::default();
    let mut calls = 0usize;
    let mut rounds = 0usize;
    let mut last_text = String::new();
    let mut exhausted = false;
    while !state.finished {
        if rounds >= budget || calls >= budget {
            exhausted = true;
            break;
        }
        rounds += 1;
        let plan = ask(
            llm,
            transcript,
            &tools,
            &stage.followup_prompt,
            QueryKind::Plan,
        )?;
        let act = ask(llm, transcript, &tools, &stage.act_prompt, QueryKind::Act)?;
        last_text = [plan.text.trim(), act.text.trim()]
            .iter()
            .filter(|t| !t.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join("\n\n");
        if act.tool_calls.is_empty() {
            if stage.ends_without_tool() {
                state.finished = true;
            }
            continue;
        }
        for call in &act.tool_calls {
            let content = if state.finished {
                "ERROR: the search has already finished; this call was not executed".to_string()
            } else if calls >= budget {
                "ERROR: tool-call budget exhausted; this call was not executed".to_string()
            } else {
                calls += 1;
                dispatch_tool(call, stage, snap, &mut state).content
            };
            transcript.push(Message::tool(call.id.clone(), content));
        }
    }
    Ok(StageResult {
        state,
        exhausted,
        tool_calls: calls,
        last_text,
    })
}

/// Runs `stage` in a fresh transcript.
pub fn run_search_loop(
    stage: &AgentStage,
    snap: &RepoSnapshot,
    llm: &dyn ChatBackend,
    budget: usize,
) -> Result<(Transcript, StageResult), AgentError> {
    let mut transcript = Transcript::new(stage.name, stage.system_prompt.clone());
    let result = run_search_loop_into(&mut transcript, stage, snap, llm, budget)?;
    Ok((transcript, result))
}

/// A candidate install script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DockerfileDraft {
    pub text: String,
    /// 0 for the first draft, incremented by each repair.
    pub attempt_index: usize,
    pub summary_used: String,
}

/// Contents of the first fenced code block, if it is non-empty.
pub fn extract_dockerfile(reply: &str) -> Option<String> {
    let mut lines = reply.lines();
    let (fence_char, fence_len) = loop {
        let line = lines.next()?.trim_start();
        let ch = line.chars().next();
        if let Some(ch @ ('`' | '~')) = ch {
            let n = line.chars().take_while(|&c| c == ch).count();
            if n >= 3 {
                break (ch, n);
            }
        }
    };
    let mut body = String::new();
    for line in lines {
        let t = line.trim();
        if t.len() >= fence_len && t.chars().all(|c| c == fence_char) {
            break;
        }
        body.push_str(line);
        body.push('\n');
    }
    (!body.trim().is_empty()).then_some(body)
}

/// Shortens a build log for the diagnosis prompt: the last
/// [`LOG_TAIL_LINES`] lines plus up to [`LOG_EARLY_ERROR_LINES`] earlier lines
/// that look like errors.
pub fn shorten_build_log(raw: &str) -> String {
    let lines: Vec<&str> = raw.lines().collect();
    let clip = |l: &str| -> String {
        if l.len() <= LOG_LINE_CHARS {
            return l.to_string();
        }
        let mut cut = LOG_LINE_CHARS;
        while !l.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{} [... line truncated ...]", &l[..cut])
    };
    if lines.len() <= LOG_TAIL_LINES {
        return lines.iter().map(|l| clip(l)).collect::<Vec<_>>().join("\n");
    }
    let tail_start = lines.len() - LOG_TAIL_LINES;
    let early: Vec<usize> = (0..tail_start)
        .filter(|&i| is_error_line(lines[i]))
        .collect();
    let early = &early[early.len().saturating_sub(LOG_EARLY_ERROR_LINES)..];
    let mut out = Vec::new();
    let mut cursor = 0;
    for &i in early {
        if i > cursor {
            out.push(format!("[... {} lines omitted ...]", i - cursor));
        }
        out.push(clip(lines[i]));
        cursor = i + 1;
    }
    if tail_start > cursor {
        out.push(format!("[... {} lines omitted ...]", tail_start - cursor));
    }
    out.extend(lines[tail_start..].iter().map(|l| clip(l)));
    out.join("\n")
}

/// Output of documentation gathering.
#[derive(Debug, Clone)]
pub struct GatherRun {
    pub docset: DocSet,
    pub transcript: Transcript,
    pub exhausted: bool,
}

/// Output of summarizing and the first Dockerfile.
#[derive(Debug, Clone)]
pub struct GenerateRun {
    pub draft: DockerfileDraft,
    pub transcript: Transcript,
    pub accessed_files: Vec<String>,
    pub exhausted: bool,
}

/// Output of one diagnose-and-repair cycle.
#[derive(Debug, Clone)]
pub struct RepairRun {
    pub draft: DockerfileDraft,
    pub diagnosis: String,
    pub transcript: Transcript,
    pub exhausted: bool,
}

/// Agent bound to a backend, prompt set and search budget.
pub struct Agent<'a> {
    llm: &'a dyn ChatBackend,
    prompts: &'a PromptSet,
    budget: usize,
    max_repairs: usize,
}

impl<'a> Agent<'a> {
    pub fn new(llm: &'a dyn ChatBackend, prompts: &'a PromptSet, budget: usize) -> Self {
        Agent {
            llm,
            prompts,
            budget,
            max_repairs: MAX_REPAIRS,
        }
    }

    pub fn with_max_repairs(mut self, max_repairs: usize) -> Self {
        self.max_repairs = max_repairs;
        self
    }

    pub fn gather_documentation(&self, snap: &RepoSnapshot) -> Result<GatherRun, AgentError> {
        let stage = AgentStage::doc_gathering(self.prompts, snap);
        let (transcript, result) = run_search_loop(&stage, snap, self.llm, self.budget)?;
        Ok(GatherRun {
            docset: result.state.docset,
            transcript,
            exhausted: result.exhausted,
        })
    }

    pub fn summarize_and_generate(
        &self,
        snap: &RepoSnapshot,
        docset: &DocSet,
    ) -> Result<GenerateRun, AgentError> {
        let stage = AgentStage::summarize(self.prompts, snap, docset);
        let mut transcript = Transcript::new(stage.name, stage.system_prompt.clone());
        let result = run_search_loop_into(&mut transcript, &stage, snap, self.llm, self.budget)?;
        let summary = result.state.summary.clone().unwrap_or(result.last_text);
        let prompt = render(&self.prompts.generate.prompt, &[("summary", &summary)]);
        let reply = ask(
            self.llm,
            &mut transcript,
            &stage.tool_schemas(),
            &prompt,
            QueryKind::Final,
        )?;
        let Some(text) = extract_dockerfile(&reply.text) else {
            return Err(AgentError::NoDockerfileInReply {
                transcript: Box::new(transcript),
            });
        };
        Ok(GenerateRun {
            draft: DockerfileDraft {
                text,
                attempt_index: 0,
                summary_used: summary,
            },
            transcript,
            accessed_files: result.state.accessed_files,
            exhausted: result.exhausted,
        })
    }

    /// Diagnoses a failed build in a fresh conversation and asks for a
    /// repaired Dockerfile.
    pub fn diagnose_and_repair(
        &self,
        previous: &DockerfileDraft,
        log: &BuildLog,
        snap: &RepoSnapshot,
    ) -> Result<RepairRun, AgentError> {
        if previous.attempt_index >= self.max_repairs {
            return Err(AgentError::RepairLimit {
                attempt_index: previous.attempt_index,
                max: self.max_repairs,
            });
        }
        let shortened = shorten_build_log(&log.raw_text);
        let stage = AgentStage::diagnose(self.prompts, snap, &previous.text, &shortened);
        let mut transcript = Transcript::new(stage.name, stage.system_prompt.clone());
        let result = run_search_loop_into(&mut transcript, &stage, snap, self.llm, self.budget)?;
        let reply = ask(
            self.llm,
            &mut transcript,
            &stage.tool_schemas(),
            &self.prompts.repair.prompt,
            QueryKind::Final,
        )?;
        let Some(text) = extract_dockerfile(&reply.text) else {
            return Err(AgentError::NoDockerfileInReply {
                transcript: Box::new(transcript),
            });
        };
        Ok(RepairRun {
            draft: DockerfileDraft {
                text,
                attempt_index: previous.attempt_index + 1,
                summary_used: previous.summary_used.clone(),
            },
            diagnosis: result.last_text,
            transcript,
            exhausted: result.exhausted,
        })
    }
}

#[cfg(test)]
mod tests;
