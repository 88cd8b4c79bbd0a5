//! Tool declarations and dispatch. Every failure becomes a textual tool
//! result for the model; nothing here aborts a run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AgentStage;
use crate::llm::{ToolCall, ToolSchema};
use crate::navigator::{normalize_rel, EntryKind, NavError, RepoSnapshot};

pub const GET_DIRECTORY_CONTENTS: &str = "get_directory_contents";
pub const GET_FILE_CONTENTS: &str = "get_file_contents";
pub const INSPECT_HEADER: &str = "inspect_header";
pub const CHECK_PRESENCE: &str = "check_presence";
pub const SUBMIT_DOCUMENTATION: &str = "submit_documentation";
pub const FINISHED_SEARCH: &str = "finished_search";
pub const SUBMIT_SUMMARY: &str = "submit_summary";

pub const BASIC_TOOLS: [&str; 4] = [
    GET_DIRECTORY_CONTENTS,
    GET_FILE_CONTENTS,
    INSPECT_HEADER,
    CHECK_PRESENCE,
];

pub fn schema(name: &str) -> Option<ToolSchema> {
    let s = match name {
        GET_DIRECTORY_CONTENTS => ToolSchema::new(
            name,
            "List the files and sub-directories of a directory you have already seen. Use \".\" for the repository root.",
            &[("directory", "Directory path relative to the repository root")],
        ),
        GET_FILE_CONTENTS => ToolSchema::new(
            name,
            "Return the contents of a file. For .md, .markdown and .rst files the section headers are returned instead; use inspect_header to read a section.",
            &[("file", "File path relative to the repository root")],
        ),
        INSPECT_HEADER => ToolSchema::new(
            name,
            "Return the contents of one section of a .md, .markdown or .rst file.",
            &[
                ("file", "File path relative to the repository root"),
                ("header", "Section header exactly as listed by get_file_contents"),
            ],
        ),
        CHECK_PRESENCE => ToolSchema::new(
            name,
            "Check whether a file or directory exists in the repository.",
            &[("file", "Path relative to the repository root")],
        ),
        SUBMIT_DOCUMENTATION => ToolSchema::new(
            name,
            "Record a file as containing information relevant to installing the dependencies or running the tests.",
            &[("file", "File path relative to the repository root")],
        ),
        FINISHED_SEARCH => ToolSchema::new(
            name,
            "Signal that all install-relevant documentation has been recorded and the search is over.",
            &[],
        ),
        SUBMIT_SUMMARY => ToolSchema::new(
            name,
            "Submit the natural-language summary of how to install the dependencies and run the tests.",
            &[("summary", "The summary")],
        ),
        _ => return None,
    };
    Some(s)
}

/// Files recorded as install-relevant, in submission order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSet {
    paths: Vec<String>,
}

impl DocSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// A set supplied from outside the agent (ground-truth annotations).
    pub fn supplied<I, S>(paths: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = DocSet::new();
        for p in paths {
            if let Some(n) = normalize_rel(p.as_ref()) {
                set.insert(n);
            }
        }
        set
    }

    /// Adds `path`; returns false when it was already present.
    pub fn insert(&mut self, path: String) -> bool {
        if self.paths.contains(&path) {
            return false;
        }
        self.paths.push(path);
        true
    }

    pub fn contains(&self, path: &str) -> bool {
        self.paths.iter().any(|p| p == path)
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Mutable state a stage accumulates through its tools.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageState {
    pub docset: DocSet,
    pub summary: Option<String>,
    pub finished: bool,
    /// Files whose contents were returned to the model.
    pub accessed_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub content: String,
    pub is_error: bool,
}

impl ToolResult {
    fn ok(content: impl Into<String>) -> Self {
        ToolResult {
            content: content.into(),
            is_error: false,
        }
    }

    fn error(content: impl Into<String>) -> Self {
        ToolResult {
            content: format!("ERROR: {}", content.into()),
            is_error: true,
        }
    }
}

fn required<'a>(call: &'a ToolCall, key: &str) -> Result<&'a str, ToolResult> {
    call.arg(key)
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| ToolResult::error(format!("{} requires the argument \"{key}\"", call.name)))
}

fn nav_error(e: NavError) -> ToolResult {
    ToolResult::error(e.to_string())
}

fn visible_check(stage: &AgentStage, path: &str) -> Result<(), ToolResult> {
    let Some(visible) = &stage.visible_files else {
        return Ok(());
    };
    let rel = normalize_rel(path).unwrap_or_default();
    if visible.contains(&rel) {
        return Ok(());
    }
    let list: Vec<&str> = visible.iter().map(String::as_str).collect();
    Err(ToolResult::error(format!(
        "access to {path} is not permitted in this step; only these files may be read: {}",
        list.join(", ")
    )))
}

/// Directories containing at least one visible file.
fn visible_dirs(visible: &BTreeSet<String>) -> BTreeSet<String> {
    let mut dirs = BTreeSet::new();
    for p in visible {
        let mut cur = p.as_str();
        while let Some((parent, _)) = cur.rsplit_once('/') {
            dirs.insert(parent.to_string());
            cur = parent;
        }
    }
    dirs
}

pub fn dispatch_tool(
    call: &ToolCall,
    stage: &AgentStage,
    snap: &RepoSnapshot,
    state: &mut StageState,
) -> ToolResult {
    let available = stage.tool_names();
    if !available.contains(&call.name.as_str()) {
        return ToolResult::error(format!(
            "unknown tool \"{}\"; available tools: {}",
            call.name,
            available.join(", ")
        ));
    }
    if let Some(err) = &call.argument_error {
        return ToolResult::error(format!("could not read arguments for {}: {err}", call.name));
    }
    match run_tool(call, stage, snap, state) {
        Ok(r) | Err(r) => r,
    }
}

fn run_tool(
    call: &ToolCall,
    stage: &AgentStage,
    snap: &RepoSnapshot,
    state: &mut StageState,
) -> Result<ToolResult, ToolResult> {
    match call.name.as_str() {
        GET_DIRECTORY_CONTENTS => {
            let dir = call.arg("directory").unwrap_or(".");
            let mut listing = snap.get_directory_contents(dir).map_err(nav_error)?;
            if let Some(visible) = &stage.visible_files {
                let dirs = visible_dirs(visible);
                listing.entries.retain(|e| {
                    let full = if listing.dir_path.is_empty() {
                        e.name.clone()
                    } else {
                        format!("{}/{}", listing.dir_path, e.name)
                    };
                    match e.kind {
                        EntryKind::File => visible.contains(&full),
                        EntryKind::Directory => dirs.contains(&full),
                    }
                });
            }
            Ok(ToolResult::ok(listing.render()))
        }
        GET_FILE_CONTENTS => {
            let file = required(call, "file")?;
            visible_check(stage, file)?;
            let view = snap.get_file_contents(file).map_err(nav_error)?;
            state.accessed_files.push(view.file_path().to_string());
            Ok(ToolResult::ok(view.render()))
        }
        INSPECT_HEADER => {
            let file = required(call, "file")?;
            let header = required(call, "header")?;
            visible_check(stage, file)?;
            let hit = snap.inspect_header(file, header).map_err(nav_error)?;
            state
                .accessed_files
                .push(normalize_rel(file).unwrap_or_default());
            let mut text = hit.section.body_text.clone();
            if hit.occurrences.len() > 1 {
                let lines: Vec<String> = hit
                    .occurrences
                    .iter()
                    .map(|l| (l + 1).to_string())
                    .collect();
                text.push_str(&format!(
                    "\n\n[note: the header \"{}\" occurs {} times (lines {}); the first occurrence is shown]",
                    hit.section.header,
                    hit.occurrences.len(),
                    lines.join(", ")
                ));
            }
            if text.trim().is_empty() {
                text = format!("(section \"{}\" is empty)", hit.section.header);
            }
            Ok(ToolResult::ok(text))
        }
        CHECK_PRESENCE => {
            let file = required(call, "file")?;
            Ok(ToolResult::ok(match snap.check_presence(file) {
                Some(EntryKind::File) => "true".to_string(),
                Some(EntryKind::Directory) => "true (directory)".to_string(),
                None => "false".to_string(),
            }))
        }
        SUBMIT_DOCUMENTATION => {
            let file = required(call, "file")?;
            let rel = match snap.check_presence(file) {
                Some(EntryKind::File) => normalize_rel(file).unwrap_or_default(),
                Some(EntryKind::Directory) => {
                    return Err(ToolResult::error(format!(
                        "{file} is a directory; submit individual files"
                    )))
                }
                None => {
                    return Err(ToolResult::error(format!(
                        "{file} does not exist; documentation not recorded"
                    )))
                }
            };
            if state.docset.insert(rel.clone()) {
                Ok(ToolResult::ok(format!(
                    "Recorded {rel} as install-relevant documentation."
                )))
            } else {
                Ok(ToolResult::ok(format!("{rel} was already recorded.")))
            }
        }
        FINISHED_SEARCH => {
            state.finished = true;
            Ok(ToolResult::ok(format!(
                "Search finished with {} documentation file(s) recorded.",
                state.docset.len()
            )))
        }
        SUBMIT_SUMMARY => {
            let summary = required(call, "summary")?;
            state.summary = Some(summary.to_string());
            state.finished = true;
            Ok(ToolResult::ok("Summary recorded."))
        }
        other => Err(ToolResult::error(format!(
            "tool {other} is not available in the {:?} step",
            stage.name
        ))),
    }
}
