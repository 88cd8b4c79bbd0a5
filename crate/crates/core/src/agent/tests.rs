use std::fs;

use super::*;
use crate::llm::{ScriptBuilder, ToolCall};
use crate::sandbox::ExitStatus;

fn fixture() -> (tempfile::TempDir, RepoSnapshot) {
    let dir = tempfile::tempdir().unwrap();
    let files = [
        (
            "README.md",
            "# Demo\nA demo.\n## Install\npip install -r requirements.txt\n## Usage\nrun it\n",
        ),
        (
            "CONTRIBUTING.md",
            "# Contributing\n## Tests\nRun `pytest`.\n",
        ),
        ("docs/install.rst", "Install\n=======\n\nUse pip.\n"),
        (
            "setup.py",
            "from setuptools import setup\nsetup(name='demo')\n",
        ),
        ("requirements.txt", "requests\n"),
    ];
    for (p, body) in files {
        let path = dir.path().join(p);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, body).unwrap();
    }
    let snap = RepoSnapshot::open(dir.path()).unwrap();
    (dir, snap)
}

const DOCKERFILE: &str = "FROM python:3.11-slim\nWORKDIR /app\nCOPY . .\nRUN pip install -r requirements.txt\nRUN pytest\n";

fn stage_state() -> StageState {
    StageState::default()
}

#[test]
fn finished_search_immediately_ends_after_one_round() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round("nothing to see", FINISHED_SEARCH, &[])
        .build();
    let run = Agent::new(&llm, &prompts, 30)
        .gather_documentation(&snap)
        .unwrap();
    assert!(run.docset.is_empty());
    assert!(!run.exhausted);
    let roles: Vec<Role> = run.transcript.messages.iter().map(|m| m.role).collect();
    assert_eq!(
        roles,
        vec![
            Role::System,
            Role::User,
            Role::Assistant,
            Role::User,
            Role::Assistant,
            Role::Tool
        ]
    );
    run.transcript.validate().unwrap();
    assert_eq!(llm.remaining(), 0);
}

#[test]
fn scripted_gathering_records_one_path_with_alternation() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round(
            "look in docs",
            GET_DIRECTORY_CONTENTS,
            &[("directory", "docs")],
        )
        .round(
            "read the install page",
            GET_FILE_CONTENTS,
            &[("file", "docs/install.rst")],
        )
        .round(
            "it is relevant",
            SUBMIT_DOCUMENTATION,
            &[("file", "docs/install.rst")],
        )
        .round("done", FINISHED_SEARCH, &[])
        .build();
    let run = Agent::new(&llm, &prompts, 30)
        .gather_documentation(&snap)
        .unwrap();
    assert_eq!(run.docset.paths(), ["docs/install.rst"]);
    run.transcript.validate().unwrap();
    let queries: Vec<QueryKind> = run
        .transcript
        .messages
        .iter()
        .filter_map(|m| m.query)
        .collect();
    assert_eq!(queries.len(), 8);
    for (i, q) in queries.iter().enumerate() {
        assert_eq!(
            *q,
            if i % 2 == 0 {
                QueryKind::Plan
            } else {
                QueryKind::Act
            }
        );
    }
    let listing = &run.transcript.messages[5];
    assert_eq!(listing.role, Role::Tool);
    assert_eq!(listing.content, "install.rst");
}

#[test]
fn gathering_submits_readme_and_contributing() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round("readme", SUBMIT_DOCUMENTATION, &[("file", "README.md")])
        .round(
            "contributing",
            SUBMIT_DOCUMENTATION,
            &[("file", "./CONTRIBUTING.md")],
        )
        .round("again", SUBMIT_DOCUMENTATION, &[("file", "README.md")])
        .round("done", FINISHED_SEARCH, &[])
        .build();
    let run = Agent::new(&llm, &prompts, 30)
        .gather_documentation(&snap)
        .unwrap();
    assert_eq!(run.docset.paths(), ["README.md", "CONTRIBUTING.md"]);
}

#[test]
fn empty_repository_gathers_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let snap = RepoSnapshot::open(dir.path()).unwrap();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round("empty", FINISHED_SEARCH, &[])
        .build();
    let run = Agent::new(&llm, &prompts, 5)
        .gather_documentation(&snap)
        .unwrap();
    assert!(run.docset.is_empty());
    assert!(run.transcript.messages[0]
        .content
        .contains("(empty directory)"));
}

#[test]
fn budget_exhaustion_after_exactly_budget_calls() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let mut script = ScriptBuilder::new();
    for _ in 0..10 {
        script = script.round("keep looking", CHECK_PRESENCE, &[("file", "setup.py")]);
    }
    let llm = script.build();
    let stage = AgentStage::doc_gathering(&prompts, &snap);
    let (transcript, result) = run_search_loop(&stage, &snap, &llm, 3).unwrap();
    assert!(result.exhausted);
    assert_eq!(result.tool_calls, 3);
    assert_eq!(transcript.tool_call_count(), 3);
    transcript.validate().unwrap();
}

#[test]
fn surplus_calls_in_one_reply_are_answered_but_not_run() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let calls = (0..4)
        .map(|i| {
            ToolCall::new(
                format!("c{i}"),
                SUBMIT_DOCUMENTATION,
                &[("file", "README.md")],
            )
        })
        .collect();
    let llm = ScriptBuilder::new()
        .say("submit many")
        .reply(crate::llm::AssistantReply::calls(calls))
        .build();
    let stage = AgentStage::doc_gathering(&prompts, &snap);
    let (transcript, result) = run_search_loop(&stage, &snap, &llm, 2).unwrap();
    assert_eq!(result.tool_calls, 2);
    assert!(result.exhausted);
    let tool_msgs: Vec<&Message> = transcript
        .messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .collect();
    assert_eq!(tool_msgs.len(), 4);
    assert!(tool_msgs[3].content.contains("budget exhausted"));
    transcript.validate().unwrap();
}

#[test]
fn zero_budget_rejected() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new().build();
    let stage = AgentStage::doc_gathering(&prompts, &snap);
    assert!(matches!(
        run_search_loop(&stage, &snap, &llm, 0),
        Err(AgentError::InvalidBudget)
    ));
}

#[test]
fn backend_error_carries_partial_transcript() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new().say("plan only").build();
    let stage = AgentStage::doc_gathering(&prompts, &snap);
    match run_search_loop(&stage, &snap, &llm, 5) {
        Err(AgentError::Backend { source, transcript }) => {
            assert!(matches!(
                source,
                BackendError::ScriptExhausted { consumed: 1 }
            ));
            assert_eq!(transcript.messages.len(), 4);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dispatch_basic_and_error_paths() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let stage = AgentStage::doc_gathering(&prompts, &snap);
    let mut state = stage_state();
    let r = dispatch_tool(
        &ToolCall::new("1", CHECK_PRESENCE, &[("file", "setup.py")]),
        &stage,
        &snap,
        &mut state,
    );
    assert_eq!(r.content, "true");
    let r = dispatch_tool(
        &ToolCall::new("2", CHECK_PRESENCE, &[("file", "docs")]),
        &stage,
        &snap,
        &mut state,
    );
    assert_eq!(r.content, "true (directory)");
    let r = dispatch_tool(
        &ToolCall::new("3", "run_shell", &[]),
        &stage,
        &snap,
        &mut state,
    );
    assert!(r.is_error);
    assert!(r
        .content
        .contains("available tools: get_directory_contents"));
    assert!(r.content.contains("finished_search"));
    let r = dispatch_tool(
        &ToolCall::new("4", SUBMIT_DOCUMENTATION, &[("file", "INSTALL.md")]),
        &stage,
        &snap,
        &mut state,
    );
    assert!(r.is_error);
    assert!(state.docset.is_empty());
    let r = dispatch_tool(
        &ToolCall::new("5", GET_FILE_CONTENTS, &[]),
        &stage,
        &snap,
        &mut state,
    );
    assert!(r.is_error && r.content.contains("\"file\""));
    let malformed = ToolCall::from_json_arguments("6".into(), GET_FILE_CONTENTS.into(), "{oops");
    assert!(dispatch_tool(&malformed, &stage, &snap, &mut state).is_error);
    let r = dispatch_tool(
        &ToolCall::new(
            "7",
            INSPECT_HEADER,
            &[("file", "README.md"), ("header", "Install")],
        ),
        &stage,
        &snap,
        &mut state,
    );
    assert!(r.content.contains("pip install -r requirements.txt"));
    let r = dispatch_tool(
        &ToolCall::new(
            "8",
            INSPECT_HEADER,
            &[("file", "README.md"), ("header", "Nonexistent")],
        ),
        &stage,
        &snap,
        &mut state,
    );
    assert!(r.is_error && r.content.contains("Install, Usage"));
}

#[test]
fn stage_specific_tools() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let gather = AgentStage::doc_gathering(&prompts, &snap);
    assert_eq!(
        gather.extra_tools,
        vec![SUBMIT_DOCUMENTATION, FINISHED_SEARCH]
    );
    let summarize = AgentStage::summarize(&prompts, &snap, &DocSet::supplied(["README.md"]));
    assert_eq!(summarize.extra_tools, vec![SUBMIT_SUMMARY]);
    let diagnose = AgentStage::diagnose(&prompts, &snap, DOCKERFILE, "log");
    assert!(diagnose.extra_tools.is_empty());
    let mut state = stage_state();
    let r = dispatch_tool(
        &ToolCall::new("1", FINISHED_SEARCH, &[]),
        &diagnose,
        &snap,
        &mut state,
    );
    assert!(r.is_error);
    assert!(!state.finished);
}

#[test]
fn summarize_restricts_reads_to_docset() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let docset = DocSet::supplied(["docs/install.rst"]);
    let stage = AgentStage::summarize(&prompts, &snap, &docset);
    let mut state = stage_state();
    let denied = dispatch_tool(
        &ToolCall::new("1", GET_FILE_CONTENTS, &[("file", "setup.py")]),
        &stage,
        &snap,
        &mut state,
    );
    assert!(denied.is_error && denied.content.contains("not permitted"));
    let denied = dispatch_tool(
        &ToolCall::new(
            "2",
            INSPECT_HEADER,
            &[("file", "README.md"), ("header", "Install")],
        ),
        &stage,
        &snap,
        &mut state,
    );
    assert!(denied.is_error);
    let root = dispatch_tool(
        &ToolCall::new("3", GET_DIRECTORY_CONTENTS, &[("directory", ".")]),
        &stage,
        &snap,
        &mut state,
    );
    assert_eq!(root.content, "docs/");
    let docs = dispatch_tool(
        &ToolCall::new("4", GET_DIRECTORY_CONTENTS, &[("directory", "docs")]),
        &stage,
        &snap,
        &mut state,
    );
    assert_eq!(docs.content, "install.rst");
    let ok = dispatch_tool(
        &ToolCall::new("5", GET_FILE_CONTENTS, &[("file", "docs/install.rst")]),
        &stage,
        &snap,
        &mut state,
    );
    assert!(!ok.is_error);
    assert_eq!(state.accessed_files, vec!["docs/install.rst"]);
}

#[test]
fn summarize_and_generate_extracts_dockerfile_verbatim() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round(
            "read readme",
            INSPECT_HEADER,
            &[("file", "README.md"), ("header", "Install")],
        )
        .round(
            "summarize",
            SUBMIT_SUMMARY,
            &[("summary", "pip install -r requirements.txt; pytest")],
        )
        .dockerfile("Here is the Dockerfile.", DOCKERFILE)
        .build();
    let docset = DocSet::supplied(["README.md"]);
    let run = Agent::new(&llm, &prompts, 30)
        .summarize_and_generate(&snap, &docset)
        .unwrap();
    assert_eq!(run.draft.text, DOCKERFILE);
    assert_eq!(run.draft.attempt_index, 0);
    assert_eq!(
        run.draft.summary_used,
        "pip install -r requirements.txt; pytest"
    );
    assert_eq!(run.accessed_files, vec!["README.md"]);
    run.transcript.validate().unwrap();
    let last = run.transcript.messages.last().unwrap();
    assert_eq!(last.query, Some(QueryKind::Final));
    let gen_prompt = &run.transcript.messages[run.transcript.messages.len() - 2];
    assert!(gen_prompt
        .content
        .contains("pip install -r requirements.txt; pytest"));
}

#[test]
fn empty_docset_is_noted_in_prompt() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let stage = AgentStage::summarize(&prompts, &snap, &DocSet::new());
    assert!(stage
        .system_prompt
        .contains("no install-relevant documentation was found"));
}

#[test]
fn generation_without_code_block_fails() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .round("summarize", SUBMIT_SUMMARY, &[("summary", "s")])
        .say("I would install things with pip.")
        .build();
    let err = Agent::new(&llm, &prompts, 30)
        .summarize_and_generate(&snap, &DocSet::new())
        .unwrap_err();
    assert!(matches!(err, AgentError::NoDockerfileInReply { .. }));
    assert!(err.transcript().is_some());
}

#[test]
fn extraction_takes_first_block_only() {
    let reply = "Some prose.\n```dockerfile\nFROM a\nRUN b\n```\nMore prose\n```\nFROM c\n```\n";
    assert_eq!(extract_dockerfile(reply).unwrap(), "FROM a\nRUN b\n");
    assert_eq!(
        extract_dockerfile("~~~~\nFROM x\n~~~~"),
        Some("FROM x\n".into())
    );
    assert_eq!(extract_dockerfile("no block"), None);
    assert_eq!(extract_dockerfile("```\n\n```"), None);
    // Unterminated block: take the rest of the reply.
    assert_eq!(extract_dockerfile("```\nFROM y\n"), Some("FROM y\n".into()));
}

fn failed_log(text: &str) -> BuildLog {
    BuildLog {
        raw_text: text.to_string(),
        exit_status: ExitStatus::Completed { code: 1 },
        duration_secs: 2.0,
    }
}

#[test]
fn repair_uses_fresh_transcript_and_increments_attempt() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let previous = DockerfileDraft {
        text: "FROM python:3.11\nRUN pytset\n".into(),
        attempt_index: 0,
        summary_used: "summary".into(),
    };
    let llm = ScriptBuilder::new()
        .round(
            "check the setup",
            GET_FILE_CONTENTS,
            &[("file", "setup.py")],
        )
        .say("The test command is misspelled.")
        .say("Nothing more to look up.")
        .dockerfile("Fix the typo.", DOCKERFILE)
        .build();
    let run = Agent::new(&llm, &prompts, 30)
        .diagnose_and_repair(&previous, &failed_log("sh: 1: pytset: not found\n"), &snap)
        .unwrap();
    assert_eq!(run.draft.attempt_index, 1);
    assert_eq!(run.draft.text, DOCKERFILE);
    assert_eq!(run.transcript.stage, StageName::Diagnose);
    let system = &run.transcript.messages[0].content;
    assert!(system.contains("RUN pytset"));
    assert!(system.contains("pytset: not found"));
    assert!(run.diagnosis.contains("misspelled"));
    run.transcript.validate().unwrap();
    // Nothing from the gathering or summary prompts leaks in.
    for m in &run.transcript.messages {
        assert!(!m.content.contains("submit_documentation"));
        assert!(!m.content.contains("submit_summary"));
    }
}

#[test]
fn repair_refused_at_the_cap() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new().build();
    let previous = DockerfileDraft {
        text: DOCKERFILE.into(),
        attempt_index: 2,
        summary_used: String::new(),
    };
    let err = Agent::new(&llm, &prompts, 30)
        .diagnose_and_repair(&previous, &failed_log("x"), &snap)
        .unwrap_err();
    assert!(matches!(
        err,
        AgentError::RepairLimit {
            attempt_index: 2,
            max: 2
        }
    ));
    assert_eq!(llm.consumed(), 0);
}

#[test]
fn huge_log_is_shortened_to_tail_with_marker() {
    let mut log = String::new();
    log.push_str("ERROR: early failure worth keeping\n");
    let filler = "x".repeat(99);
    while log.len() < 10 * 1024 * 1024 {
        log.push_str(&filler);
        log.push('\n');
    }
    log.push_str("final line\n");
    let short = shorten_build_log(&log);
    let lines: Vec<&str> = short.lines().collect();
    assert_eq!(lines[0], "ERROR: early failure worth keeping");
    assert!(lines[1].starts_with("[... ") && lines[1].ends_with(" lines omitted ...]"));
    assert_eq!(lines.len(), 2 + LOG_TAIL_LINES);
    assert_eq!(*lines.last().unwrap(), "final line");
    assert!(short.len() < 64 * 1024);
}

#[test]
fn short_logs_are_kept_whole() {
    let log = "a\nb\nc";
    assert_eq!(shorten_build_log(log), log);
}

#[test]
fn transcript_jsonl_round_trip_and_usage() {
    let (_d, snap) = fixture();
    let prompts = PromptSet::builtin();
    let llm = ScriptBuilder::new()
        .usage(100, 10)
        .round("readme", SUBMIT_DOCUMENTATION, &[("file", "README.md")])
        .usage(50, 5)
        .round("done", FINISHED_SEARCH, &[])
        .build();
    let run = Agent::new(&llm, &prompts, 30)
        .gather_documentation(&snap)
        .unwrap();
    assert_eq!(run.transcript.usage(), Usage::new(300, 30));
    let text = run.transcript.to_jsonl();
    let back = Transcript::messages_from_jsonl(&text).unwrap();
    assert_eq!(back, run.transcript.messages);
    assert!(run.transcript.token_estimate() > 0);
}

#[test]
fn validate_detects_broken_alternation() {
    let mut t = Transcript::new(StageName::DocGathering, "sys".into());
    t.push(Message::user("plan"));
    t.push(Message::assistant(
        &crate::llm::AssistantReply::text("p"),
        QueryKind::Plan,
    ));
    t.push(Message::user("plan again"));
    t.push(Message::assistant(
        &crate::llm::AssistantReply::text("p"),
        QueryKind::Plan,
    ));
    assert!(t.validate().is_err());
    let mut t = Transcript::new(StageName::DocGathering, "sys".into());
    t.push(Message::tool("nope", "dangling"));
    assert!(t.validate().is_err());
}
