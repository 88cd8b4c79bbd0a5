//! The install loop: gather (or take supplied docs), summarize and generate,
//! then build, classify and repair until success or the repair cap.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    Agent, AgentError, DocSet, DockerfileDraft, PromptSet, StageName, Transcript,
    DEFAULT_SEARCH_BUDGET, MAX_REPAIRS,
};
use crate::llm::{BackendError, ChatBackend, Usage};
use crate::navigator::{NavError, RepoSnapshot};
use crate::oracle::{classify, Outcome, OutcomeKind};
use crate::sandbox::{
    image_tag, BuildLog, BuildRequest, ExitStatus, Sandbox, SandboxError, DEFAULT_TIME_LIMIT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    /// Documentation gathering is skipped; the annotated relevant documents
    /// are handed to the summary stage.
    PerfectRecall,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub max_repairs: usize,
    pub build_time_limit: Duration,
    pub search_budget: usize,
    pub prompts: PromptSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Standard,
            max_repairs: MAX_REPAIRS,
            build_time_limit: DEFAULT_TIME_LIMIT,
            search_budget: DEFAULT_SEARCH_BUDGET,
            prompts: PromptSet::builtin(),
        }
    }
}

impl RunConfig {
    /// Settings that differ from the reference protocol, for report headers.
    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_repairs != MAX_REPAIRS {
            out.push(format!(
                "max_repairs={} (reference {MAX_REPAIRS})",
                self.max_repairs
            ));
        }
        if self.build_time_limit != DEFAULT_TIME_LIMIT {
            out.push(format!(
                "build_time_limit={}s (reference {}s)",
                self.build_time_limit.as_secs(),
                DEFAULT_TIME_LIMIT.as_secs()
            ));
        }
        if self.search_budget != DEFAULT_SEARCH_BUDGET {
            out.push(format!(
                "search_budget={} (reference {DEFAULT_SEARCH_BUDGET})",
                self.search_budget
            ));
        }
        if self.prompts.version != PromptSet::builtin().version {
            out.push(format!("prompts={}", self.prompts.version));
        }
        out
    }

    /// Reports from runs with a changed repair cap are not comparable with
    /// the reference protocol.
    pub fn comparable(&self) -> bool {
        self.max_repairs == MAX_REPAIRS
    }
}

/// A repository to install.
#[derive(Debug, Clone)]
pub struct RepoTarget {
    pub repo_id: String,
    pub path: PathBuf,
    /// Annotated install-relevant documents (may be empty).
    pub relevant_docs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub draft: DockerfileDraft,
    pub outcome: Outcome,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Infrastructure failure (backend or container engine); excluded from
    /// installation-rate denominators.
    Aborted {
        stage: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub usage: Usage,
    pub tool_calls: usize,
    /// Number of stage runs that stopped on the search budget.
    pub exhausted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstallationReport {
    pub repo_id: String,
    pub run_index: usize,
    pub mode: Mode,
    pub status: RunStatus,
    pub success: bool,
    pub attempts: Vec<Attempt>,
    pub docset: DocSet,
    /// Paths whose retrieval counts toward recall.
    pub recall_inputs: Vec<String>,
    pub usage: BTreeMap<String, StageUsage>,
    pub wall_time_secs: f64,
    pub comparable: bool,
}

impl InstallationReport {
    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    pub fn total_usage(&self) -> Usage {
        self.usage.values().map(|s| s.usage).sum()
    }

    pub fn repairs(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }

    /// The report with every duration zeroed, for comparisons that must
    /// ignore timing.
    pub fn timing_free(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        for a in &mut r.attempts {
            a.duration_secs = 0.0;
        }
        r
    }

    /// Checks the structural invariants every report must satisfy.
    pub fn check(&self, max_repairs: usize) -> Result<(), String> {
        if self.attempts.len() > max_repairs + 1 {
            return Err(format!(
                "{} attempts exceed the cap of {}",
                self.attempts.len(),
                max_repairs + 1
            ));
        }
        for (i, a) in self.attempts.iter().enumerate() {
            if a.draft.attempt_index != i {
                return Err(format!(
                    "attempt {i} carries index {}",
                    a.draft.attempt_index
                ));
            }
        }
        let last_ok = self
            .attempts
            .last()
            .is_some_and(|a| a.outcome.kind.is_success());
        if self.success != last_ok {
            return Err("success flag disagrees with the last outcome".into());
        }
        if !self.is_aborted() && self.attempts.is_empty() {
            return Err("completed run without attempts".into());
        }
        Ok(())
    }
}

/// Report plus the in-memory artifacts that were persisted alongside it.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: InstallationReport,
    pub transcripts: Vec<Transcript>,
    pub logs: Vec<BuildLog>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("search budget must be at least 1")]
    InvalidBudget,
    #[error("perfect-recall mode needs annotated relevant documents for {0}")]
    PerfectRecallUnavailable(String),
    #[error("run count must be at least 1")]
    NoRuns,
    #[error("cannot open repository: {0}")]
    Repo(#[from] NavError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Where run artifacts go: `<root>/<repo>/<run>/`.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputDir { root: root.into() }
    }

    pub fn run_dir(&self, repo_id: &str, run_index: usize) -> PathBuf {
        self.root.join(repo_id).join(run_index.to_string())
    }
}

struct Recorder {
    dir: Option<PathBuf>,
    transcripts: Vec<Transcript>,
    logs: Vec<BuildLog>,
    usage: BTreeMap<String, StageUsage>,
}

impl Recorder {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), OrchestratorError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| OrchestratorError::Io { path, source })
    }

    fn transcript(&mut self, t: Transcript, exhausted: bool) -> Result<(), OrchestratorError> {
        let entry = self.usage.entry(t.stage.slug().to_string()).or_default();
        entry.usage += t.usage();
        entry.tool_calls += t.tool_call_count();
        entry.exhausted += usize::from(exhausted);
        let name = format!(
            "transcript-{}-{}.jsonl",
            self.transcripts.len(),
            t.stage.slug()
        );
        self.write(&name, &t.to_jsonl())?;
        self.transcripts.push(t);
        Ok(())
    }
}

enum Abort {
    Infra { stage: String, reason: String },
    Fatal(OrchestratorError),
}

impl From<OrchestratorError> for Abort {
    fn from(e: OrchestratorError) -> Self {
        Abort::Fatal(e)
    }
}

fn synthetic_log(message: &str) -> BuildLog {
    BuildLog {
        raw_text: format!("ERROR: {message}\n"),
        exit_status: ExitStatus::Completed { code: 1 },
        duration_secs: 0.0,
    }
}

/// Outcome of asking the agent for a Dockerfile.
enum Drafted {
    Ok(DockerfileDraft),
    /// The reply had no Dockerfile; the attempt still counts.
    Missing(usize),
}

fn agent_result<T>(
    rec: &mut Recorder,
    r: Result<T, AgentError>,
    stage: StageName,
) -> Result<Option<T>, Abort> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(AgentError::NoDockerfileInReply { transcript }) => {
            rec.transcript(*transcript, false)?;
            Ok(None)
        }
        Err(AgentError::Backend { source, transcript }) => {
            rec.transcript(*transcript, false)?;
            Err(Abort::Infra {
                stage: stage.slug().into(),
                reason: source.to_string(),
            })
        }
        Err(AgentError::InvalidBudget) => Err(Abort::Fatal(OrchestratorError::InvalidBudget)),
        Err(e @ AgentError::RepairLimit { .. }) => Err(Abort::Infra {
            stage: stage.slug().into(),
            reason: e.to_string(),
        }),
    }
}

pub fn install_repository(
    target: &RepoTarget,
    llm: &dyn ChatBackend,
    sandbox: &Sandbox,
    config: &RunConfig,
    run_index: usize,
    out: Option<&OutputDir>,
) -> Result<InstallationReport, OrchestratorError> {
    install_repository_with_artifacts(target, llm, sandbox, config, run_index, out)
        .map(|a| a.report)
}

pub fn install_repository_with_artifacts(
    target: &RepoTarget,
    llm: &dyn ChatBackend,
    sandbox: &Sandbox,
    config: &RunConfig,
    run_index: usize,
    out: Option<&OutputDir>,
) -> Result<RunArtifacts, OrchestratorError> {
    if config.search_budget == 0 {
        return Err(OrchestratorError::InvalidBudget);
    }
    if config.mode == Mode::PerfectRecall && target.relevant_docs.is_empty() {
        return Err(OrchestratorError::PerfectRecallUnavailable(
            target.repo_id.clone(),
        ));
    }
    let started = Instant::now();
    let snap = RepoSnapshot::open(&target.path)?;
    let dir = out.map(|o| o.run_dir(&target.repo_id, run_index));
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|source| OrchestratorError::Io {
            path: d.clone(),
            source,
        })?;
    }
    let mut rec = Recorder {
        dir,
        transcripts: Vec::new(),
        logs: Vec::new(),
        usage: BTreeMap::new(),
    };
    let mut report = InstallationReport {
        repo_id: target.repo_id.clone(),
        run_index,
        mode: config.mode,
        status: RunStatus::Completed,
        success: false,
        attempts: Vec::new(),
        docset: DocSet::new(),
        recall_inputs: Vec::new(),
        usage: BTreeMap::new(),
        wall_time_secs: 0.0,
        comparable: config.comparable(),
    };
    let agent =
        Agent::new(llm, &config.prompts, config.search_budget).with_max_repairs(config.max_repairs);
    match run_loop(
        target,
        &snap,
        &agent,
        sandbox,
        config,
        run_index,
        &mut rec,
        &mut report,
    ) {
        Ok(()) => {}
        Err(Abort::Infra { stage, reason }) => {
            warn!(
                "{} run {run_index} aborted during {stage}: {reason}",
                target.repo_id
            );
            report.status = RunStatus::Aborted { stage, reason };
        }
        Err(Abort::Fatal(e)) => return Err(e),
    }
    report.success = report
        .attempts
        .last()
        .is_some_and(|a| a.outcome.kind.is_success());
    report.usage = rec.usage.clone();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    rec.write("report.json", &json)?;
    info!(
        "{} run {run_index}: {} after {} attempt(s)",
        target.repo_id,
        if report.success { "success" } else { "failure" },
        report.attempts.len()
    );
    Ok(RunArtifacts {
        report,
        transcripts: rec.transcripts,
        logs: rec.logs,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    target: &RepoTarget,
    snap: &RepoSnapshot,
    agent: &Agent<'_>,
    sandbox: &Sandbox,
    config: &RunConfig,
    run_index: usize,
    rec: &mut Recorder,
    report: &mut InstallationReport,
) -> Result<(), Abort> {
    if let Err(e) = sandbox.preflight() {
        return Err(Abort::Infra {
            stage: "preflight".into(),
            reason: e.to_string(),
        });
    }
    let docset = match config.mode {
        Mode::Standard => {
            let Some(g) = agent_result(
                rec,
                agent.gather_documentation(snap),
                StageName::DocGathering,
            )?
            else {
                unreachable!("gathering never extracts a Dockerfile")
            };
            rec.transcript(g.transcript, g.exhausted)?;
            g.docset
        }
        Mode::PerfectRecall => DocSet::supplied(&target.relevant_docs),
    };
    report.docset = docset.clone();
    report.recall_inputs = docset.paths().to_vec();

    let mut drafted = match agent_result(
        rec,
        agent.summarize_and_generate(snap, &docset),
        StageName::Summarize,
    )? {
        Some(g) => {
            rec.transcript(g.transcript, g.exhausted)?;
            Drafted::Ok(g.draft)
        }
        None => Drafted::Missing(0),
    };
    let mut summary = String::new();
    loop {
        let (draft, log) = match drafted {
            Drafted::Ok(draft) => {
                summary.clone_from(&draft.summary_used);
                rec.write(
                    &format!("attempt-{}.Dockerfile", draft.attempt_index),
                    &draft.text,
                )?;
                let tag = image_tag(&target.repo_id, run_index, draft.attempt_index);
                let req = BuildRequest::new(&target.path, draft.text.clone(), tag.clone())
                    .with_time_limit(config.build_time_limit);
                let log = match sandbox.build_and_capture(&req) {
                    Ok(log) => log,
                    Err(e @ SandboxError::EngineUnavailable(_)) => {
                        return Err(Abort::Infra {
                            stage: "build".into(),
                            reason: e.to_string(),
                        })
                    }
                    Err(e) => synthetic_log(&e.to_string()),
                };
                sandbox.cleanup(&tag);
                (draft, log)
            }
            Drafted::Missing(index) => (
                DockerfileDraft {
                    text: String::new(),
                    attempt_index: index,
                    summary_used: summary.clone(),
                },
                synthetic_log("the reply contained no Dockerfile code block"),
            ),
        };
        // Persist before classifying so the raw log survives any oracle bug.
        rec.write(
            &format!("attempt-{}.log", draft.attempt_index),
            &log.raw_text,
        )?;
        let outcome = classify(&log);
        report.attempts.push(Attempt {
            draft: draft.clone(),
            outcome: outcome.clone(),
            duration_secs: log.duration_secs,
        });
        rec.logs.push(log.clone());
        if outcome.kind == OutcomeKind::Success || draft.attempt_index >= config.max_repairs {
            return Ok(());
        }
        drafted = match agent_result(
            rec,
            agent.diagnose_and_repair(&draft, &log, snap),
            StageName::Diagnose,
        )? {
            Some(r) => {
                rec.transcript(r.transcript, r.exhausted)?;
                Drafted::Ok(r.draft)
            }
            None => Drafted::Missing(draft.attempt_index + 1),
        };
    }
}

/// Builds a backend for one run (`repo_id`, `run_index`).
pub type BackendFactory<'a> =
    dyn Fn(&str, usize) -> Result<Box<dyn ChatBackend>, BackendError> + Sync + 'a;

/// Runs one target `n` times in sequence, each with a fresh backend and
/// transcripts. Runs whose backend cannot be created are recorded as aborted.
pub fn run_repeated(
    target: &RepoTarget,
    config: &RunConfig,
    n: usize,
    factory: &BackendFactory<'_>,
    sandbox: &Sandbox,
    out: Option<&OutputDir>,
) -> Result<Vec<InstallationReport>, OrchestratorError> {
    if n == 0 {
        return Err(OrchestratorError::NoRuns);
    }
    let mut reports = Vec::with_capacity(n);
    for i in 0..n {
        let report = match factory(&target.repo_id, i) {
            Ok(llm) => install_repository(target, llm.as_ref(), sandbox, config, i, out)?,
            Err(e) => {
                warn!("{} run {i}: backend unavailable: {e}", target.repo_id);
                InstallationReport {
                    repo_id: target.repo_id.clone(),
                    run_index: i,
                    mode: config.mode,
                    status: RunStatus::Aborted {
                        stage: "backend".into(),
                        reason: e.to_string(),
                    },
                    success: false,
                    attempts: Vec::new(),
                    docset: DocSet::new(),
                    recall_inputs: Vec::new(),
                    usage: BTreeMap::new(),
                    wall_time_secs: 0.0,
                    comparable: config.comparable(),
                }
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

type RepoResult = Result<Vec<InstallationReport>, OrchestratorError>;

/// Runs every target `n` times. Different repositories proceed in parallel
/// up to `parallel`; runs of one repository stay sequential. Results keep
/// the order of `targets`.
pub fn run_benchmark(
    targets: &[RepoTarget],
    config: &RunConfig,
    n: usize,
    factory: &BackendFactory<'_>,
    sandbox: &Sandbox,
    out: Option<&OutputDir>,
    parallel: usize,
) -> Vec<Result<Vec<InstallationReport>, OrchestratorError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RepoResult>>> = targets.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..parallel.clamp(1, targets.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(t) = targets.get(i) else { break };
                let r = run_repeated(t, config, n, factory, sandbox, out);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot")
                .expect("every target ran")
        })
        .collect()
}

/// Reads a persisted report.
pub fn load_report(path: &Path) -> Result<InstallationReport, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
