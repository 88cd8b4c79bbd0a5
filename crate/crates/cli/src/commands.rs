use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use installamatic::agent::Transcript;
use installamatic::dataset::{
    checkout_path, validate_ground_truth, Dataset, DatasetEntry, DatasetError,
};
use installamatic::llm::{Message, Role};
use installamatic::metrics::{aggregate, read_docs, to_f64, BenchmarkSummary, Rational};
use installamatic::oracle::Outcome;
use installamatic::orchestrator::{
    install_repository, load_report, run_benchmark, InstallationReport, OrchestratorError,
    OutputDir, RepoTarget, RunConfig, RunStatus,
};
use serde_json::json;

use crate::setup::{
    self, backend_factory, entry_target, load_dataset, run_config, stamped_dir,
    write_files_manifest,
};
use crate::{
    BenchmarkArgs, CliError, InstallArgs, MetricsArgs, ModeArg, RunArgs, ShowTranscriptArgs,
    Status, ValidateArgs,
};

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// Clone and checkout problems are infrastructure; bad entries are configuration.
fn checkout_err(e: DatasetError) -> CliError {
    match e {
        DatasetError::CloneError { .. } | DatasetError::Sandbox(_) => {
            CliError::Infra(e.to_string())
        }
        _ => CliError::Config(e.to_string()),
    }
}

fn deviations(config: &RunConfig, args: &RunArgs) -> Vec<String> {
    let mut d = config.deviations();
    d.extend(setup::extra_deviations(args));
    d
}

fn print_header(title: &str, deviations: &[String]) {
    println!("{title}");
    if deviations.is_empty() {
        println!("deviations from the reference protocol: none");
    } else {
        println!("deviations from the reference protocol:");
        for d in deviations {
            println!("  - {d}");
        }
    }
}

fn describe_outcome(o: &Outcome) -> String {
    match &o.counts {
        Some(c) => format!(
            "{:?} ({} passed, {} failed, {} errors, {} skipped)",
            o.kind, c.passed, c.failed, c.errors, c.skipped
        ),
        None => format!("{:?}", o.kind),
    }
}

fn directory_target(dir: &Path, docs: Option<&str>) -> Result<RepoTarget, CliError> {
    let path = dir
        .canonicalize()
        .map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let repo_id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "repo".into());
    let relevant_docs = docs
        .map(|d| {
            d.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    Ok(RepoTarget {
        repo_id,
        path,
        relevant_docs,
    })
}

pub fn install(a: InstallArgs) -> Result<Status, CliError> {
    let config = run_config(&a.run)?;
    let target = if Path::new(&a.repo).is_dir() {
        directory_target(Path::new(&a.repo), a.docs.as_deref())?
    } else {
        let dataset = load_dataset(&a.manifest).map_err(config_err)?;
        let entry = dataset.get(&a.repo).ok_or_else(|| {
            config_err(format!(
                "\"{}\" is neither a directory nor a manifest entry",
                a.repo
            ))
        })?;
        entry_target(entry, &a.manifest.work).map_err(checkout_err)?
    };
    let factory = backend_factory(&a.run)?;
    let sandbox = setup::sandbox(&a.run.engine, &a.manifest.work);
    let llm = factory(&target.repo_id, 0).map_err(config_err)?;
    let dir = stamped_dir(&a.run.out, &format!("install-{}", target.repo_id))?;
    print_header(
        &format!("installing {} ({})", target.repo_id, target.path.display()),
        &deviations(&config, &a.run),
    );

    let report = install_repository(
        &target,
        llm.as_ref(),
        &sandbox,
        &config,
        0,
        Some(&OutputDir::new(&dir)),
    )
    .map_err(|e| match e {
        OrchestratorError::Io { .. } => CliError::Failed(e.to_string()),
        _ => config_err(e),
    })?;
    for (i, attempt) in report.attempts.iter().enumerate() {
        println!(
            "attempt {i}: {} in {:.1}s",
            describe_outcome(&attempt.outcome),
            attempt.duration_secs
        );
    }
    let usage = report.total_usage();
    println!(
        "tokens: {} prompt, {} completion, {} total",
        usage.prompt_tokens,
        usage.completion_tokens,
        usage.total()
    );
    let report_path = OutputDir::new(&dir)
        .run_dir(&target.repo_id, 0)
        .join("report.json");
    write_files_manifest(&dir)?;
    let status = match &report.status {
        RunStatus::Aborted { stage, reason } => {
            println!("result: aborted during {stage}: {reason}");
            Status::Aborted
        }
        RunStatus::Completed if report.success => {
            println!("result: success after {} attempt(s)", report.attempts.len());
            Status::Ok
        }
        RunStatus::Completed => {
            println!("result: failure after {} attempt(s)", report.attempts.len());
            Status::Failed
        }
    };
    println!("report: {}", report_path.display());
    Ok(status)
}

fn ratio(r: Option<Rational>) -> String {
    match r {
        Some(r) => format!("{r} ({:.3})", to_f64(r)),
        None => "-".into(),
    }
}

fn print_summary(summary: &BenchmarkSummary) {
    println!(
        "{:<24} {:>18} {:>18} {:>18} {:>18} {:>6}",
        "repo", "install rate", "mean recall", "visibility", "informativity", "runs"
    );
    for m in &summary.per_repo {
        println!(
            "{:<24} {:>18} {:>18} {:>18} {:>18} {:>6}",
            m.repo_id,
            ratio(m.installation_rate),
            ratio(m.mean_recall),
            ratio(m.visibility),
            ratio(m.informativity),
            format!("{}/{}", m.n_eligible, m.n_runs)
        );
    }
    println!(
        "mean installation rate: {}",
        ratio(summary.mean_installation_rate)
    );
    println!("mean recall: {}", ratio(summary.mean_recall));
    if !summary.per_tag.is_empty() {
        println!("{:<24} {:>18}", "tag", "mean install rate");
        for (tag, r) in &summary.per_tag {
            println!("{:<24} {:>18}", tag.to_string(), ratio(Some(*r)));
        }
    }
    if let Some(n) = &summary.notice {
        println!("notice: {n}");
    }
}

fn write_summary(dir: &Path, summary: &BenchmarkSummary) -> Result<(), CliError> {
    write(&dir.join("summary.json"), &summary.to_json())?;
    write(&dir.join("summary.csv"), &summary.to_csv())?;
    write(&dir.join("tags.csv"), &summary.tags_csv())
}

fn doc_texts(dataset: &Dataset, roots: &[(String, PathBuf)]) -> BTreeMap<String, Vec<String>> {
    roots
        .iter()
        .filter_map(|(name, root)| {
            dataset
                .get(name)
                .map(|e| (name.clone(), read_docs(e, root)))
        })
        .filter(|(_, texts)| !texts.is_empty())
        .collect()
}

pub fn benchmark(a: BenchmarkArgs) -> Result<Status, CliError> {
    let dataset = load_dataset(&a.manifest).map_err(config_err)?;
    let selected = dataset.select(&a.select);
    if selected.is_empty() {
        return Err(config_err(format!(
            "selection \"{}\" matches no manifest entry",
            a.select
        )));
    }
    if a.runs == 0 {
        return Err(config_err("--runs must be at least 1"));
    }
    let config = run_config(&a.run)?;
    let factory = backend_factory(&a.run)?;
    let sandbox = setup::sandbox(&a.run.engine, &a.manifest.work);
    let mut devs = deviations(&config, &a.run);
    if a.runs != 10 {
        devs.push(format!("runs={} (reference 10)", a.runs));
    }
    print_header(
        &format!(
            "benchmark over {} selected entries, {} runs each",
            selected.len(),
            a.runs
        ),
        &devs,
    );

    let mut skipped = Vec::new();
    let mut entry_errors = BTreeMap::new();
    let mut targets = Vec::new();
    for entry in selected {
        if a.run.mode == ModeArg::PerfectRecall && entry.relevant_docs.is_empty() {
            println!(
                "notice: {} skipped: no annotated relevant documents for perfect-recall mode",
                entry.name
            );
            skipped.push(entry.name.clone());
            continue;
        }
        match entry_target(entry, &a.manifest.work) {
            Ok(t) => targets.push(t),
            Err(e) => {
                println!("error: {}: {e}", entry.name);
                entry_errors.insert(entry.name.clone(), e.to_string());
            }
        }
    }
    let dir = stamped_dir(&a.run.out, "benchmark")?;
    let results = run_benchmark(
        &targets,
        &config,
        a.runs,
        factory.as_ref(),
        &sandbox,
        Some(&OutputDir::new(&dir)),
        a.parallel,
    );
    let mut reports: Vec<InstallationReport> = Vec::new();
    for (t, r) in targets.iter().zip(results) {
        match r {
            Ok(rs) => reports.extend(rs),
            Err(e) => {
                println!("error: {}: {e}", t.repo_id);
                entry_errors.insert(t.repo_id.clone(), e.to_string());
            }
        }
    }
    let roots: Vec<(String, PathBuf)> = targets
        .iter()
        .map(|t| (t.repo_id.clone(), t.path.clone()))
        .collect();
    let summary = aggregate(&dataset, &reports, &doc_texts(&dataset, &roots));
    let header = json!({
        "runs": a.runs,
        "select": a.select,
        "deviations": devs,
        "skipped": skipped,
        "errors": entry_errors,
    });
    write(
        &dir.join("benchmark.json"),
        &serde_json::to_string_pretty(&header).expect("json"),
    )?;
    write_summary(&dir, &summary)?;
    write_files_manifest(&dir)?;
    print_summary(&summary);
    println!("output: {}", dir.display());
    if targets.is_empty() || reports.iter().all(InstallationReport::is_aborted) {
        return Err(CliError::Infra("no run completed".into()));
    }
    Ok(Status::Ok)
}

pub fn validate(a: ValidateArgs) -> Result<Status, CliError> {
    let dataset = match load_dataset(&a.manifest) {
        Ok(d) => d,
        Err(DatasetError::Io { path, source }) => {
            return Err(config_err(format!("{}: {source}", path.display())))
        }
        Err(DatasetError::Schema(errors)) => {
            for e in errors {
                println!("invalid: {e}");
            }
            return Ok(Status::Failed);
        }
        Err(e) => {
            println!("invalid: {e}");
            return Ok(Status::Failed);
        }
    };
    let buckets: Vec<String> = dataset
        .bucket_counts()
        .iter()
        .map(|(b, n)| format!("{b}: {n}"))
        .collect();
    println!(
        "manifest ok: {} entries ({})",
        dataset.len(),
        buckets.join(", ")
    );
    if !a.build_ground_truth {
        return Ok(Status::Ok);
    }
    let sandbox = setup::sandbox(&a.engine, &a.manifest.work);
    let limit = Duration::from_secs(a.engine.time_limit);
    let mut ok = true;
    for entry in &dataset.entries {
        match check_entry(entry, &a.manifest.work, &sandbox, limit) {
            Ok(Some(line)) => println!("{}: {line}", entry.name),
            Ok(None) => println!("{}: skipped (no ground-truth Dockerfile)", entry.name),
            Err(e) => {
                ok = false;
                println!("{}: {e}", entry.name);
            }
        }
    }
    Ok(if ok { Status::Ok } else { Status::Failed })
}

fn check_entry(
    entry: &DatasetEntry,
    work: &Path,
    sandbox: &installamatic::sandbox::Sandbox,
    limit: Duration,
) -> Result<Option<String>, String> {
    if entry.ground_truth.is_none() {
        return Ok(None);
    }
    let path = installamatic::dataset::checkout(entry, work).map_err(|e| e.to_string())?;
    let check = validate_ground_truth(entry, &path, sandbox, limit).map_err(|e| e.to_string())?;
    let line = describe_outcome(&check.outcome);
    if check.is_rot() {
        Err(format!(
            "{line}; the ground truth no longer installs and tests the repository"
        ))
    } else {
        Ok(Some(line))
    }
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            find_reports(&p, out)?;
        } else if e.file_name() == "report.json" {
            out.push(p);
        }
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<Status, CliError> {
    let dataset = load_dataset(&a.manifest).map_err(config_err)?;
    let mut paths = Vec::new();
    find_reports(&a.reports, &mut paths)
        .map_err(|e| config_err(format!("{}: {e}", a.reports.display())))?;
    let mut reports = Vec::new();
    for p in &paths {
        match load_report(p) {
            Ok(r) => reports.push(r),
            Err(e) => println!("warning: skipping unreadable report {e}"),
        }
    }
    let roots: Vec<(String, PathBuf)> = dataset
        .entries
        .iter()
        .filter_map(|e| {
            checkout_path(e, &a.manifest.work)
                .filter(|p| p.exists())
                .map(|p| (e.name.clone(), p))
        })
        .collect();
    let summary = aggregate(&dataset, &reports, &doc_texts(&dataset, &roots));
    print_summary(&summary);
    if let Some(out) = &a.out {
        let dir = stamped_dir(out, "metrics")?;
        write_summary(&dir, &summary)?;
        write_files_manifest(&dir)?;
        println!("output: {}", dir.display());
    }
    Ok(if reports.is_empty() {
        Status::Failed
    } else {
        Status::Ok
    })
}

fn render_message(m: &Message) -> String {
    let mut head = format!("[{}", format!("{:?}", m.role).to_lowercase());
    if let Some(q) = m.query {
        head.push_str(&format!(" / {}", format!("{q:?}").to_lowercase()));
    }
    if let Some(id) = &m.tool_call_id {
        head.push_str(&format!(" / reply to {id}"));
    }
    head.push(']');
    let mut out = vec![head];
    if !m.content.is_empty() {
        out.push(m.content.clone());
    }
    for c in &m.tool_calls {
        let args = serde_json::to_string(&c.arguments).unwrap_or_default();
        out.push(format!("  -> {} {} ({})", c.name, args, c.id));
    }
    if m.role == Role::Assistant {
        if let Some(u) = m.usage {
            out.push(format!(
                "  tokens: {} prompt, {} completion",
                u.prompt_tokens, u.completion_tokens
            ));
        }
    }
    out.join("\n")
}

pub fn show_transcript(a: ShowTranscriptArgs) -> Result<Status, CliError> {
    let text = fs::read_to_string(&a.file)
        .map_err(|e| config_err(format!("{}: {e}", a.file.display())))?;
    let messages = Transcript::messages_from_jsonl(&text)
        .map_err(|e| config_err(format!("{}: {e}", a.file.display())))?;
    for m in &messages {
        println!("{}\n", render_message(m));
    }
    let calls: usize = messages.iter().map(|m| m.tool_calls.len()).sum();
    println!("{} messages, {calls} tool calls", messages.len());
    Ok(Status::Ok)
}
