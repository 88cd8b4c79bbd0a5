//! Build-log oracle: an installation succeeded if tests ran and at least one
//! passed.
//!
//! Recognizers scan the log for test-runner summaries (pytest, unittest, tox
//! env results, and a generic "N passed" fallback). When several summaries
//! appear, the last one wins, since wrappers such as tox and make often run
//! a suite more than once.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::navigator::LineSpan;
use crate::sandbox::{BuildLog, ExitStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Runner {
    Pytest,
    Unittest,
    Tox,
    MakeWrapped,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCounts {
    pub passed: u64,
    pub failed: u64,
    pub errors: u64,
    pub skipped: u64,
    pub runner: Runner,
}

impl TestCounts {
    fn total(&self) -> u64 {
        self.passed + self.failed + self.errors + self.skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    TestsRanNonePassed,
    BuildFailure,
    Timeout,
    NoTestsDetected,
}

impl OutcomeKind {
    pub fn is_success(self) -> bool {
        self == OutcomeKind::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub counts: Option<TestCounts>,
    /// Log lines supporting the classification.
    pub evidence: Vec<LineSpan>,
}

impl Outcome {
    /// Text of the evidence lines, in order.
    pub fn evidence_text(&self, log: &str) -> String {
        let lines: Vec<&str> = log.lines().collect();
        let mut out = Vec::new();
        for span in &self.evidence {
            let end = span.end.min(lines.len());
            if span.start < end {
                out.extend_from_slice(&lines[span.start..end]);
            }
        }
        out.join("\n")
    }
}

#[derive(Debug, Clone)]
struct Summary {
    counts: TestCounts,
    spans: Vec<LineSpan>,
}

impl Summary {
    fn end(&self) -> usize {
        self.spans.iter().map(|s| s.end).max().unwrap_or(0)
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn ansi_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\x1b\[[0-9;?]*[A-Za-z]")
}

/// BuildKit plain-progress prefix: `#12 3.456 `.
fn buildkit_prefix_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^#\d+ \d+(\.\d+)? ")
}

fn count_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b(\d+) (passed|failed|errors?|skipped)\b")
}

fn pytest_fence_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^=+ (.+?) =+$")
}

/// `pytest -q` prints its summary without the `=` fence.
fn pytest_quiet_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"^(\d+ [a-z]+(?:, \d+ [a-z]+)*) in [0-9.]+s(?: \([0-9:]+\))?$",
    )
}

fn unittest_ran_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^Ran (\d+) tests? in [0-9.]+s$")
}

fn unittest_status_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^(OK|FAILED)(?: \((.*)\))?$")
}

fn tox_env_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"^(?:ERROR:\s+)?([A-Za-z0-9_.\-]+): (OK|FAIL|SKIP|commands succeeded|commands failed|InterpreterNotFound)\b",
    )
}

fn tox_end_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^(congratulations :\)|evaluation failed :\()")
}

fn make_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(^make(\[\d+\])?: )|(\bmake(\s+-\S+)*\s+(test|tests|check|unittest|test-\S+)\b)",
    )
}

fn error_line_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)(\berror\b|\bfailed\b|exception|traceback|not found|no such file|exit code: \d+|denied)",
    )
}

/// Heuristic for lines worth keeping when a log has to be shortened.
pub fn is_error_line(line: &str) -> bool {
    error_line_re().is_match(line)
}

/// Strips terminal colors and container-engine progress prefixes.
fn clean_line(line: &str) -> String {
    let no_ansi = ansi_re().replace_all(line, "");
    let no_prefix = buildkit_prefix_re().replace(&no_ansi, "");
    no_prefix.trim().to_string()
}

fn counts_from(text: &str, runner: Runner) -> TestCounts {
    let mut counts = TestCounts {
        passed: 0,
        failed: 0,
        errors: 0,
        skipped: 0,
        runner,
    };
    for cap in count_re().captures_iter(text) {
        let n: u64 = cap[1].parse().unwrap_or(0);
        match &cap[2] {
            "passed" => counts.passed += n,
            "failed" => counts.failed += n,
            "skipped" => counts.skipped += n,
            _ => counts.errors += n,
        }
    }
    counts
}

fn pytest_summary(line: &str) -> Option<TestCounts> {
    let caps = pytest_fence_re()
        .captures(line)
        .or_else(|| pytest_quiet_re().captures(line))?;
    let inner = caps.get(1)?.as_str();
    if !count_re().is_match(inner) {
        return None;
    }
    Some(counts_from(inner, Runner::Pytest))
}

fn generic_summary(line: &str) -> Option<TestCounts> {
    let has_key = count_re()
        .captures_iter(line)
        .any(|c| matches!(&c[2], "passed" | "failed"));
    has_key.then(|| counts_from(line, Runner::Other))
}

fn unittest_summary(lines: &[String], at: usize) -> Option<Summary> {
    let ran = unittest_ran_re().captures(&lines[at])?;
    let total: u64 = ran[1].parse().ok()?;
    // The status line follows after a blank line; allow a little slack for
    // interleaved warnings.
    let (offset, status) = lines[at + 1..]
        .iter()
        .take(6)
        .enumerate()
        .find_map(|(i, l)| unittest_status_re().captures(l).map(|c| (i, c)))?;
    let mut failures = 0;
    let mut errors = 0;
    let mut skipped = 0;
    if let Some(detail) = status.get(2) {
        for part in detail.as_str().split(',') {
            let Some((k, v)) = part.trim().split_once('=') else {
                continue;
            };
            let v: u64 = v.trim().parse().unwrap_or(0);
            match k.trim() {
                "failures" => failures += v,
                "errors" => errors += v,
                "skipped" => skipped += v,
                _ => {}
            }
        }
    }
    let status_line = at + 1 + offset;
    Some(Summary {
        counts: TestCounts {
            passed: total.saturating_sub(failures + errors + skipped),
            failed: failures,
            errors,
            skipped,
            runner: Runner::Unittest,
        },
        spans: vec![LineSpan::new(at, status_line + 1)],
    })
}

/// Tox env result block ending in "congratulations :)" or
/// "evaluation failed :(". Env counts are used only when no inner runner
/// summary is available.
fn tox_block(lines: &[String], end_at: usize) -> Option<(LineSpan, u64, u64)> {
    if !tox_end_re().is_match(&lines[end_at]) {
        return None;
    }
    let mut start = end_at;
    let mut ok = 0;
    let mut fail = 0;
    while start > 0 {
        let Some(c) = tox_env_re().captures(&lines[start - 1]) else {
            break;
        };
        match &c[2] {
            "OK" | "commands succeeded" => ok += 1,
            "SKIP" => {}
            _ => fail += 1,
        }
        start -= 1;
    }
    if start == end_at {
        return None;
    }
    Some((LineSpan::new(start, end_at + 1), ok, fail))
}

fn find_summaries(lines: &[String]) -> Vec<Summary> {
    let mut found: Vec<Summary> = Vec::new();
    // Index into `found` after the most recent tox block; summaries from that
    // point on belong to the next tox run.
    let mut since_tox = 0;
    for i in 0..lines.len() {
        let line = &lines[i];
        if let Some(counts) = pytest_summary(line) {
            found.push(Summary {
                counts,
                spans: vec![LineSpan::new(i, i + 1)],
            });
        } else if let Some(s) = unittest_summary(lines, i) {
            found.push(s);
        } else if let Some((span, ok, fail)) = tox_block(lines, i) {
            let inner = found[since_tox..].last().cloned();
            let summary = match inner {
                Some(mut s) => {
                    s.counts.runner = Runner::Tox;
                    s.spans.push(span);
                    s
                }
                None => Summary {
                    counts: TestCounts {
                        passed: ok,
                        failed: fail,
                        errors: 0,
                        skipped: 0,
                        runner: Runner::Tox,
                    },
                    spans: vec![span],
                },
            };
            found.push(summary);
            since_tox = found.len();
        } else if let Some(counts) = generic_summary(line) {
            found.push(Summary {
                counts,
                spans: vec![LineSpan::new(i, i + 1)],
            });
        }
    }
    found.retain(|s| s.counts.total() > 0);
    found
}

fn last_summary(lines: &[String]) -> Option<Summary> {
    let mut summaries = find_summaries(lines);
    summaries.sort_by_key(Summary::end);
    let mut last = summaries.pop()?;
    if last.counts.runner != Runner::Tox && lines.iter().any(|l| make_re().is_match(l)) {
        last.counts.runner = Runner::MakeWrapped;
    }
    Some(last)
}

fn clean_lines(raw: &str) -> Vec<String> {
    raw.lines().map(clean_line).collect()
}

/// Counts from the last recognized test-runner summary in the log.
pub fn parse_test_summary(raw_text: &str) -> Option<TestCounts> {
    last_summary(&clean_lines(raw_text)).map(|s| s.counts)
}

/// Classifies one build. Precedence: Timeout, Success, TestsRanNonePassed,
/// BuildFailure, NoTestsDetected.
pub fn classify(log: &BuildLog) -> Outcome {
    if log.exit_status == ExitStatus::TimedOut {
        let counts = parse_test_summary(&log.raw_text);
        return Outcome {
            kind: OutcomeKind::Timeout,
            counts,
            evidence: Vec::new(),
        };
    }
    let lines = clean_lines(&log.raw_text);
    if let Some(summary) = last_summary(&lines) {
        let kind = if summary.counts.passed >= 1 {
            OutcomeKind::Success
        } else {
            OutcomeKind::TestsRanNonePassed
        };
        let mut evidence = summary.spans;
        evidence.sort_by_key(|s| s.start);
        return Outcome {
            kind,
            counts: Some(summary.counts),
            evidence,
        };
    }
    let failed = !matches!(log.exit_status, ExitStatus::Completed { code: 0 });
    let kind = if failed {
        OutcomeKind::BuildFailure
    } else {
        OutcomeKind::NoTestsDetected
    };
    Outcome {
        kind,
        counts: None,
        evidence: fallback_evidence(&lines, failed),
    }
}

fn fallback_evidence(lines: &[String], failed: bool) -> Vec<LineSpan> {
    if lines.is_empty() {
        return vec![LineSpan::new(0, 0)];
    }
    if failed {
        let errors: Vec<LineSpan> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| is_error_line(l))
            .map(|(i, _)| LineSpan::new(i, i + 1))
            .collect();
        if !errors.is_empty() {
            let keep = errors.len().saturating_sub(5);
            return errors[keep..].to_vec();
        }
    }
    let last = lines
        .iter()
        .rposition(|l| !l.is_empty())
        .unwrap_or(lines.len() - 1);
    vec![LineSpan::new(last, last + 1)]
}
