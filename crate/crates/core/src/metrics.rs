//! Benchmark metrics: visibility, informativity, recall and installation
//! rate, as exact rationals.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetEntry, InstallTag};
use crate::dockerfile::command_lines;
use crate::orchestrator::InstallationReport;

pub type Rational = Ratio<u64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ground-truth Dockerfile has no RUN, CMD or ENTRYPOINT commands")]
    EmptyDockerfile,
    #[error("no rate-eligible runs")]
    NoEligibleRuns,
}

/// Files and directories that must be traversed to reach every relevant document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisibilityCount {
    pub n_files: usize,
    /// Distinct ancestor directories, excluding the root.
    pub n_dirs: usize,
}

pub fn visibility_count(relevant_docs: &[String]) -> VisibilityCount {
    let files: BTreeSet<&str> = relevant_docs.iter().map(String::as_str).collect();
    let mut dirs = BTreeSet::new();
    for f in &files {
        let mut cur = *f;
        while let Some((parent, _)) = cur.rsplit_once('/') {
            dirs.insert(parent);
            cur = parent;
        }
    }
    VisibilityCount {
        n_files: files.len(),
        n_dirs: dirs.len(),
    }
}

/// `1 / (n_dirs + n_files)`; absent without relevant documents.
pub fn visibility(relevant_docs: &[String]) -> Option<Rational> {
    let c = visibility_count(relevant_docs);
    let total = (c.n_files + c.n_dirs) as u64;
    (total > 0).then(|| Ratio::new(1, total))
}

fn squash_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dockerfile command payloads in the form used for matching.
pub fn normalized_commands(dockerfile: &str) -> Vec<String> {
    command_lines(dockerfile)
        .iter()
        .map(|c| squash_ws(c))
        .filter(|c| !c.is_empty() && !c.starts_with('#'))
        .collect()
}

/// Share of the Dockerfile's command payloads that occur, whitespace
/// normalized, inside any of `doc_texts`.
pub fn informativity(dockerfile: &str, doc_texts: &[String]) -> Result<Rational, MetricsError> {
    let commands = normalized_commands(dockerfile);
    if commands.is_empty() {
        return Err(MetricsError::EmptyDockerfile);
    }
    let docs: Vec<String> = doc_texts.iter().map(|d| squash_ws(d)).collect();
    let hits = commands
        .iter()
        .filter(|c| docs.iter().any(|d| d.contains(c.as_str())))
        .count();
    Ok(Ratio::new(hits as u64, commands.len() as u64))
}

/// Reads the entry's relevant documents from a checkout. Unreadable files
/// contribute no text.
pub fn read_docs(entry: &DatasetEntry, repo_root: &Path) -> Vec<String> {
    entry
        .relevant_docs
        .iter()
        .filter_map(|d| fs::read(repo_root.join(d)).ok())
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .collect()
}

/// `|retrieved ∩ relevant| / |relevant|`; absent when nothing is relevant.
pub fn recall(retrieved: &[String], relevant: &[String]) -> Option<Rational> {
    let relevant: BTreeSet<&str> = relevant.iter().map(String::as_str).collect();
    if relevant.is_empty() {
        return None;
    }
    let retrieved: BTreeSet<&str> = retrieved.iter().map(String::as_str).collect();
    let hit = relevant.intersection(&retrieved).count();
    Some(Ratio::new(hit as u64, relevant.len() as u64))
}

/// Successful runs over rate-eligible (non-aborted) runs.
pub fn installation_rate(reports: &[InstallationReport]) -> Result<Rational, MetricsError> {
    let eligible: Vec<&InstallationReport> = reports.iter().filter(|r| !r.is_aborted()).collect();
    if eligible.is_empty() {
        return Err(MetricsError::NoEligibleRuns);
    }
    let ok = eligible.iter().filter(|r| r.success).count();
    Ok(Ratio::new(ok as u64, eligible.len() as u64))
}

pub fn mean(values: &[Rational]) -> Option<Rational> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(Ratio::from_integer(0), |a, b| a + b);
    Some(sum / values.len() as u64)
}

/// Mean recall over a repository's eligible runs.
pub fn mean_recall(reports: &[InstallationReport], relevant: &[String]) -> Option<Rational> {
    let per_run: Vec<Rational> = reports
        .iter()
        .filter(|r| !r.is_aborted())
        .filter_map(|r| recall(&r.recall_inputs, relevant))
        .collect();
    mean(&per_run)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub repo_id: String,
    pub visibility: Option<Rational>,
    /// Absent without a ground-truth Dockerfile or readable documentation.
    pub informativity: Option<Rational>,
    pub mean_recall: Option<Rational>,
    /// Absent when no run was rate-eligible.
    pub installation_rate: Option<Rational>,
    pub n_runs: usize,
    pub n_eligible: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BenchmarkSummary {
    pub per_repo: Vec<MetricsReport>,
    pub mean_installation_rate: Option<Rational>,
    pub mean_recall: Option<Rational>,
    pub per_tag: BTreeMap<InstallTag, Rational>,
    pub notice: Option<String>,
}

/// Computes per-repository metrics and dataset-level means. `doc_texts`
/// maps repository names to the text of their relevant documents; entries
/// missing from it get no informativity.
pub fn aggregate(
    dataset: &Dataset,
    reports: &[InstallationReport],
    doc_texts: &BTreeMap<String, Vec<String>>,
) -> BenchmarkSummary {
    if reports.is_empty() {
        return BenchmarkSummary {
            notice: Some("no installation reports; nothing to aggregate".into()),
            ..BenchmarkSummary::default()
        };
    }
    let mut by_repo: BTreeMap<&str, Vec<InstallationReport>> = BTreeMap::new();
    for r in reports {
        by_repo.entry(&r.repo_id).or_default().push(r.clone());
    }
    let mut per_repo = Vec::new();
    let mut tag_rates: BTreeMap<InstallTag, Vec<Rational>> = BTreeMap::new();
    for entry in &dataset.entries {
        let Some(runs) = by_repo.get(entry.name.as_str()) else {
            continue;
        };
        let rate = installation_rate(runs).ok();
        if let Some(r) = rate {
            for t in &entry.tags {
                tag_rates.entry(*t).or_default().push(r);
            }
        }
        let informativity = match (entry.ground_truth_dockerfile(), doc_texts.get(&entry.name)) {
            (Some(df), Some(texts)) => informativity(df, texts).ok(),
            _ => None,
        };
        per_repo.push(MetricsReport {
            repo_id: entry.name.clone(),
            visibility: visibility(&entry.relevant_docs),
            informativity,
            mean_recall: mean_recall(runs, &entry.relevant_docs),
            installation_rate: rate,
            n_runs: runs.len(),
            n_eligible: runs.iter().filter(|r| !r.is_aborted()).count(),
        });
    }
    let rates: Vec<Rational> = per_repo
        .iter()
        .filter_map(|m| m.installation_rate)
        .collect();
    let recalls: Vec<Rational> = per_repo.iter().filter_map(|m| m.mean_recall).collect();
    let unknown: Vec<&str> = by_repo
        .keys()
        .copied()
        .filter(|k| dataset.get(k).is_none())
        .collect();
    BenchmarkSummary {
        mean_installation_rate: mean(&rates),
        mean_recall: mean(&recalls),
        per_tag: tag_rates
            .into_iter()
            .filter_map(|(t, v)| mean(&v).map(|m| (t, m)))
            .collect(),
        notice: (!unknown.is_empty()).then(|| {
            format!(
                "reports for repositories outside the dataset ignored: {}",
                unknown.join(", ")
            )
        }),
        per_repo,
    }
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

struct Exact(Option<Rational>);

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            None => s.serialize_none(),
            Some(r) => {
                let mut st = s.serialize_struct("Ratio", 2)?;
                st.serialize_field("exact", &format!("{}/{}", r.numer(), r.denom()))?;
                st.serialize_field("value", &to_f64(r))?;
                st.end()
            }
        }
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("MetricsReport", 7)?;
        st.serialize_field("repo_id", &self.repo_id)?;
        st.serialize_field("visibility", &Exact(self.visibility))?;
        st.serialize_field("informativity", &Exact(self.informativity))?;
        st.serialize_field("mean_recall", &Exact(self.mean_recall))?;
        st.serialize_field("installation_rate", &Exact(self.installation_rate))?;
        st.serialize_field("n_runs", &self.n_runs)?;
        st.serialize_field("n_eligible", &self.n_eligible)?;
        st.end()
    }
}

impl Serialize for BenchmarkSummary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let per_tag: BTreeMap<String, Exact> = self
            .per_tag
            .iter()
            .map(|(t, r)| (t.to_string(), Exact(Some(*r))))
            .collect();
        let mut st = s.serialize_struct("BenchmarkSummary", 5)?;
        st.serialize_field("per_repo", &self.per_repo)?;
        st.serialize_field(
            "mean_installation_rate",
            &Exact(self.mean_installation_rate),
        )?;
        st.serialize_field("mean_recall", &Exact(self.mean_recall))?;
        st.serialize_field("per_tag_installation_rate", &per_tag)?;
        st.serialize_field("notice", &self.notice)?;
        st.end()
    }
}

fn cell(r: Option<Rational>) -> String {
    r.map(|r| format!("{:.6}", to_f64(r))).unwrap_or_default()
}

impl BenchmarkSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// One row per repository, decimal values, empty cells for absent metrics.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "repo",
            "visibility",
            "informativity",
            "mean_recall",
            "installation_rate",
            "n_runs",
            "n_eligible",
        ])
        .expect("in-memory write");
        for m in &self.per_repo {
            w.write_record([
                m.repo_id.clone(),
                cell(m.visibility),
                cell(m.informativity),
                cell(m.mean_recall),
                cell(m.installation_rate),
                m.n_runs.to_string(),
                m.n_eligible.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Per-tag mean installation rates as a two-column table.
    pub fn tags_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tag", "mean_installation_rate"])
            .expect("in-memory write");
        for (t, r) in &self.per_tag {
            w.write_record([t.to_string(), cell(Some(*r))])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
