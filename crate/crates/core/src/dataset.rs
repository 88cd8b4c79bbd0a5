//! Benchmark manifest: repository entries, the installation tag vocabulary,
//! ground-truth Dockerfiles and install-relevant documentation annotations.
//!
//! A manifest is a TOML file with a `schema_version` key and one `[[entry]]`
//! table per repository:
//!
//! | key            | required | meaning                                                   |
//! |----------------|----------|-----------------------------------------------------------|
//! | `name`         | yes      | unique repository name                                    |
//! | `url`          | yes      | clone URL, or a path relative to the manifest's directory |
//! | `star_bucket`  | yes      | `1k-5k`, `5k-10k`, `10k-20k` or `20k+`                    |
//! | `commit`       | no       | full 40-hex commit id the entry is pinned to              |
//! | `tags`         | no       | installation tags; must include a testing tag             |
//! | `ground_truth` | no       | Dockerfile path relative to the manifest's directory      |
//! | `relevant_docs`| no       | install-relevant documentation paths in the repository    |
//!
//! An entry with a commit, tags and ground truth is *annotated*; entries
//! carrying only name, URL and bucket are accepted so the repository list
//! can ship ahead of its annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::navigator::normalize_rel;
use crate::oracle::{classify, Outcome};
use crate::sandbox::{image_tag, BuildLog, BuildRequest, Sandbox, SandboxError};

pub const SCHEMA_VERSION: &str = "1";

/// The repository list of the benchmark, without annotations.
pub const BUILTIN_MANIFEST: &str = include_str!("../data/manifest.toml");

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(s.to_string()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(|bad| serde::de::Error::custom(format!("unknown {} \"{bad}\"", stringify!($name))))
            }
        }
    };
}

closed_enum! {
    /// Installation and testing method labels.
    InstallTag {
        Requirements => "requirements",
        RequirementsExtra => "requirements-extra",
        PipExtra => "pip-extra",
        Poetry => "poetry",
        PoetryExtra => "poetry-extra",
        MakeInstall => "make-install",
        InstallSelf => "install-self",
        InstallPytest => "install-pytest",
        InstallTox => "install-tox",
        InstallOther => "install-other",
        Pytest => "pytest",
        PytestExtra => "pytest-extra",
        Tox => "tox",
        Unittest => "unittest",
        MakeTest => "make-test",
        TestOther => "test-other",
        BashExtra => "bash-extra",
    }
}

impl InstallTag {
    pub fn is_testing(self) -> bool {
        matches!(
            self,
            InstallTag::Pytest
                | InstallTag::PytestExtra
                | InstallTag::Tox
                | InstallTag::Unittest
                | InstallTag::MakeTest
                | InstallTag::TestOther
        )
    }

    /// Tags naming something beyond the plain method (`*-extra`).
    pub fn is_extra(self) -> bool {
        self.as_str().ends_with("-extra")
    }
}

closed_enum! {
    /// GitHub star range the repository was sampled from.
    StarBucket {
        From1kTo5k => "1k-5k",
        From5kTo10k => "5k-10k",
        From10kTo20k => "10k-20k",
        Over20k => "20k+",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// Path as written in the manifest.
    pub path: String,
    pub dockerfile: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub name: String,
    pub url: String,
    pub star_bucket: StarBucket,
    pub commit: Option<String>,
    pub tags: BTreeSet<InstallTag>,
    pub ground_truth: Option<GroundTruth>,
    pub relevant_docs: Vec<String>,
    /// `url` resolved against the manifest directory when it is a local path.
    pub source: String,
}

impl DatasetEntry {
    pub fn is_annotated(&self) -> bool {
        self.commit.is_some() && !self.tags.is_empty() && self.ground_truth.is_some()
    }

    pub fn ground_truth_dockerfile(&self) -> Option<&str> {
        self.ground_truth.as_ref().map(|g| g.dockerfile.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema_version: String,
    pub entries: Vec<DatasetEntry>,
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub entry: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "entry \"{}\", field {}: {}",
            self.entry, self.field, self.message
        )
    }
}

fn join_errors(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest is not valid TOML: {0}")]
    Syntax(String),
    #[error("manifest schema violation: {}", join_errors(.0))]
    Schema(Vec<FieldError>),
    #[error("duplicate entry name \"{0}\"")]
    DuplicateEntry(String),
    #[error("entry \"{0}\" is not pinned to a commit")]
    NotPinned(String),
    #[error("entry \"{0}\" has no ground-truth Dockerfile")]
    NoGroundTruth(String),
    #[error("cloning {url} failed: {detail}")]
    CloneError { url: String, detail: String },
    #[error("commit {commit} not found in {url}")]
    CommitNotFound { url: String, commit: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    schema_version: String,
    #[serde(default, rename = "entry")]
    entries: Vec<RawEntry>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default)]
    name: String,
    #[serde(default)]
    url: String,
    #[serde(default)]
    star_bucket: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    commit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relevant_docs: Vec<String>,
}

pub fn is_full_commit(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn is_local(url: &str) -> bool {
    !url.contains("://") && !url.contains('@')
}

pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base)
}

/// The shipped repository list.
pub fn builtin_manifest() -> Dataset {
    parse_manifest(BUILTIN_MANIFEST, Path::new(".")).expect("bundled manifest is valid")
}

/// Parses and validates manifest text; relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Dataset, DatasetError> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| DatasetError::Syntax(e.to_string()))?;
    let mut errors = Vec::new();
    if raw.schema_version != SCHEMA_VERSION {
        errors.push(FieldError {
            entry: "(manifest)".into(),
            field: "schema_version".into(),
            message: format!(
                "unsupported version \"{}\" (expected \"{SCHEMA_VERSION}\")",
                raw.schema_version
            ),
        });
    }
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (i, r) in raw.entries.into_iter().enumerate() {
        let label = if r.name.is_empty() {
            format!("#{i}")
        } else {
            r.name.clone()
        };
        let mut err = |field: &str, message: String| {
            errors.push(FieldError {
                entry: label.clone(),
                field: field.into(),
                message,
            })
        };
        if r.name.trim().is_empty() {
            err("name", "missing".into());
        } else if !seen.insert(r.name.clone()) {
            return Err(DatasetError::DuplicateEntry(r.name));
        }
        if r.url.trim().is_empty() {
            err("url", "missing".into());
        }
        let bucket = match r.star_bucket.parse::<StarBucket>() {
            Ok(b) => Some(b),
            Err(bad) => {
                err("star_bucket", format!("unknown star bucket \"{bad}\""));
                None
            }
        };
        if let Some(c) = &r.commit {
            if !is_full_commit(c) {
                err(
                    "commit",
                    format!("\"{c}\" is not a full 40-character hex commit id"),
                );
            }
        }
        let mut tags = BTreeSet::new();
        for t in &r.tags {
            match t.parse::<InstallTag>() {
                Ok(tag) => {
                    tags.insert(tag);
                }
                Err(bad) => err("tags", format!("unknown tag \"{bad}\"")),
            }
        }
        if !r.tags.is_empty() && !tags.iter().any(|t| t.is_testing()) {
            err(
                "tags",
                "no testing tag (pytest, pytest-extra, tox, unittest, make-test, test-other)"
                    .into(),
            );
        }
        if r.commit.is_some() && r.tags.is_empty() {
            err("tags", "a pinned entry needs at least one tag".into());
        }
        let mut docs = Vec::new();
        for d in &r.relevant_docs {
            match normalize_rel(d) {
                Some(n) if !n.is_empty() => docs.push(n),
                _ => err(
                    "relevant_docs",
                    format!("\"{d}\" is not a path inside the repository"),
                ),
            }
        }
        let ground_truth = match &r.ground_truth {
            Some(p) => match fs::read_to_string(base_dir.join(p)) {
                Ok(text) if !text.trim().is_empty() => Some(GroundTruth {
                    path: p.clone(),
                    dockerfile: text,
                }),
                Ok(_) => {
                    err("ground_truth", format!("{p} is empty"));
                    None
                }
                Err(e) => {
                    err("ground_truth", format!("cannot read {p}: {e}"));
                    None
                }
            },
            None => None,
        };
        let source = if is_local(&r.url) && Path::new(&r.url).is_relative() {
            base_dir.join(&r.url).to_string_lossy().into_owned()
        } else {
            r.url.clone()
        };
        if let Some(star_bucket) = bucket {
            entries.push(DatasetEntry {
                name: r.name,
                url: r.url,
                star_bucket,
                commit: r.commit.map(|c| c.to_ascii_lowercase()),
                tags,
                ground_truth,
                relevant_docs: docs,
                source,
            });
        }
    }
    if !errors.is_empty() {
        return Err(DatasetError::Schema(errors));
    }
    Ok(Dataset {
        schema_version: raw.schema_version,
        entries,
        base_dir: base_dir.to_path_buf(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn bucket_counts(&self) -> BTreeMap<StarBucket, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.star_bucket).or_insert(0) += 1;
        }
        counts
    }

    /// Entries whose name matches `selector`: exact name, `*` for all, or a
    /// comma-separated list.
    pub fn select(&self, selector: &str) -> Vec<&DatasetEntry> {
        let wanted: BTreeSet<&str> = selector
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        self.entries
            .iter()
            .filter(|e| wanted.contains("*") || wanted.contains(e.name.as_str()))
            .collect()
    }

    /// Manifest text. Ground-truth Dockerfiles stay in their sibling files.
    pub fn to_toml(&self) -> String {
        let raw = RawManifest {
            schema_version: self.schema_version.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| RawEntry {
                    name: e.name.clone(),
                    url: e.url.clone(),
                    star_bucket: e.star_bucket.to_string(),
                    commit: e.commit.clone(),
                    tags: e.tags.iter().map(ToString::to_string).collect(),
                    ground_truth: e.ground_truth.as_ref().map(|g| g.path.clone()),
                    relevant_docs: e.relevant_docs.clone(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("manifest serializes")
    }

    /// Writes the manifest and every ground-truth file under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for e in &self.entries {
            if let Some(g) = &e.ground_truth {
                let target = dir.join(&g.path);
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent).map_err(io(parent))?;
                }
                fs::write(&target, &g.dockerfile).map_err(io(&target))?;
            }
        }
        let path = dir.join("manifest.toml");
        fs::write(&path, self.to_toml()).map_err(io(&path))?;
        Ok(path)
    }
}

fn git(dir: Option<&Path>, args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new("git");
    if let Some(d) = dir {
        cmd.arg("-C").arg(d);
    }
    let out = cmd
        .args(args)
        .env("GIT_TERMINAL_PROMPT", "0")
        .output()
        .map_err(|e| format!("cannot run git: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

/// Checkout location for an entry: `<workdir>/cache/<name>/<commit>/`.
pub fn checkout_path(entry: &DatasetEntry, workdir: &Path) -> Option<PathBuf> {
    entry
        .commit
        .as_ref()
        .map(|c| workdir.join("cache").join(&entry.name).join(c))
}

/// Clones the entry at its pinned commit (detached). An existing checkout at
/// that commit is reused without touching the network.
pub fn checkout(entry: &DatasetEntry, workdir: &Path) -> Result<PathBuf, DatasetError> {
    let commit = entry
        .commit
        .clone()
        .ok_or_else(|| DatasetError::NotPinned(entry.name.clone()))?;
    let dest = checkout_path(entry, workdir).expect("pinned");
    if dest.join(".git").exists() {
        if git(Some(&dest), &["rev-parse", "HEAD"]).as_deref() == Ok(commit.as_str()) {
            return Ok(dest);
        }
        let _ = fs::remove_dir_all(&dest);
    } else if dest.exists() {
        let _ = fs::remove_dir_all(&dest);
    }
    let parent = dest.parent().expect("cache dir has a parent");
    fs::create_dir_all(parent).map_err(|source| DatasetError::Io {
        path: parent.to_path_buf(),
        source,
    })?;
    let dest_str = dest.to_string_lossy().into_owned();
    git(
        None,
        &[
            "clone",
            "--quiet",
            "--no-checkout",
            &entry.source,
            &dest_str,
        ],
    )
    .map_err(|detail| {
        let _ = fs::remove_dir_all(&dest);
        DatasetError::CloneError {
            url: entry.url.clone(),
            detail,
        }
    })?;
    let object = format!("{commit}^{{commit}}");
    if git(Some(&dest), &["cat-file", "-e", &object]).is_err()
        && git(Some(&dest), &["fetch", "--quiet", "origin", &commit]).is_err()
    {
        let _ = fs::remove_dir_all(&dest);
        return Err(DatasetError::CommitNotFound {
            url: entry.url.clone(),
            commit,
        });
    }
    git(
        Some(&dest),
        &[
            "-c",
            "advice.detachedHead=false",
            "checkout",
            "--quiet",
            "--detach",
            &commit,
        ],
    )
    .map_err(|_| {
        let _ = fs::remove_dir_all(&dest);
        DatasetError::CommitNotFound {
            url: entry.url.clone(),
            commit: commit.clone(),
        }
    })?;
    Ok(dest)
}

/// Turns a plain directory into a single-commit git repository at `dest`
/// with a fixed identity and timestamp, so the commit id depends only on
/// the file contents. Returns the commit id.
pub fn snapshot_repo(src: &Path, dest: &Path) -> Result<String, DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(|e| DatasetError::Io {
            path: src.to_path_buf(),
            source: e.into(),
        })?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .expect("walk stays under src");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(io(&target))?;
        } else {
            fs::copy(entry.path(), &target).map_err(io(&target))?;
        }
    }
    let fail = |detail: String| DatasetError::CloneError {
        url: src.display().to_string(),
        detail,
    };
    let fixed = [
        ("GIT_AUTHOR_NAME", "fixture"),
        ("GIT_AUTHOR_EMAIL", "fixture@example.invalid"),
        ("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z"),
        ("GIT_COMMITTER_NAME", "fixture"),
        ("GIT_COMMITTER_EMAIL", "fixture@example.invalid"),
        ("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z"),
    ];
    for args in [
        vec!["init", "--quiet"],
        vec!["-c", "core.autocrlf=false", "add", "--all"],
        vec![
            "-c",
            "commit.gpgsign=false",
            "commit",
            "--quiet",
            "--no-verify",
            "-m",
            "snapshot",
        ],
    ] {
        let out = Command::new("git")
            .arg("-C")
            .arg(dest)
            .args(&args)
            .envs(fixed)
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
    }
    git(Some(dest), &["rev-parse", "HEAD"]).map_err(fail)
}

/// Result of building an entry's ground-truth Dockerfile.
#[derive(Debug, Clone)]
pub struct GroundTruthCheck {
    pub outcome: Outcome,
    pub log: BuildLog,
}

impl GroundTruthCheck {
    /// A ground truth that no longer installs and tests its repository.
    pub fn is_rot(&self) -> bool {
        !self.outcome.kind.is_success()
    }
}

/// Builds the entry's exemplar Dockerfile against `repo_path` and classifies the log.
pub fn validate_ground_truth(
    entry: &DatasetEntry,
    repo_path: &Path,
    sandbox: &Sandbox,
    time_limit: Duration,
) -> Result<GroundTruthCheck, DatasetError> {
    let dockerfile = entry
        .ground_truth_dockerfile()
        .ok_or_else(|| DatasetError::NoGroundTruth(entry.name.clone()))?;
    let tag = image_tag(&format!("{}-gt", entry.name), 0, 0);
    let req = BuildRequest::new(repo_path, dockerfile, tag.clone()).with_time_limit(time_limit);
    let log = sandbox.build_and_capture(&req)?;
    sandbox.cleanup(&tag);
    Ok(GroundTruthCheck {
        outcome: classify(&log),
        log,
    })
}
