//! Read-only repository exploration backing the agent's navigation tools.

mod sections;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use sections::{extract_sections, outline, DocFormat, DocumentSection, LineSpan, OutlineEntry};

/// Default cap on raw file reads.
pub const DEFAULT_READ_CAP: usize = 64 * 1024;

/// Version-control metadata directories never indexed.
const VCS_DIRS: &[&str] = &[".git", ".hg", ".svn", ".bzr", "_darcs", ".jj"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NavError {
    #[error("cannot open repository at {path}: {reason}")]
    Open { path: PathBuf, reason: String },
    #[error("no such path in repository: {0}")]
    NotFound(String),
    #[error("{0} is a directory, not a file")]
    IsDirectory(String),
    #[error("{0} is a file, not a directory")]
    NotDirectory(String),
    #[error("{0} is not a human-readable text file")]
    NotText(String),
    #[error("{path} has no section outline (only .md, .markdown and .rst files do)")]
    NotStructured { path: String },
    #[error("no section named {header:?} in {path}; available sections: {}", available.join(", "))]
    UnknownHeader {
        path: String,
        header: String,
        available: Vec<String>,
    },
    #[error("failed to read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    File,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirEntry {
    pub name: String,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryListing {
    /// Relative path; empty for the repository root.
    pub dir_path: String,
    pub entries: Vec<DirEntry>,
}

impl DirectoryListing {
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return "(empty directory)".to_string();
        }
        self.entries
            .iter()
            .map(|e| match e.kind {
                EntryKind::Directory => format!("{}/", e.name),
                EntryKind::File => e.name.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FileView {
    Raw {
        file_path: String,
        raw_text: String,
        truncated: bool,
    },
    Outline {
        file_path: String,
        format: DocFormat,
        headers: Vec<OutlineEntry>,
    },
}

impl FileView {
    pub fn file_path(&self) -> &str {
        match self {
            FileView::Raw { file_path, .. } | FileView::Outline { file_path, .. } => file_path,
        }
    }

    pub fn render(&self) -> String {
        match self {
            FileView::Raw { raw_text, .. } => raw_text.clone(),
            FileView::Outline {
                file_path, headers, ..
            } => {
                if headers.is_empty() {
                    return format!("{file_path} contains no section headers.");
                }
                let mut out = format!("Section headers of {file_path}:\n");
                for h in headers {
                    let indent = "  ".repeat(h.level.saturating_sub(1) as usize);
                    out.push_str(&format!("{indent}- {}\n", h.title));
                }
                out
            }
        }
    }
}

/// Result of looking up a title: the section with its nested subsections,
/// plus every line at which the same title occurs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderLookup {
    pub section: DocumentSection,
    pub occurrences: Vec<usize>,
}

/// Immutable index of a checked-out repository.
#[derive(Debug, Clone)]
pub struct RepoSnapshot {
    root: PathBuf,
    index: BTreeMap<String, EntryKind>,
    read_cap: usize,
}

/// Normalizes an agent-supplied path to the index's canonical form.
/// Returns `None` for paths escaping the root.
pub fn normalize_rel(path: &str) -> Option<String> {
    let mut parts = Vec::new();
    for part in path.trim().split(['/', '\\']) {
        match part {
            "" | "." => {}
            ".." => return None,
            p => parts.push(p),
        }
    }
    Some(parts.join("/"))
}

impl RepoSnapshot {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, NavError> {
        let root = path.as_ref();
        let open_err = |reason: String| NavError::Open {
            path: root.to_path_buf(),
            reason,
        };
        let meta = fs::metadata(root).map_err(|e| open_err(e.to_string()))?;
        if !meta.is_dir() {
            return Err(open_err("not a directory".into()));
        }
        let mut index = BTreeMap::new();
        let walker = WalkDir::new(root)
            .min_depth(1)
            .follow_links(false)
            .into_iter()
            .filter_entry(|e| !is_vcs_entry(e.file_name().to_str().unwrap_or_default()));
        for entry in walker {
            let entry = entry.map_err(|e| open_err(e.to_string()))?;
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths under root");
            let Some(rel) = rel.to_str().and_then(normalize_rel) else {
                continue;
            };
            let ft = entry.file_type();
            let kind = if ft.is_dir() {
                EntryKind::Directory
            } else if ft.is_file() {
                EntryKind::File
            } else if ft.is_symlink() {
                // Symlinks are indexed by what they point to, when that
                // target stays inside the repository.
                match fs::metadata(entry.path()) {
                    Ok(m) if m.is_file() => EntryKind::File,
                    _ => continue,
                }
            } else {
                continue;
            };
            index.insert(rel, kind);
        }
        Ok(RepoSnapshot {
            root: root.to_path_buf(),
            index,
            read_cap: DEFAULT_READ_CAP,
        })
    }

    pub fn with_read_cap(mut self, cap: usize) -> Self {
        self.read_cap = cap;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, EntryKind)> {
        self.index.iter().map(|(p, k)| (p.as_str(), *k))
    }

    pub fn kind_of(&self, path: &str) -> Option<EntryKind> {
        let rel = normalize_rel(path)?;
        if rel.is_empty() {
            return Some(EntryKind::Directory);
        }
        self.index.get(&rel).copied()
    }

    pub fn get_directory_contents(&self, dir: &str) -> Result<DirectoryListing, NavError> {
        let rel = normalize_rel(dir).ok_or_else(|| NavError::NotFound(dir.to_string()))?;
        match self.kind_of(&rel) {
            None => return Err(NavError::NotFound(dir.to_string())),
            Some(EntryKind::File) => return Err(NavError::NotDirectory(rel)),
            Some(EntryKind::Directory) => {}
        }
        let prefix = if rel.is_empty() {
            String::new()
        } else {
            format!("{rel}/")
        };
        let entries = self
            .index
            .range(prefix.clone()..)
            .take_while(|(p, _)| p.starts_with(&prefix))
            .filter(|(p, _)| !p[prefix.len()..].contains('/'))
            .map(|(p, k)| DirEntry {
                name: p[prefix.len()..].to_string(),
                kind: *k,
            })
            .collect();
        Ok(DirectoryListing {
            dir_path: rel,
            entries,
        })
    }

    fn require_file(&self, file: &str) -> Result<String, NavError> {
        let rel = normalize_rel(file).ok_or_else(|| NavError::NotFound(file.to_string()))?;
        match self.kind_of(&rel) {
            Some(EntryKind::File) => Ok(rel),
            Some(EntryKind::Directory) => Err(NavError::IsDirectory(rel)),
            None => Err(NavError::NotFound(file.to_string())),
        }
    }

    /// Full text of a file, without the read cap.
    pub fn read_text(&self, file: &str) -> Result<String, NavError> {
        let rel = self.require_file(file)?;
        let bytes = fs::read(self.root.join(&rel)).map_err(|e| NavError::Io {
            path: rel.clone(),
            reason: e.to_string(),
        })?;
        let sniff = &bytes[..bytes.len().min(8192)];
        if sniff.contains(&0) {
            return Err(NavError::NotText(rel));
        }
        String::from_utf8(bytes).map_err(|_| NavError::NotText(rel))
    }

    pub fn get_file_contents(&self, file: &str) -> Result<FileView, NavError> {
        let text = self.read_text(file)?;
        let file_path = normalize_rel(file).unwrap_or_default();
        if let Some(format) = DocFormat::from_path(&file_path) {
            let headers = outline(&extract_sections(&text, format));
            return Ok(FileView::Outline {
                file_path,
                format,
                headers,
            });
        }
        let (raw_text, truncated) = truncate_text(text, self.read_cap);
        Ok(FileView::Raw {
            file_path,
            raw_text,
            truncated,
        })
    }

    pub fn sections(&self, file: &str) -> Result<Vec<DocumentSection>, NavError> {
        let text = self.read_text(file)?;
        let rel = normalize_rel(file).unwrap_or_default();
        let format = DocFormat::from_path(&rel).ok_or(NavError::NotStructured { path: rel })?;
        Ok(extract_sections(&text, format))
    }

    /// Returns the first section titled `header` together with its
    /// subsections, i.e. everything up to the next title of equal or higher
    /// level.
    pub fn inspect_header(&self, file: &str, header: &str) -> Result<HeaderLookup, NavError> {
        let sections = self.sections(file)?;
        let wanted = header.trim().trim_start_matches('#').trim();
        let mut matches: Vec<usize> = sections
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_preamble() && s.header == wanted)
            .map(|(i, _)| i)
            .collect();
        if matches.is_empty() {
            matches = sections
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_preamble() && s.header.eq_ignore_ascii_case(wanted))
                .map(|(i, _)| i)
                .collect();
        }
        let Some(&first) = matches.first() else {
            return Err(NavError::UnknownHeader {
                path: normalize_rel(file).unwrap_or_default(),
                header: header.to_string(),
                available: outline(&sections).into_iter().map(|o| o.title).collect(),
            });
        };
        let occurrences = matches.iter().map(|&i| sections[i].span.start).collect();
        Ok(HeaderLookup {
            section: nest(&sections, first),
            occurrences,
        })
    }

    pub fn check_presence(&self, path: &str) -> Option<EntryKind> {
        self.kind_of(path)
    }
}

fn is_vcs_entry(name: &str) -> bool {
    VCS_DIRS.contains(&name)
}

fn nest(sections: &[DocumentSection], index: usize) -> DocumentSection {
    let head = &sections[index];
    let mut body = head.body_text.clone();
    let mut end = head.span.end;
    for next in &sections[index + 1..] {
        if next.level <= head.level {
            break;
        }
        // Reinsert the nested title so the agent can see the structure.
        body.push('\n');
        body.push_str(&format!(
            "{} {}",
            "#".repeat(next.level as usize),
            next.header
        ));
        body.push('\n');
        body.push_str(&next.body_text);
        end = next.span.end;
    }
    DocumentSection {
        header: head.header.clone(),
        level: head.level,
        body_text: body,
        span: LineSpan::new(head.span.start, end),
    }
}

/// Truncates to at most `cap` bytes on a char boundary, appending a marker.
pub fn truncate_text(text: String, cap: usize) -> (String, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut cut = cap;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let total = text.len();
    let mut out = text[..cut].to_string();
    out.push_str(&format!(
        "\n[... truncated: showing {cut} of {total} bytes ...]"
    ));
    (out, true)
}
