//! Section extraction for Markdown and reStructuredText documents.
//!
//! Documents are split into a flat list of sections. The first section is
//! always the preamble (empty header, level 0) holding whatever precedes the
//! first title. Every other section starts at a title and runs until the next
//! title of any level; callers that want nested content (a section plus its
//! subsections) combine consecutive sections by level.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Markup dialects that yield an outline instead of raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Markdown,
    RestructuredText,
}

impl DocFormat {
    /// Recognizes structured documents by extension (`.md`, `.markdown`, `.rst`).
    pub fn from_path(path: &str) -> Option<Self> {
        let ext = path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase())?;
        if path.ends_with('/') {
            return None;
        }
        match ext.as_str() {
            "md" | "markdown" => Some(DocFormat::Markdown),
            "rst" => Some(DocFormat::RestructuredText),
            _ => None,
        }
    }
}

/// Half-open range of zero-based line numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        LineSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSection {
    /// Title text; empty for the preamble.
    pub header: String,
    /// 0 for the preamble, 1 for top-level titles.
    pub level: u32,
    /// Lines after the title markup up to the next title, joined with `\n`.
    pub body_text: String,
    /// Lines covered by the section including its title markup.
    pub span: LineSpan,
}

impl DocumentSection {
    pub fn is_preamble(&self) -> bool {
        self.level == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineEntry {
    pub title: String,
    pub level: u32,
}

/// A title found in the source: its text, level and the lines the title
/// markup occupies (one line for ATX, two for setext/underline, three for
/// overlined rst titles).
#[derive(Debug, Clone)]
struct Heading {
    title: String,
    level: u32,
    markup: LineSpan,
}

pub fn extract_sections(text: &str, format: DocFormat) -> Vec<DocumentSection> {
    let lines = split_lines(text);
    let headings = match format {
        DocFormat::Markdown => markdown_headings(&lines),
        DocFormat::RestructuredText => rst_headings(&lines),
    };
    assemble(&lines, &headings)
}

/// Title list in document order, preamble excluded.
pub fn outline(sections: &[DocumentSection]) -> Vec<OutlineEntry> {
    sections
        .iter()
        .filter(|s| !s.is_preamble())
        .map(|s| OutlineEntry {
            title: s.header.clone(),
            level: s.level,
        })
        .collect()
}

fn split_lines(text: &str) -> Vec<&str> {
    // `str::lines` drops a trailing empty line, which would break
    // reconstruction of documents ending in "\n\n".
    if text.is_empty() {
        return Vec::new();
    }
    let mut lines: Vec<&str> = text.split('\n').collect();
    if text.ends_with('\n') {
        lines.pop();
    }
    lines
        .into_iter()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect()
}

fn assemble(lines: &[&str], headings: &[Heading]) -> Vec<DocumentSection> {
    let mut sections = Vec::with_capacity(headings.len() + 1);
    let first = headings.first().map_or(lines.len(), |h| h.markup.start);
    sections.push(DocumentSection {
        header: String::new(),
        level: 0,
        body_text: lines[..first].join("\n"),
        span: LineSpan::new(0, first),
    });
    for (i, h) in headings.iter().enumerate() {
        let end = headings
            .get(i + 1)
            .map_or(lines.len(), |next| next.markup.start);
        sections.push(DocumentSection {
            header: h.title.clone(),
            level: h.level,
            body_text: lines[h.markup.end..end].join("\n"),
            span: LineSpan::new(h.markup.start, end),
        });
    }
    sections
}

fn fence_marker(line: &str) -> Option<(char, usize)> {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let ch = trimmed.chars().next()?;
    if ch != '`' && ch != '~' {
        return None;
    }
    let run = trimmed.chars().take_while(|&c| c == ch).count();
    (run >= 3).then_some((ch, run))
}

fn atx_heading(line: &str) -> Option<(u32, String)> {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let hashes = trimmed.chars().take_while(|&c| c == '#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    let rest = &trimmed[hashes..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    // Optional closing sequence of #'s.
    let mut title = rest.trim();
    let stripped = title.trim_end_matches('#');
    if stripped.is_empty() || stripped.ends_with([' ', '\t']) {
        title = stripped.trim_end();
    }
    Some((hashes as u32, title.to_string()))
}

fn setext_level(line: &str) -> Option<u32> {
    let trimmed = line.trim();
    if line.len() - line.trim_start().len() > 3 || trimmed.is_empty() {
        return None;
    }
    if trimmed.chars().all(|c| c == '=') {
        Some(1)
    } else if trimmed.chars().all(|c| c == '-') {
        Some(2)
    } else {
        None
    }
}

fn markdown_headings(lines: &[&str]) -> Vec<Heading> {
    let mut out = Vec::new();
    let mut fence: Option<(char, usize)> = None;
    // Whether the previous line is plain paragraph text eligible to become a
    // setext title.
    let mut paragraph_line: Option<usize> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some((ch, run)) = fence {
            if let Some((c, r)) = fence_marker(line) {
                if c == ch && r >= run && line.trim()[r..].trim().is_empty() {
                    fence = None;
                }
            }
            i += 1;
            continue;
        }
        if let Some(marker) = fence_marker(line) {
            fence = Some(marker);
            paragraph_line = None;
            i += 1;
            continue;
        }
        if let Some((level, title)) = atx_heading(line) {
            out.push(Heading {
                title,
                level,
                markup: LineSpan::new(i, i + 1),
            });
            paragraph_line = None;
            i += 1;
            continue;
        }
        if let (Some(level), Some(p)) = (setext_level(line), paragraph_line) {
            // Only a single-line paragraph becomes a title; longer paragraphs
            // would need multi-line titles, which outlines don't need.
            if p + 1 == i && (p == 0 || lines[p - 1].trim().is_empty() || is_heading_end(&out, p)) {
                out.push(Heading {
                    title: lines[p].trim().to_string(),
                    level,
                    markup: LineSpan::new(p, i + 1),
                });
                paragraph_line = None;
                i += 1;
                continue;
            }
        }
        let indented_code = line.starts_with("    ") || line.starts_with('\t');
        paragraph_line = if line.trim().is_empty() || indented_code || is_list_or_quote(line) {
            None
        } else {
            Some(i)
        };
        i += 1;
    }
    out
}

fn is_heading_end(out: &[Heading], line: usize) -> bool {
    out.last().is_some_and(|h| h.markup.end == line)
}

fn is_list_or_quote(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('>') || t.starts_with("- ") || t.starts_with("* ") || t.starts_with("+ ")
}

fn is_rst_adornment(line: &str) -> Option<char> {
    let ch = line.chars().next()?;
    if !ch.is_ascii_punctuation() || line.trim_end().len() < 2 {
        return None;
    }
    line.trim_end().chars().all(|c| c == ch).then_some(ch)
}

fn rst_headings(lines: &[&str]) -> Vec<Heading> {
    let mut out = Vec::new();
    let mut styles: HashMap<(char, bool), u32> = HashMap::new();
    let mut level_for = |style: (char, bool)| -> u32 {
        let next = styles.len() as u32 + 1;
        *styles.entry(style).or_insert(next)
    };
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        // Overline + title + underline.
        if let Some(ch) = is_rst_adornment(line) {
            if i + 2 < lines.len() {
                let title = lines[i + 1];
                let under = lines[i + 2];
                if is_rst_adornment(under) == Some(ch)
                    && !title.trim().is_empty()
                    && is_rst_adornment(title).is_none()
                    && line.trim_end().len() >= title.trim_end().len()
                {
                    out.push(Heading {
                        title: title.trim().to_string(),
                        level: level_for((ch, true)),
                        markup: LineSpan::new(i, i + 3),
                    });
                    i += 3;
                    continue;
                }
            }
        }
        // Title + underline. Titles are unindented and preceded by a blank
        // line or the start of the document.
        if i + 1 < lines.len()
            && !line.trim().is_empty()
            && !line.starts_with([' ', '\t'])
            && is_rst_adornment(line).is_none()
            && (i == 0
                || lines[i - 1].trim().is_empty()
                || out.last().is_some_and(|h: &Heading| h.markup.end == i))
        {
            if let Some(ch) = is_rst_adornment(lines[i + 1]) {
                if lines[i + 1].trim_end().chars().count() >= line.trim_end().chars().count() {
                    out.push(Heading {
                        title: line.trim().to_string(),
                        level: level_for((ch, false)),
                        markup: LineSpan::new(i, i + 2),
                    });
                    i += 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn titles(sections: &[DocumentSection]) -> Vec<(&str, u32)> {
        sections
            .iter()
            .skip(1)
            .map(|s| (s.header.as_str(), s.level))
            .collect()
    }

    #[test]
    fn empty_document_is_single_preamble() {
        let sections = extract_sections("", DocFormat::Markdown);
        assert_eq!(sections.len(), 1);
        assert_eq!(sections[0].header, "");
        assert_eq!(sections[0].body_text, "");
        assert_eq!(sections[0].span, LineSpan::new(0, 0));
    }

    #[test]
    fn two_atx_headers_have_hand_computed_spans() {
        let text = "intro\n# Install\npip install .\n\n# Test\npytest\n";
        let sections = extract_sections(text, DocFormat::Markdown);
        assert_eq!(titles(&sections), vec![("Install", 1), ("Test", 1)]);
        assert_eq!(sections[0].span, LineSpan::new(0, 1));
        assert_eq!(sections[1].span, LineSpan::new(1, 4));
        assert_eq!(sections[1].body_text, "pip install .\n");
        assert_eq!(sections[2].span, LineSpan::new(4, 6));
        assert_eq!(sections[2].body_text, "pytest");
    }

    #[test]
    fn fenced_hash_lines_are_not_headers() {
        let text = "# Usage\n```bash\n# not a header\npip install x\n```\n~~~\n## nor this\n~~~\n## Real\n";
        let sections = extract_sections(text, DocFormat::Markdown);
        assert_eq!(titles(&sections), vec![("Usage", 1), ("Real", 2)]);
        assert!(sections[1].body_text.contains("# not a header"));
    }

    #[test]
    fn setext_and_closing_hashes() {
        let text = "Project\n=======\n\nSetup\n-----\nrun it\n\n### Notes ###\n";
        let sections = extract_sections(text, DocFormat::Markdown);
        assert_eq!(
            titles(&sections),
            vec![("Project", 1), ("Setup", 2), ("Notes", 3)]
        );
    }

    #[test]
    fn thematic_break_after_blank_is_not_a_title() {
        let text = "para one\ncontinued\n---\n\n---\n";
        let sections = extract_sections(text, DocFormat::Markdown);
        assert_eq!(sections.len(), 1);
    }

    #[test]
    fn hash_without_space_is_text() {
        let sections = extract_sections("#hashtag\n#!/bin/sh\n", DocFormat::Markdown);
        assert_eq!(sections.len(), 1);
    }

    #[test]
    fn rst_overlined_and_underlined_titles() {
        let text = "=========\n Project\n=========\n\nInstallation\n------------\n\nRun ``pip install .``\n\nTesting\n-------\n\nUse tox.\n";
        let sections = extract_sections(text, DocFormat::RestructuredText);
        assert_eq!(
            titles(&sections),
            vec![("Project", 1), ("Installation", 2), ("Testing", 2)]
        );
        assert!(sections[2].body_text.contains("pip install ."));
    }

    #[test]
    fn rst_short_underline_is_not_a_title() {
        let text = "Installation\n---\n";
        let sections = extract_sections(text, DocFormat::RestructuredText);
        assert_eq!(sections.len(), 1);
    }

    #[test]
    fn rst_indented_literal_not_title() {
        let text = "Intro::\n\n    code\n    ====\n";
        assert_eq!(extract_sections(text, DocFormat::RestructuredText).len(), 1);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(DocFormat::from_path("README.md"), Some(DocFormat::Markdown));
        assert_eq!(
            DocFormat::from_path("docs/x.MARKDOWN"),
            Some(DocFormat::Markdown)
        );
        assert_eq!(
            DocFormat::from_path("docs/index.rst"),
            Some(DocFormat::RestructuredText)
        );
        assert_eq!(DocFormat::from_path("setup.py"), None);
        assert_eq!(DocFormat::from_path("Makefile"), None);
    }
}
