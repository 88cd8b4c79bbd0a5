use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::SystemTime;

use installamatic::navigator::{extract_sections, DocFormat, EntryKind, RepoSnapshot};
use proptest::prelude::*;

fn line() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "# Title",
        "## Install",
        "### Deep",
        "text line",
        "",
        "```",
        "~~~",
        "pip install .",
        "Heading",
        "=======",
        "-------",
        "    indented",
        "#not-a-header",
        "Setext",
        "* bullet",
    ])
}

fn doc() -> impl Strategy<Value = String> {
    prop::collection::vec(line(), 0..40).prop_map(|v| v.join("\n"))
}

fn check_reconstruction(text: &str, format: DocFormat) -> Result<(), TestCaseError> {
    // A trailing newline terminates the last line rather than opening a new one.
    let mut lines: Vec<&str> = if text.is_empty() {
        vec![]
    } else {
        text.split('\n').collect()
    };
    if text.ends_with('\n') {
        lines.pop();
    }
    let sections = extract_sections(text, format);
    prop_assert!(!sections.is_empty());
    let mut next = 0;
    for s in &sections {
        prop_assert_eq!(s.span.start, next, "spans must be contiguous");
        prop_assert!(s.span.end >= s.span.start);
        next = s.span.end;
        let markup = if s.level == 0 { 0..=0 } else { 1..=3 };
        let matches = markup.into_iter().any(|k| {
            s.span.start + k <= s.span.end
                && lines[s.span.start + k..s.span.end].join("\n") == s.body_text
        });
        prop_assert!(
            matches,
            "body of {:?} is not the tail of its span",
            s.header
        );
    }
    prop_assert_eq!(next, lines.len(), "spans must cover the document");
    Ok(())
}

proptest! {
    #[test]
    fn markdown_sections_reconstruct(text in doc()) {
        check_reconstruction(&text, DocFormat::Markdown)?;
    }

    #[test]
    fn rst_sections_reconstruct(text in doc()) {
        check_reconstruction(&text, DocFormat::RestructuredText)?;
    }

    #[test]
    fn parsing_is_deterministic(text in doc()) {
        prop_assert_eq!(extract_sections(&text, DocFormat::Markdown), extract_sections(&text, DocFormat::Markdown));
    }
}

fn tree() -> impl Strategy<Value = BTreeSet<String>> {
    let seg = prop::sample::select(vec!["a", "b", "docs", "src", ".github", "x.md", "setup.py"]);
    prop::collection::btree_set(
        prop::collection::vec(seg, 1..4).prop_map(|v| format!("{}/f.txt", v.join("/"))),
        0..10,
    )
}

fn materialize(root: &Path, files: &BTreeSet<String>) {
    for f in files {
        let p = root.join(f);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, f.as_bytes()).unwrap();
    }
}

/// Every path reachable from the root through directory listings.
fn reachable(snap: &RepoSnapshot) -> BTreeMap<String, EntryKind> {
    let mut out = BTreeMap::new();
    let mut queue = vec![String::new()];
    while let Some(dir) = queue.pop() {
        let listing = snap
            .get_directory_contents(if dir.is_empty() { "." } else { &dir })
            .unwrap();
        for e in listing.entries {
            let path = if dir.is_empty() {
                e.name.clone()
            } else {
                format!("{dir}/{}", e.name)
            };
            if e.kind == EntryKind::Directory {
                queue.push(path.clone());
            }
            out.insert(path, e.kind);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn presence_matches_reachability(files in tree(), probe in "[a-z./]{1,12}") {
        let dir = tempfile::tempdir().unwrap();
        materialize(dir.path(), &files);
        let snap = RepoSnapshot::open(dir.path()).unwrap();
        let seen = reachable(&snap);
        for (p, kind) in &seen {
            prop_assert_eq!(snap.check_presence(p), Some(*kind));
        }
        let listed: BTreeMap<String, EntryKind> = snap.entries().map(|(p, k)| (p.to_string(), k)).collect();
        prop_assert_eq!(&listed, &seen);
        if let Some(kind) = snap.check_presence(&probe) {
            let norm = probe.trim_matches('/').trim_start_matches("./").to_string();
            prop_assert!(seen.get(&norm) == Some(&kind) || norm.is_empty() || norm == ".", "{} not reachable", probe);
        }
    }
}

fn fingerprint(root: &Path) -> BTreeMap<String, (Vec<u8>, SystemTime)> {
    let mut out = BTreeMap::new();
    for e in walkdir::WalkDir::new(root) {
        let e = e.unwrap();
        let md = e.metadata().unwrap();
        let content = if e.file_type().is_file() {
            fs::read(e.path()).unwrap()
        } else {
            Vec::new()
        };
        out.insert(
            e.path().display().to_string(),
            (content, md.modified().unwrap()),
        );
    }
    out
}

#[test]
fn operations_never_write() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    materialize(
        root,
        &["README.md", "docs/install.rst", "src/pkg/__init__.py"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    fs::write(
        root.join("README.md"),
        "# Demo\n## Install\npip install .\n",
    )
    .unwrap();
    fs::write(
        root.join("docs/install.rst"),
        "Install\n=======\n\nUse pip.\n",
    )
    .unwrap();
    fs::create_dir_all(root.join(".git")).unwrap();
    fs::write(root.join(".git/HEAD"), "ref: refs/heads/main\n").unwrap();
    let before = fingerprint(root);

    let snap = RepoSnapshot::open(root).unwrap();
    let first = (
        snap.get_directory_contents(".").unwrap(),
        snap.get_file_contents("README.md").unwrap(),
        snap.inspect_header("docs/install.rst", "Install").unwrap(),
    );
    let _ = snap.get_file_contents("missing.txt");
    let _ = snap.get_directory_contents("../");
    let _ = snap.check_presence(".git/HEAD");
    let second = (
        snap.get_directory_contents(".").unwrap(),
        snap.get_file_contents("README.md").unwrap(),
        snap.inspect_header("docs/install.rst", "Install").unwrap(),
    );
    assert_eq!(first, second);
    assert_eq!(snap.check_presence(".git"), None);
    let reopened = RepoSnapshot::open(root).unwrap();
    assert_eq!(reopened.get_directory_contents(".").unwrap(), first.0);
    assert_eq!(fingerprint(root), before);
}

#[test]
fn snapshot_is_shareable_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("README.md"), "# A\nbody\n").unwrap();
    let snap = RepoSnapshot::open(dir.path()).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| snap.get_file_contents("README.md").unwrap()))
            .collect();
        let views: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(views.windows(2).all(|w| w[0] == w[1]));
    });
}
