#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use installamatic::agent::{
    FINISHED_SEARCH, GET_FILE_CONTENTS, INSPECT_HEADER, SUBMIT_DOCUMENTATION, SUBMIT_SUMMARY,
};
use installamatic::dataset::{load_manifest, snapshot_repo, Dataset};
use installamatic::llm::ScriptBuilder;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Copies the fixture manifest and ground truths into `dir` and creates the
/// pinned git mirrors next to them.
pub fn fixture_dataset(dir: &Path) -> Dataset {
    let src = fixtures();
    fs::copy(src.join("manifest.toml"), dir.join("manifest.toml")).unwrap();
    fs::create_dir_all(dir.join("ground_truth")).unwrap();
    for f in fs::read_dir(src.join("ground_truth")).unwrap() {
        let f = f.unwrap();
        fs::copy(f.path(), dir.join("ground_truth").join(f.file_name())).unwrap();
    }
    for name in ["calc", "docsy"] {
        let dest = dir.join("mirrors").join(name);
        fs::create_dir_all(&dest).unwrap();
        snapshot_repo(&src.join("repos").join(name), &dest).unwrap();
    }
    load_manifest(&dir.join("manifest.toml")).unwrap()
}

/// Plain copy of a fixture repository.
pub fn fixture_repo(name: &str, dest: &Path) -> PathBuf {
    let src = fixtures().join("repos").join(name);
    let out = dest.join(name);
    for entry in walk(&src) {
        let rel = entry.strip_prefix(&src).unwrap();
        let target = out.join(rel);
        if entry.is_dir() {
            fs::create_dir_all(&target).unwrap();
        } else {
            fs::create_dir_all(target.parent().unwrap()).unwrap();
            fs::copy(&entry, &target).unwrap();
        }
    }
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = vec![dir.to_path_buf()];
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for e in entries {
        if e.is_dir() {
            out.extend(walk(&e));
        } else {
            out.push(e);
        }
    }
    out
}

pub const CALC_DOCKERFILE: &str = "FROM python:3.11-slim\nENV PIP_DISABLE_PIP_VERSION_CHECK=1\nWORKDIR /app\nCOPY . .\nRUN pip install -r requirements.txt\nRUN python3 -m unittest discover -s tests -v\n";

/// Installs from requirements but runs a test module that does not exist.
pub const CALC_BROKEN: &str = "FROM python:3.11-slim\nWORKDIR /app\nCOPY . .\nRUN pip install -r requirements.txt\nRUN python3 -m unittest tests.test_calculator\n";

/// Gathering that records README.md, then a summary.
pub fn gather_and_summarize() -> ScriptBuilder {
    ScriptBuilder::new()
        .round(
            "Start with the README.",
            GET_FILE_CONTENTS,
            &[("file", "README.md")],
        )
        .round(
            "It documents installation.",
            SUBMIT_DOCUMENTATION,
            &[("file", "README.md")],
        )
        .round("Nothing else is needed.", FINISHED_SEARCH, &[])
        .round(
            "Read the install section.",
            INSPECT_HEADER,
            &[("file", "README.md"), ("header", "Installation")],
        )
        .round(
            "Summarize.",
            SUBMIT_SUMMARY,
            &[(
                "summary",
                "pip install -r requirements.txt, then python3 -m unittest discover -s tests -v",
            )],
        )
}

/// One repair: look at a file, explain, then emit `dockerfile`.
pub fn repair(script: ScriptBuilder, dockerfile: &str) -> ScriptBuilder {
    script
        .round(
            "Check which test modules exist.",
            GET_FILE_CONTENTS,
            &[("file", "tests/test_calc.py")],
        )
        .say("The Dockerfile names a test module that does not exist.")
        .say("No more lookups needed.")
        .dockerfile("Corrected Dockerfile:", dockerfile)
}
