#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use installamatic::dataset::{load_manifest, snapshot_repo, Dataset};
use sha2::{Digest, Sha256};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_installamatic"));
    c.env_remove("OPENAI_API_KEY");
    c
}

pub fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().expect("binary runs");
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

pub fn copy_tree(src: &Path, dest: &Path) {
    fs::create_dir_all(dest).unwrap();
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let to = dest.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_tree(&e.path(), &to);
        } else {
            fs::copy(e.path(), &to).unwrap();
        }
    }
}

/// Plain copy of a fixture repository under `dir`.
pub fn fixture_repo(name: &str, dir: &Path) -> PathBuf {
    let dest = dir.join(name);
    copy_tree(&fixtures().join("repos").join(name), &dest);
    dest
}

/// The fixture manifest with its ground truths and pinned git mirrors.
pub fn fixture_dataset(dir: &Path) -> (PathBuf, Dataset) {
    let src = fixtures();
    fs::copy(src.join("manifest.toml"), dir.join("manifest.toml")).unwrap();
    copy_tree(&src.join("ground_truth"), &dir.join("ground_truth"));
    for name in ["calc", "docsy"] {
        let dest = dir.join("mirrors").join(name);
        fs::create_dir_all(&dest).unwrap();
        snapshot_repo(&src.join("repos").join(name), &dest).unwrap();
    }
    let path = dir.join("manifest.toml");
    let ds = load_manifest(&path).unwrap();
    (path, ds)
}

fn digest_into(root: &Path, dir: &Path, h: &mut Sha256) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap()).collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
        let meta = fs::symlink_metadata(&p).unwrap();
        if meta.is_dir() {
            h.update(format!("d {rel}\n"));
            digest_into(root, &p, h);
        } else {
            h.update(format!("f {rel} {}\n", meta.len()));
            h.update(fs::read(&p).unwrap());
        }
    }
}

/// SHA-256 over every path and file body below `root`.
pub fn tree_digest(root: &Path) -> String {
    let mut h = Sha256::new();
    digest_into(root, root, &mut h);
    format!("{:x}", h.finalize())
}

/// The single stamped directory created under `out`.
pub fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}
