use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use walkdir::WalkDir;

use super::process::{run_until, ProcessEnd};
use super::{BuildLog, BuildRequest, ContainerEngine, ExitStatus, SandboxError};
use crate::dockerfile::{self, Instruction};

/// Executes Dockerfile instructions with the host shell inside a staged copy
/// of the build context.
///
/// This engine gives no isolation beyond the staged copy: RUN steps run as the
/// current user on the host. It exists for offline development and for
/// fixtures whose Dockerfiles are known to be harmless. Container paths are
/// mapped under a per-build root directory; `FROM` is checked against an
/// optional allow-list but otherwise ignored.
#[derive(Debug, Clone)]
pub struct ShellEngine {
    work_root: PathBuf,
    images: Option<Vec<String>>,
}

impl ShellEngine {
    pub fn new(work_root: impl Into<PathBuf>) -> Self {
        ShellEngine {
            work_root: work_root.into(),
            images: None,
        }
    }

    /// Restricts `FROM` to the given images; anything else fails the way a
    /// registry lookup for a missing image does.
    pub fn with_available_images<I, S>(mut self, images: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.images = Some(images.into_iter().map(Into::into).collect());
        self
    }

    fn stage_dir(&self, tag: &str) -> PathBuf {
        let safe: String = tag
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.work_root.join(safe)
    }

    /// Whether a build for `tag` left state behind (the analogue of an image).
    pub fn image_exists(&self, tag: &str) -> bool {
        self.stage_dir(tag).exists()
    }

    fn image_available(&self, image: &str) -> bool {
        match &self.images {
            None => true,
            Some(list) => {
                let bare = image.split_whitespace().next().unwrap_or_default();
                list.iter().any(|i| i == bare)
            }
        }
    }
}

struct Step<'a> {
    log: &'a mut String,
    root: PathBuf,
    context: PathBuf,
    cwd: PathBuf,
    env: BTreeMap<String, String>,
}

impl Step<'_> {
    /// Maps a container path to the staged root.
    fn container_path(&self, path: &str) -> PathBuf {
        if let Some(abs) = path.strip_prefix('/') {
            self.root.join(abs)
        } else {
            self.cwd.join(path)
        }
    }
}

enum StepResult {
    Continue,
    Failed(i32),
    TimedOut,
}

impl ContainerEngine for ShellEngine {
    fn name(&self) -> &str {
        "shell"
    }

    fn preflight(&self) -> Result<(), SandboxError> {
        let ok = Command::new("sh")
            .args(["-c", "true"])
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if !ok {
            return Err(SandboxError::EngineUnavailable("no usable /bin/sh".into()));
        }
        fs::create_dir_all(&self.work_root).map_err(|e| {
            SandboxError::EngineUnavailable(format!(
                "cannot create {}: {e}",
                self.work_root.display()
            ))
        })
    }

    fn build(&self, req: &BuildRequest, grace: Duration) -> Result<BuildLog, SandboxError> {
        let start = Instant::now();
        let deadline = start + req.time_limit;
        let stage = self.stage_dir(&req.image_tag);
        let unavailable =
            |e: io::Error| SandboxError::EngineUnavailable(format!("staging failed: {e}"));
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(unavailable)?;
        }
        let root = stage.join("rootfs");
        let context = stage.join("context");
        fs::create_dir_all(&root).map_err(unavailable)?;
        copy_tree(&req.repo_path, &context).map_err(unavailable)?;
        fs::write(stage.join("Dockerfile"), &req.dockerfile_text).map_err(unavailable)?;

        let mut log = String::new();
        log.push_str("#0 building with \"shell\" engine (no isolation)\n");
        let instructions = dockerfile::parse(&req.dockerfile_text);
        let total = instructions.len();
        let mut step = Step {
            log: &mut log,
            cwd: root.clone(),
            root,
            context,
            env: BTreeMap::new(),
        };
        let mut exit = ExitStatus::Completed { code: 0 };
        if instructions.first().map(|i| i.keyword.as_str()) != Some("FROM") {
            step.log
                .push_str("ERROR: failed to solve: no build stage in current context\n");
            exit = ExitStatus::Completed { code: 1 };
        } else {
            for (n, instr) in instructions.iter().enumerate() {
                step.log.push_str(&format!(
                    "#{} [{}/{}] {} {}\n",
                    n + 1,
                    n + 1,
                    total,
                    instr.keyword,
                    instr.args
                ));
                match self.execute(&mut step, instr, deadline, grace) {
                    StepResult::Continue => {}
                    StepResult::Failed(code) => {
                        exit = ExitStatus::Completed { code };
                        break;
                    }
                    StepResult::TimedOut => {
                        exit = ExitStatus::TimedOut;
                        break;
                    }
                }
                if Instant::now() >= deadline {
                    exit = ExitStatus::TimedOut;
                    break;
                }
            }
        }
        if exit == (ExitStatus::Completed { code: 0 }) {
            log.push_str(&format!(
                "#{} naming to {} done\n",
                total + 1,
                req.image_tag
            ));
        }
        Ok(BuildLog {
            raw_text: log,
            exit_status: exit,
            duration_secs: start.elapsed().as_secs_f64(),
        })
    }

    fn cleanup(&self, image_tag: &str) {
        let stage = self.stage_dir(image_tag);
        if stage.exists() {
            if let Err(e) = fs::remove_dir_all(&stage) {
                log::debug!("cleanup {}: {e}", stage.display());
            }
        }
    }
}

impl ShellEngine {
    fn execute(
        &self,
        step: &mut Step<'_>,
        instr: &Instruction,
        deadline: Instant,
        grace: Duration,
    ) -> StepResult {
        let args = instr.args.trim();
        match instr.keyword.as_str() {
            "FROM" => {
                let image = args.split_whitespace().next().unwrap_or_default();
                if !self.image_available(image) {
                    step.log.push_str(&format!(
                        "ERROR: failed to solve: {image}: failed to resolve source metadata for docker.io/library/{image}: not found\n"
                    ));
                    return StepResult::Failed(1);
                }
                StepResult::Continue
            }
            "WORKDIR" => {
                let dir = step.container_path(&expand(args, &step.env));
                if let Err(e) = fs::create_dir_all(&dir) {
                    step.log.push_str(&format!("ERROR: WORKDIR {args}: {e}\n"));
                    return StepResult::Failed(1);
                }
                step.cwd = dir;
                StepResult::Continue
            }
            "ENV" | "ARG" => {
                for (k, v) in parse_env(args) {
                    if instr.keyword == "ARG" && step.env.contains_key(&k) {
                        continue;
                    }
                    step.env.insert(k, v);
                }
                StepResult::Continue
            }
            "COPY" | "ADD" => match copy_instruction(step, args) {
                Ok(()) => StepResult::Continue,
                Err(e) => {
                    step.log
                        .push_str(&format!("ERROR: failed to compute cache key: {e}\n"));
                    StepResult::Failed(1)
                }
            },
            "RUN" => {
                let mut cmd = match instr.exec_form() {
                    Some(words) if !words.is_empty() => {
                        let mut c = Command::new(&words[0]);
                        c.args(&words[1..]);
                        c
                    }
                    _ => {
                        let mut c = Command::new("sh");
                        c.arg("-c").arg(args);
                        c
                    }
                };
                cmd.current_dir(&step.cwd).envs(&step.env);
                match run_until(cmd, deadline, grace) {
                    Ok(captured) => {
                        // Present paths as the container would see them.
                        let output = captured
                            .output
                            .replace(step.root.to_string_lossy().as_ref(), "");
                        step.log.push_str(&output);
                        if !output.is_empty() && !output.ends_with('\n') {
                            step.log.push('\n');
                        }
                        match captured.end {
                            ProcessEnd::Exited(0) => StepResult::Continue,
                            ProcessEnd::Exited(code) => {
                                step.log.push_str(&format!(
                                    "ERROR: process \"/bin/sh -c {args}\" did not complete successfully: exit code: {code}\n"
                                ));
                                StepResult::Failed(1)
                            }
                            ProcessEnd::Killed => StepResult::TimedOut,
                        }
                    }
                    Err(e) => {
                        step.log
                            .push_str(&format!("ERROR: cannot start process: {e}\n"));
                        StepResult::Failed(1)
                    }
                }
            }
            // Runtime metadata has no effect on the build.
            "CMD" | "ENTRYPOINT" | "EXPOSE" | "LABEL" | "USER" | "VOLUME" | "SHELL"
            | "STOPSIGNAL" | "HEALTHCHECK" | "ONBUILD" | "MAINTAINER" => StepResult::Continue,
            other => {
                step.log.push_str(&format!(
                    "ERROR: dockerfile parse error: unknown instruction: {other}\n"
                ));
                StepResult::Failed(1)
            }
        }
    }
}

fn expand(text: &str, env: &BTreeMap<String, String>) -> String {
    let mut out = text.to_string();
    for (k, v) in env {
        out = out
            .replace(&format!("${{{k}}}"), v)
            .replace(&format!("${k}"), v);
    }
    out
}

fn parse_env(args: &str) -> Vec<(String, String)> {
    if !args.contains('=') {
        // Legacy `ENV key value` form.
        let (k, v) = args.split_once(char::is_whitespace).unwrap_or((args, ""));
        return vec![(k.to_string(), v.trim().to_string())];
    }
    args.split_whitespace()
        .map(|pair| {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            (k.to_string(), v.trim_matches('"').to_string())
        })
        .collect()
}

fn copy_instruction(step: &mut Step<'_>, args: &str) -> io::Result<()> {
    let words: Vec<String> = match serde_json::from_str::<Vec<String>>(args) {
        Ok(w) => w,
        Err(_) => args
            .split_whitespace()
            .filter(|w| !w.starts_with("--"))
            .map(str::to_string)
            .collect(),
    };
    let Some((dest, sources)) = words.split_last() else {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "COPY needs a source and destination",
        ));
    };
    if sources.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "COPY needs a source and destination",
        ));
    }
    let dest_path = step.container_path(&expand(dest, &step.env));
    let into_dir = dest.ends_with('/') || sources.len() > 1 || dest == "." || dest_path.is_dir();
    for src in sources {
        let rel = crate::navigator::normalize_rel(src).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{src}: outside build context"),
            )
        })?;
        let from = step.context.join(&rel);
        if !from.exists() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("\"/{rel}\": not found"),
            ));
        }
        if from.is_dir() {
            copy_tree(&from, &dest_path)?;
        } else {
            let target = if into_dir {
                fs::create_dir_all(&dest_path)?;
                dest_path.join(from.file_name().unwrap_or_default())
            } else {
                if let Some(parent) = dest_path.parent() {
                    fs::create_dir_all(parent)?;
                }
                dest_path.clone()
            };
            fs::copy(&from, target)?;
        }
    }
    Ok(())
}

/// Recursive copy skipping version-control metadata.
fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    fs::create_dir_all(to)?;
    let walker = WalkDir::new(from)
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| !matches!(e.file_name().to_str(), Some(".git" | ".hg" | ".svn")));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("under root");
        let target = to.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            let link = fs::read_link(entry.path())?;
            let _ = fs::remove_file(&target);
            std::os::unix::fs::symlink(link, &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
