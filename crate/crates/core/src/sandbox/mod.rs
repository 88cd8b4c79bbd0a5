//! Building generated Dockerfiles against a repository checkout.
//!
//! Build failures are data: every attempt that gets past the engine
//! pre-flight check yields a [`BuildLog`]. Only an unreachable engine is an
//! error.

mod docker;
mod process;
mod shell;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use docker::DockerEngine;
pub use process::{run_until, Captured, ProcessEnd};
pub use shell::ShellEngine;

/// Default wall-clock limit for one build, image pulls included.
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);
/// Time between SIGTERM at the limit and SIGKILL.
pub const DEFAULT_GRACE: Duration = Duration::from_secs(10);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("container engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("invalid build request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildRequest {
    pub repo_path: PathBuf,
    pub dockerfile_text: String,
    pub time_limit: Duration,
    pub image_tag: String,
}

impl BuildRequest {
    pub fn new(
        repo_path: impl Into<PathBuf>,
        dockerfile_text: impl Into<String>,
        image_tag: impl Into<String>,
    ) -> Self {
        BuildRequest {
            repo_path: repo_path.into(),
            dockerfile_text: dockerfile_text.into(),
            time_limit: DEFAULT_TIME_LIMIT,
            image_tag: image_tag.into(),
        }
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = limit;
        self
    }

    fn validate(&self) -> Result<(), SandboxError> {
        if self.time_limit.is_zero() {
            return Err(SandboxError::InvalidRequest(
                "time limit must be positive".into(),
            ));
        }
        if !self.repo_path.is_dir() {
            return Err(SandboxError::InvalidRequest(format!(
                "repository path {} is not a directory",
                self.repo_path.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExitStatus {
    Completed { code: i32 },
    TimedOut,
    EngineError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub raw_text: String,
    pub exit_status: ExitStatus,
    pub duration_secs: f64,
}

/// Something that can turn a Dockerfile plus build context into a log.
pub trait ContainerEngine: Send + Sync {
    fn name(&self) -> &str;

    fn preflight(&self) -> Result<(), SandboxError>;

    /// Builds without cache, killing the build once `req.time_limit` has
    /// passed (plus `grace` for the forced kill).
    fn build(&self, req: &BuildRequest, grace: Duration) -> Result<BuildLog, SandboxError>;

    /// Removes the image and intermediate state for `image_tag`. Best effort
    /// and idempotent.
    fn cleanup(&self, image_tag: &str);
}

pub struct Sandbox {
    engine: Box<dyn ContainerEngine>,
    grace: Duration,
}

impl Sandbox {
    pub fn new(engine: Box<dyn ContainerEngine>) -> Self {
        Sandbox {
            engine,
            grace: DEFAULT_GRACE,
        }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn engine_name(&self) -> &str {
        self.engine.name()
    }

    pub fn preflight(&self) -> Result<(), SandboxError> {
        self.engine.preflight()
    }

    pub fn build_and_capture(&self, req: &BuildRequest) -> Result<BuildLog, SandboxError> {
        req.validate()?;
        self.engine.preflight()?;
        self.engine.build(req, self.grace)
    }

    pub fn cleanup(&self, image_tag: &str) {
        self.engine.cleanup(image_tag);
    }
}

/// Image tag for one build: unique per (repo, run, attempt) within a process.
pub fn image_tag(repo_id: &str, run: usize, attempt: usize) -> String {
    let repo: String = repo_id
        .to_ascii_lowercase()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '-'
            }
        })
        .collect();
    let repo = repo.trim_matches(|c: char| !c.is_ascii_alphanumeric());
    let repo = if repo.is_empty() { "repo" } else { repo };
    format!(
        "installamatic-{repo}:r{run}-a{attempt}-p{}",
        std::process::id()
    )
}
