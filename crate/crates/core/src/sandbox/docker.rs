use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use log::debug;

use super::process::{run_until, ProcessEnd};
use super::{BuildLog, BuildRequest, ContainerEngine, ExitStatus, SandboxError};

const TAG_LABEL: &str = "installamatic.tag";

/// Drives a Docker-compatible CLI (`docker`, `podman`).
///
/// The Dockerfile is written to a private temporary directory and passed with
/// `-f`, so the repository checkout used as build context is never written.
#[derive(Debug, Clone)]
pub struct DockerEngine {
    program: PathBuf,
}

impl Default for DockerEngine {
    fn default() -> Self {
        DockerEngine::new("docker")
    }
}

impl DockerEngine {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        DockerEngine {
            program: program.into(),
        }
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.env("DOCKER_BUILDKIT", "1");
        cmd
    }

    pub(crate) fn build_args(dockerfile: &str, req: &BuildRequest) -> Vec<String> {
        vec![
            "build".into(),
            "--no-cache".into(),
            "--progress=plain".into(),
            "--label".into(),
            format!("{TAG_LABEL}={}", req.image_tag),
            "-t".into(),
            req.image_tag.clone(),
            "-f".into(),
            dockerfile.into(),
            req.repo_path.display().to_string(),
        ]
    }
}

impl ContainerEngine for DockerEngine {
    fn name(&self) -> &str {
        "docker"
    }

    fn preflight(&self) -> Result<(), SandboxError> {
        let out = self
            .command()
            .args(["version", "--format", "{{.Server.Version}}"])
            .output()
            .map_err(|e| {
                SandboxError::EngineUnavailable(format!("{}: {e}", self.program.display()))
            })?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(SandboxError::EngineUnavailable(stderr.trim().to_string()));
        }
        Ok(())
    }

    fn build(&self, req: &BuildRequest, grace: Duration) -> Result<BuildLog, SandboxError> {
        let start = Instant::now();
        let staging = tempfile::tempdir().map_err(|e| {
            SandboxError::EngineUnavailable(format!("cannot create staging dir: {e}"))
        })?;
        let dockerfile = staging.path().join("Dockerfile");
        std::fs::write(&dockerfile, &req.dockerfile_text).map_err(|e| {
            SandboxError::EngineUnavailable(format!("cannot stage Dockerfile: {e}"))
        })?;

        let mut cmd = self.command();
        cmd.args(Self::build_args(&dockerfile.display().to_string(), req));
        let captured = run_until(cmd, start + req.time_limit, grace).map_err(|e| {
            SandboxError::EngineUnavailable(format!("cannot run {}: {e}", self.program.display()))
        })?;
        let exit_status = match captured.end {
            ProcessEnd::Exited(code) => ExitStatus::Completed { code },
            ProcessEnd::Killed => ExitStatus::TimedOut,
        };
        Ok(BuildLog {
            raw_text: captured.output,
            exit_status,
            duration_secs: start.elapsed().as_secs_f64(),
        })
    }

    fn cleanup(&self, image_tag: &str) {
        let filter = format!("label={TAG_LABEL}={image_tag}");
        for args in [
            vec!["image", "rm", "-f", image_tag],
            vec!["image", "prune", "-f", "--filter", filter.as_str()],
        ] {
            match self.command().args(&args).output() {
                Ok(out) if !out.status.success() => {
                    debug!(
                        "cleanup {:?}: {}",
                        args,
                        String::from_utf8_lossy(&out.stderr).trim()
                    );
                }
                Err(e) => debug!("cleanup {:?}: {e}", args),
                Ok(_) => {}
            }
        }
    }
}
