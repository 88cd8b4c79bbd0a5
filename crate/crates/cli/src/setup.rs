//! Turns command-line options into core objects.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use installamatic::agent::PromptSet;
use installamatic::dataset::{
    builtin_manifest, checkout, load_manifest, Dataset, DatasetEntry, DatasetError,
};
use installamatic::llm::{BackendError, ChatBackend, OpenAiBackend, OpenAiConfig, ScriptedBackend};
use installamatic::orchestrator::{BackendFactory, Mode, RepoTarget, RunConfig};
use installamatic::sandbox::{DockerEngine, Sandbox, ShellEngine};

use crate::{BackendKind, CliError, EngineArgs, EngineKind, ManifestArgs, ModeArg, RunArgs};

pub fn load_dataset(args: &ManifestArgs) -> Result<Dataset, DatasetError> {
    match &args.manifest {
        Some(path) => load_manifest(path),
        None => Ok(builtin_manifest()),
    }
}

pub fn run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    if args.budget == 0 {
        return Err(CliError::Config("--budget must be at least 1".into()));
    }
    let prompts = match &args.prompts {
        Some(p) => PromptSet::load(p).map_err(CliError::Config)?,
        None => PromptSet::builtin(),
    };
    Ok(RunConfig {
        mode: match args.mode {
            ModeArg::Standard => Mode::Standard,
            ModeArg::PerfectRecall => Mode::PerfectRecall,
        },
        max_repairs: args.max_repairs,
        build_time_limit: Duration::from_secs(args.engine.time_limit),
        search_budget: args.budget,
        prompts,
    })
}

/// Settings outside the reference protocol that the config itself does not
/// know about.
pub fn extra_deviations(args: &RunArgs) -> Vec<String> {
    let mut out = Vec::new();
    if args.engine.engine == EngineKind::Shell {
        out.push("engine=shell (host processes, no container isolation)".into());
    }
    if args.backend == BackendKind::Scripted {
        out.push("backend=scripted".into());
    }
    if args.mode == ModeArg::PerfectRecall {
        out.push("mode=perfect-recall".into());
    }
    out
}

fn read_script(path: &Path) -> Result<ScriptedBackend, BackendError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
    ScriptedBackend::from_json(&text)
}

/// Backend source for the orchestrator. Credentials and single script files
/// are checked here so that mistakes surface as configuration errors.
pub fn backend_factory(args: &RunArgs) -> Result<Box<BackendFactory<'static>>, CliError> {
    match args.backend {
        BackendKind::Openai => {
            let mut config = OpenAiConfig {
                api_key_env: args.api_key_env.clone(),
                requests_per_minute: args.rpm,
                ..OpenAiConfig::default()
            };
            if let Some(m) = &args.model {
                config.model.clone_from(m);
            }
            if let Some(e) = &args.endpoint {
                config.endpoint.clone_from(e);
            }
            let backend =
                OpenAiBackend::from_env(config).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(
                move |_: &str, _: usize| -> Result<Box<dyn ChatBackend>, BackendError> {
                    Ok(Box::new(backend.clone()))
                },
            ))
        }
        BackendKind::Scripted => {
            let path = args
                .script
                .clone()
                .ok_or_else(|| CliError::Config("--backend scripted needs --script".into()))?;
            if path.is_dir() {
                Ok(Box::new(
                    move |repo: &str, _: usize| -> Result<Box<dyn ChatBackend>, BackendError> {
                        Ok(Box::new(read_script(&path.join(format!("{repo}.json")))?))
                    },
                ))
            } else {
                read_script(&path).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Box::new(
                    move |_: &str, _: usize| -> Result<Box<dyn ChatBackend>, BackendError> {
                        Ok(Box::new(read_script(&path)?))
                    },
                ))
            }
        }
    }
}

pub fn sandbox(args: &EngineArgs, work: &Path) -> Sandbox {
    match args.engine {
        EngineKind::Docker => Sandbox::new(Box::new(DockerEngine::new(&args.docker_bin))),
        EngineKind::Shell => {
            let mut engine = ShellEngine::new(work.join("engine"));
            if let Some(list) = &args.shell_images {
                engine = engine.with_available_images(
                    list.split(',').map(str::trim).filter(|s| !s.is_empty()),
                );
            }
            Sandbox::new(Box::new(engine))
        }
    }
}

/// Creates `<root>/<prefix>-<unix seconds>[-n]`, never reusing a directory.
pub fn stamped_dir(root: &Path, prefix: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(root).map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    for n in 0.. {
        let name = if n == 0 {
            format!("{prefix}-{secs}")
        } else {
            format!("{prefix}-{secs}-{n}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Config(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Writes `files.json` listing everything produced under `dir`.
pub fn write_files_manifest(dir: &Path) -> Result<(), CliError> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files)
        .map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    files.retain(|f| f != "files.json");
    let json = serde_json::to_string_pretty(&files).expect("strings serialize");
    fs::write(dir.join("files.json"), json + "\n")
        .map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))
}

/// Checks out a pinned entry into the cache.
pub fn entry_target(entry: &DatasetEntry, work: &Path) -> Result<RepoTarget, DatasetError> {
    Ok(RepoTarget {
        repo_id: entry.name.clone(),
        path: checkout(entry, work)?,
        relevant_docs: entry.relevant_docs.clone(),
    })
}
