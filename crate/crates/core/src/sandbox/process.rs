//! Deadline-bounded child processes with combined stdout/stderr capture.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_millis(20);
/// How long to wait for stragglers holding the output pipe after the child
/// itself has exited.
const DRAIN: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessEnd {
    Exited(i32),
    /// Deadline hit; the process group was terminated.
    Killed,
}

pub struct Captured {
    pub end: ProcessEnd,
    pub output: String,
}

fn signal_group(pid: u32, sig: libc::c_int) {
    // SAFETY: kill(2) with a negative pid signals the process group created
    // for this child by `process_group(0)`; no memory is touched.
    unsafe {
        libc::kill(-(pid as libc::pid_t), sig);
    }
}

/// Runs `cmd` in its own process group. At `deadline` the group gets
/// SIGTERM, and SIGKILL once `grace` has also elapsed.
pub fn run_until(mut cmd: Command, deadline: Instant, grace: Duration) -> io::Result<Captured> {
    let (mut reader, writer) = io::pipe()?;
    cmd.stdin(Stdio::null())
        .stdout(writer.try_clone()?)
        .stderr(writer)
        .process_group(0);
    let mut child = cmd.spawn()?;
    // The Command still owns the write ends; drop them so EOF arrives once
    // the child's process group exits.
    drop(cmd);
    let pid = child.id();

    let buffer = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&buffer);
    let pump = thread::spawn(move || {
        let mut chunk = [0u8; 8192];
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => sink
                    .lock()
                    .expect("capture lock")
                    .extend_from_slice(&chunk[..n]),
            }
        }
    });

    let end = loop {
        if let Some(status) = child.try_wait()? {
            let code = status
                .code()
                .unwrap_or_else(|| 128 + status.signal().unwrap_or(0));
            break ProcessEnd::Exited(code);
        }
        if Instant::now() >= deadline {
            signal_group(pid, libc::SIGTERM);
            let hard = Instant::now() + grace;
            loop {
                if child.try_wait()?.is_some() {
                    break;
                }
                if Instant::now() >= hard {
                    signal_group(pid, libc::SIGKILL);
                    child.wait()?;
                    break;
                }
                thread::sleep(POLL);
            }
            break ProcessEnd::Killed;
        }
        thread::sleep(POLL);
    };

    // Let the pump finish; if a detached descendant still holds the pipe,
    // clear out the group and keep whatever was captured.
    let drain_until = Instant::now() + DRAIN;
    while !pump.is_finished() && Instant::now() < drain_until {
        thread::sleep(POLL);
    }
    if !pump.is_finished() {
        signal_group(pid, libc::SIGKILL);
    }
    let bytes = buffer.lock().expect("capture lock").clone();
    Ok(Captured {
        end,
        output: String::from_utf8_lossy(&bytes).into_owned(),
    })
}
