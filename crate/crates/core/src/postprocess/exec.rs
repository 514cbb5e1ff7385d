use std::io::{self, Read, Write};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{ExecutionPolicy, PostprocessError, SideEffect, SideEffectKind, Transformed};

/// Launches child processes. Tests substitute a counting implementation.
pub trait Spawner: Send + Sync {
    fn spawn(&self, cmd: &mut Command) -> io::Result<Child>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemSpawner;

impl Spawner for SystemSpawner {
    fn spawn(&self, cmd: &mut Command) -> io::Result<Child> {
        cmd.spawn()
    }
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
}

impl ProcessOutput {
    fn exit_code(&self) -> String {
        self.status
            .code()
            .map(|c| c.to_string())
            .unwrap_or_else(|| "signal".to_owned())
    }
}

pub(crate) enum ProcessError {
    NotFound,
    Timeout,
    Io(io::Error),
}

const POLL: Duration = Duration::from_millis(10);

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `cmd` to completion, killing it once `timeout` elapses.
pub(crate) fn run_process(
    cmd: &mut Command,
    stdin: Option<&str>,
    timeout: Duration,
    spawner: &dyn Spawner,
) -> Result<ProcessOutput, ProcessError> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = spawner.spawn(cmd).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ProcessError::NotFound,
        _ => ProcessError::Io(e),
    })?;
    if let (Some(text), Some(mut pipe)) = (stdin, child.stdin.take()) {
        let text = text.to_owned();
        thread::spawn(move || {
            let _ = pipe.write_all(text.as_bytes());
        });
    }
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(ProcessError::Io)? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ProcessError::Timeout);
        }
        thread::sleep(POLL);
    };
    Ok(ProcessOutput {
        status,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
    })
}

fn command_line(parts: &[String]) -> String {
    parts.join(" ")
}

/// Writes `raw` to a scratch directory and runs it with the configured interpreter.
///
/// A nonzero exit is reported in the transcript, not as an error.
pub(crate) fn execute_code(
    raw: &str,
    policy: &ExecutionPolicy,
    spawner: &dyn Spawner,
) -> Result<Transformed, PostprocessError> {
    if !policy.allow_code_execution {
        return Err(PostprocessError::ExecutionDisabled);
    }
    let Some((program, args)) = policy.interpreter_cmd.split_first() else {
        return Err(PostprocessError::InterpreterNotFound(String::new()));
    };
    let dir = tempfile::tempdir().map_err(|e| PostprocessError::Failed(format!("scratch directory: {e}")))?;
    let script = dir.path().join(&policy.script_name);
    std::fs::write(&script, raw).map_err(|e| PostprocessError::Failed(format!("writing code: {e}")))?;

    let mut cmd = Command::new(program);
    cmd.args(args).arg(&script).current_dir(dir.path());
    let shown = format!("{} {}", command_line(&policy.interpreter_cmd), policy.script_name);
    let output = match run_process(&mut cmd, None, policy.timeout(), spawner) {
        Ok(o) => o,
        Err(ProcessError::NotFound) => return Err(PostprocessError::InterpreterNotFound(program.clone())),
        Err(ProcessError::Timeout) => return Err(PostprocessError::Timeout(policy.timeout())),
        Err(ProcessError::Io(e)) => return Err(PostprocessError::Failed(format!("running `{shown}`: {e}"))),
    };
    let code = output.exit_code();
    let transcript = format!(
        "exit code: {code}\n--- stdout ---\n{}\n--- stderr ---\n{}",
        output.stdout, output.stderr
    );
    Ok(Transformed {
        output: Some(transcript),
        side_effects: vec![SideEffect::new(SideEffectKind::Process, format!("ran `{shown}` (exit {code})"))],
    })
}

/// stdin → stdout contract for user-supplied postprocessor commands.
pub(crate) fn run_external(
    command: &[String],
    raw: &str,
    policy: &ExecutionPolicy,
    spawner: &dyn Spawner,
) -> Result<Transformed, PostprocessError> {
    let shown = command_line(command);
    let mut cmd = Command::new(&command[0]);
    cmd.args(&command[1..]);
    let output = match run_process(&mut cmd, Some(raw), policy.timeout(), spawner) {
        Ok(o) => o,
        Err(ProcessError::NotFound) => return Err(PostprocessError::InterpreterNotFound(command[0].clone())),
        Err(ProcessError::Timeout) => return Err(PostprocessError::Timeout(policy.timeout())),
        Err(ProcessError::Io(e)) => return Err(PostprocessError::Failed(format!("running `{shown}`: {e}"))),
    };
    if !output.status.success() {
        return Err(PostprocessError::Failed(format!(
            "`{shown}` exited with {}: {}",
            output.exit_code(),
            output.stderr.trim()
        )));
    }
    let mut side_effects = vec![SideEffect::new(SideEffectKind::Process, format!("ran `{shown}` (exit 0)"))];
    if !output.stderr.is_empty() {
        side_effects.push(SideEffect::new(SideEffectKind::Stderr, output.stderr));
    }
    Ok(Transformed {
        output: Some(output.stdout),
        side_effects,
    })
}
