//! Named output transforms applied after an agent's approved response.
//!
//! A [`Registry`] maps names to transform functions. Functions receive an
//! [`Invocation`] through which they may call other registered functions, so
//! a single declared postprocessor can compose several helpers. The registry
//! is built at startup and only read afterwards.

mod builtins;
mod exec;
mod ping;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use builtins::{last_chars, first_chars, PINK};
pub use exec::{ProcessOutput, Spawner, SystemSpawner};
pub use ping::extract_target;

use crate::workflow::NONE_SENTINEL;

const MAX_NESTING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideEffectKind {
    Stdout,
    Stderr,
    Network,
    Process,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideEffect {
    pub kind: SideEffectKind,
    pub summary: String,
}

impl SideEffect {
    pub fn new(kind: SideEffectKind, summary: impl Into<String>) -> Self {
        SideEffect {
            kind,
            summary: summary.into(),
        }
    }
}

/// What a transform function returns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transformed {
    /// Replacement text; `None` passes the raw output through.
    pub output: Option<String>,
    pub side_effects: Vec<SideEffect>,
}

impl Transformed {
    pub fn text(output: impl Into<String>) -> Self {
        Transformed {
            output: Some(output.into()),
            side_effects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostprocessResult {
    pub output: Option<String>,
    pub side_effects: Vec<SideEffect>,
    pub duration: Duration,
}

/// Execution limits for postprocessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionPolicy {
    /// Gate for `execute_code`; off unless a run opts in.
    pub allow_code_execution: bool,
    /// Command line the code file path is appended to.
    pub interpreter_cmd: Vec<String>,
    /// File name the code is written to inside the scratch directory.
    pub script_name: String,
    /// Wall-clock limit for a postprocessor call, in seconds.
    pub timeout_s: f64,
    /// Per-connection limit for reachability probes, in seconds.
    pub probe_timeout_s: f64,
    pub allow_network_probe: bool,
    /// Fall back to the system `ping` when TCP probes fail.
    pub ping_fallback: bool,
    /// Escape sequence `printinpink` wraps its output in.
    pub highlight: String,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        ExecutionPolicy {
            allow_code_execution: false,
            interpreter_cmd: vec!["python3".into()],
            script_name: "snippet.py".into(),
            timeout_s: 30.0,
            probe_timeout_s: 2.0,
            allow_network_probe: true,
            ping_fallback: true,
            highlight: PINK.into(),
        }
    }
}

impl ExecutionPolicy {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.0))
    }

    pub fn probe_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.probe_timeout_s.max(0.001))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PostprocessError {
    #[error("unknown postprocessor `{0}`")]
    UnknownName(String),
    #[error("postprocessor `{0}` is already registered")]
    DuplicateName(String),
    #[error("{0}")]
    Failed(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("code execution is disabled by policy")]
    ExecutionDisabled,
    #[error("interpreter `{0}` not found")]
    InterpreterNotFound(String),
    #[error("no IP address or hostname found in output")]
    NoTarget,
    #[error("network probes are disabled by policy")]
    ProbeDisallowed,
    #[error("postprocessors nested more than {MAX_NESTING} deep")]
    NestingLimit,
}

pub type TransformFn = dyn Fn(&str, &Invocation<'_>) -> Result<Transformed, PostprocessError> + Send + Sync;

/// Context handed to a running transform.
pub struct Invocation<'a> {
    registry: &'a Registry,
    policy: &'a ExecutionPolicy,
    depth: usize,
}

impl Invocation<'_> {
    pub fn policy(&self) -> &ExecutionPolicy {
        self.policy
    }

    /// Calls another registered function from inside a transform.
    pub fn apply(&self, name: &str, raw: &str) -> Result<PostprocessResult, PostprocessError> {
        self.registry.apply_at(name, raw, self.policy, self.depth + 1)
    }
}

#[derive(Clone, Default)]
pub struct Registry {
    functions: HashMap<String, Arc<TransformFn>>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("functions", &self.names()).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every built-in, spawning processes directly.
    pub fn with_builtins() -> Self {
        Self::with_builtins_using(Arc::new(SystemSpawner))
    }

    /// Built-ins whose process launches go through `spawner`.
    pub fn with_builtins_using(spawner: Arc<dyn Spawner>) -> Self {
        let mut r = Registry::new();
        builtins::install(&mut r, spawner);
        r
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> Result<(), PostprocessError>
    where
        F: Fn(&str, &Invocation<'_>) -> Result<Transformed, PostprocessError> + Send + Sync + 'static,
    {
        let name = name.into();
        if name == NONE_SENTINEL || self.functions.contains_key(&name) {
            return Err(PostprocessError::DuplicateName(name));
        }
        self.functions.insert(name, Arc::new(f));
        Ok(())
    }

    /// Registers an external command: raw text on stdin, replacement on stdout.
    pub fn register_command(
        &mut self,
        name: impl Into<String>,
        command: Vec<String>,
        spawner: Arc<dyn Spawner>,
    ) -> Result<(), PostprocessError> {
        if command.is_empty() {
            return Err(PostprocessError::Failed("external command must not be empty".into()));
        }
        self.register(name, move |raw, inv| exec::run_external(&command, raw, inv.policy(), spawner.as_ref()))
    }

    /// True for `"None"` and every registered name.
    pub fn resolves(&self, name: &str) -> bool {
        name == NONE_SENTINEL || self.functions.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.functions.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    pub fn apply(&self, name: &str, raw: &str, policy: &ExecutionPolicy) -> Result<PostprocessResult, PostprocessError> {
        self.apply_at(name, raw, policy, 0)
    }

    fn apply_at(
        &self,
        name: &str,
        raw: &str,
        policy: &ExecutionPolicy,
        depth: usize,
    ) -> Result<PostprocessResult, PostprocessError> {
        if name == NONE_SENTINEL {
            return Ok(PostprocessResult {
                output: Some(raw.to_owned()),
                side_effects: Vec::new(),
                duration: Duration::ZERO,
            });
        }
        if depth > MAX_NESTING {
            return Err(PostprocessError::NestingLimit);
        }
        let f = self
            .functions
            .get(name)
            .ok_or_else(|| PostprocessError::UnknownName(name.to_owned()))?;
        let inv = Invocation {
            registry: self,
            policy,
            depth,
        };
        let started = Instant::now();
        let out = f(raw, &inv)?;
        let duration = started.elapsed();
        // In-process functions cannot be interrupted; the limit is checked on return.
        // Process-backed functions enforce it themselves by killing the child.
        if duration > policy.timeout() {
            return Err(PostprocessError::Timeout(policy.timeout()));
        }
        Ok(PostprocessResult {
            output: out.output,
            side_effects: out.side_effects,
            duration,
        })
    }
}
