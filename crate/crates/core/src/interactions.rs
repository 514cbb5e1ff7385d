//! Interaction logs: one JSON object per line in `<stem>_interactions.json`.
//!
//! Every run appends a `run_start` record, one `llm_call` record per provider
//! invocation (rejected attempts included), `approval_event` and
//! `postprocess` records, and a closing `run_end`. Runs of the same workflow
//! share one file and are told apart by `run_id`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock, Weak};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::postprocess::SideEffect;

pub const DEFAULT_INTERACTIONS_DIR: &str = "Interactions";
const LOG_SUFFIX: &str = "_interactions.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    RunStart,
    LlmCall,
    ApprovalEvent,
    Postprocess,
    RunEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub creativity: f64,
    pub diversity: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub seq: u64,
    pub run_id: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Prompt for `llm_call`, raw output for `postprocess` and `approval_event`.
    pub input: String,
    /// Model text, decision, or postprocessed text.
    pub output: String,
    pub model: String,
    pub params: Params,
    /// RFC 3339, UTC.
    pub timestamp: String,
    /// Postprocessor name on `postprocess` records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    /// Replacement text on `edit` approval events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_output: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub side_effects: Vec<SideEffect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

pub fn format_timestamp(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub trait InteractionSink: Send + Sync {
    fn append(&self, record: &InteractionRecord) -> io::Result<()>;
}

impl<T: InteractionSink + ?Sized> InteractionSink for Arc<T> {
    fn append(&self, record: &InteractionRecord) -> io::Result<()> {
        (**self).append(record)
    }
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<InteractionRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<InteractionRecord> {
        self.records.lock().unwrap().clone()
    }
}

impl InteractionSink for MemorySink {
    fn append(&self, record: &InteractionRecord) -> io::Result<()> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }
}

type SharedFile = Arc<Mutex<File>>;

// One handle per log file per process, so concurrent runs of the same
// workflow never interleave partial lines.
fn shared_writer(path: &Path) -> io::Result<SharedFile> {
    static WRITERS: OnceLock<Mutex<HashMap<PathBuf, Weak<Mutex<File>>>>> = OnceLock::new();
    let key = match (path.parent(), path.file_name()) {
        (Some(dir), Some(name)) if !dir.as_os_str().is_empty() => dir.canonicalize()?.join(name),
        _ => std::env::current_dir()?.join(path),
    };
    let mut writers = WRITERS.get_or_init(Default::default).lock().unwrap();
    if let Some(file) = writers.get(&key).and_then(Weak::upgrade) {
        return Ok(file);
    }
    let file = Arc::new(Mutex::new(OpenOptions::new().create(true).append(true).open(&key)?));
    writers.retain(|_, w| w.strong_count() > 0);
    writers.insert(key, Arc::downgrade(&file));
    Ok(file)
}

/// Append-only JSON Lines writer for one run.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    file: SharedFile,
    closed: AtomicBool,
    sync: bool,
}

impl JsonlSink {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let file = shared_writer(&path)?;
        Ok(JsonlSink {
            path,
            file,
            closed: AtomicBool::new(false),
            sync: true,
        })
    }

    /// Skips the per-record `fsync`; records still reach the OS on every append.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}

impl InteractionSink for JsonlSink {
    fn append(&self, record: &InteractionRecord) -> io::Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "interaction log is closed"));
        }
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&line)?;
        file.flush()?;
        if self.sync {
            file.sync_data()?;
        }
        Ok(())
    }
}

/// `<dir>/<stem>_interactions.json`, creating `dir` if needed.
pub fn log_path(interactions_dir: &Path, source_stem: &str) -> io::Result<PathBuf> {
    if source_stem.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "workflow stem must not be empty"));
    }
    if source_stem.contains(['/', '\\', '\0']) || source_stem == "." || source_stem == ".." {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("workflow stem {source_stem:?} is not a plain file name"),
        ));
    }
    std::fs::create_dir_all(interactions_dir)?;
    Ok(interactions_dir.join(format!("{source_stem}{LOG_SUFFIX}")))
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed record on line {line} at byte offset {offset}: {message}")]
    Malformed {
        path: String,
        line: usize,
        offset: usize,
        message: String,
    },
}

/// Reads every record in file order.
pub fn load(path: &Path) -> Result<Vec<InteractionRecord>, LogError> {
    let bytes = std::fs::read(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    let mut offset = 0;
    for (idx, line) in bytes.split(|b| *b == b'\n').enumerate() {
        let start = offset;
        offset += line.len() + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record = serde_json::from_slice(line).map_err(|e| LogError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            offset: start,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Records grouped by `run_id`, runs in order of first appearance.
pub fn group_by_run(records: &[InteractionRecord]) -> Vec<(&str, Vec<&InteractionRecord>)> {
    let mut groups: Vec<(&str, Vec<&InteractionRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(id, _)| *id == r.run_id) {
            Some((_, list)) => list.push(r),
            None => groups.push((&r.run_id, vec![r])),
        }
    }
    groups
}
