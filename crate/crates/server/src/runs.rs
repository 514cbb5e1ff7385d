//! Per-run bookkeeping shared between the engine thread and HTTP handlers.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};

use agentchain::engine::{
    ApprovalClosed, ApprovalDecision, ApprovalRequest, Approver, RunObserver, RunResult, RunState,
};
use agentchain::interactions::InteractionRecord;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::watch;

pub const STATE_CHANGE: &str = "state_change";

#[derive(Debug, Clone, Serialize)]
pub struct RunEvent {
    /// Contiguous from 1 within a run.
    pub seq: u64,
    /// An interaction record kind, or `state_change`.
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunHandle {
    pub run_id: String,
    pub workflow_stem: String,
    pub state: RunState,
    pub created_at: String,
    /// Set once the engine thread has returned and every event is published.
    pub finished: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending_approval: Option<ApprovalRequest>,
}

struct Pending {
    request: ApprovalRequest,
    reply: mpsc::Sender<ApprovalDecision>,
}

pub(crate) struct RunData {
    pub handle: RunHandle,
    pub events: Vec<RunEvent>,
    pending: Option<Pending>,
    /// Decisions already delivered, keyed by `(agent, attempt)`.
    decided: HashMap<(String, u32), ApprovalDecision>,
}

pub struct RunSlot {
    data: Mutex<RunData>,
    /// Carries the number of published events; bumped on every change.
    notify: watch::Sender<u64>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum DecideOutcome {
    Delivered,
    Replayed,
}

#[derive(Debug, PartialEq, Eq)]
pub enum DecideError {
    NoPending,
    Conflict(String),
}

impl RunSlot {
    pub fn new(run_id: String, workflow_stem: String, created_at: String) -> Arc<Self> {
        let (notify, _) = watch::channel(0);
        Arc::new(RunSlot {
            data: Mutex::new(RunData {
                handle: RunHandle {
                    run_id,
                    workflow_stem,
                    state: RunState::initial(),
                    created_at,
                    finished: false,
                    result: None,
                    error: None,
                    pending_approval: None,
                },
                events: Vec::new(),
                pending: None,
                decided: HashMap::new(),
            }),
            notify,
        })
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, RunData> {
        self.data.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.notify.subscribe()
    }

    fn publish(&self, data: &RunData) {
        self.notify.send_replace(data.events.len() as u64);
    }

    fn push_event(&self, kind: &str, payload: Value) {
        let mut data = self.lock();
        let seq = data.events.len() as u64 + 1;
        data.events.push(RunEvent {
            seq,
            kind: kind.to_owned(),
            payload,
        });
        self.publish(&data);
    }

    pub fn snapshot(&self) -> RunHandle {
        self.lock().handle.clone()
    }

    /// Events with `seq > after`, and whether the run has finished.
    pub fn events_after(&self, after: u64) -> (Vec<RunEvent>, bool) {
        let data = self.lock();
        let start = (after as usize).min(data.events.len());
        (data.events[start..].to_vec(), data.handle.finished)
    }

    pub fn pending(&self) -> Option<ApprovalRequest> {
        self.lock().pending.as_ref().map(|p| p.request.clone())
    }

    /// Delivers `decision` to the parked engine thread.
    ///
    /// `key` names the `(agent, attempt)` the client saw; replaying a decision
    /// already delivered for that key is a no-op, a different one is a conflict.
    pub fn decide(&self, key: Option<(String, u32)>, decision: ApprovalDecision) -> Result<DecideOutcome, DecideError> {
        let mut data = self.lock();
        let key = match key {
            Some(k) => k,
            None => match &data.pending {
                Some(p) => (p.request.agent_name.clone(), p.request.attempt),
                None => return Err(DecideError::NoPending),
            },
        };
        if let Some(previous) = data.decided.get(&key) {
            return if *previous == decision {
                Ok(DecideOutcome::Replayed)
            } else {
                Err(DecideError::Conflict(format!(
                    "attempt {} of `{}` was already answered with {}",
                    key.1, key.0, previous.action
                )))
            };
        }
        let matches = data
            .pending
            .as_ref()
            .is_some_and(|p| p.request.agent_name == key.0 && p.request.attempt == key.1);
        if !matches {
            return Err(DecideError::NoPending);
        }
        let pending = data.pending.take().expect("checked above");
        data.handle.pending_approval = None;
        data.decided.insert(key, decision.clone());
        // A closed receiver means the run already ended; the decision is moot.
        let _ = pending.reply.send(decision);
        self.publish(&data);
        Ok(DecideOutcome::Delivered)
    }

    pub fn finish(&self, outcome: Result<RunResult, String>) {
        let mut data = self.lock();
        match outcome {
            Ok(result) => data.handle.result = Some(result),
            Err(error) => data.handle.error = Some(error),
        }
        data.handle.finished = true;
        data.pending = None;
        data.handle.pending_approval = None;
        self.publish(&data);
    }
}

/// Parks the engine thread until a decision arrives over HTTP.
pub struct SlotApprover(pub Arc<RunSlot>);

impl Approver for SlotApprover {
    fn decide(&self, request: &ApprovalRequest) -> Result<ApprovalDecision, ApprovalClosed> {
        let (tx, rx) = mpsc::channel();
        {
            let mut data = self.0.lock();
            data.pending = Some(Pending {
                request: request.clone(),
                reply: tx,
            });
            data.handle.pending_approval = Some(request.clone());
            self.0.publish(&data);
        }
        rx.recv().map_err(|_| ApprovalClosed)
    }
}

/// Mirrors engine progress into the slot's event list.
pub struct SlotObserver(pub Arc<RunSlot>);

impl RunObserver for SlotObserver {
    fn on_state(&self, state: &RunState) {
        self.0.lock().handle.state = state.clone();
        self.0
            .push_event(STATE_CHANGE, serde_json::to_value(state).unwrap_or(Value::Null));
    }

    fn on_record(&self, record: &InteractionRecord) {
        let kind = serde_json::to_value(record.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        self.0
            .push_event(&kind, serde_json::to_value(record).unwrap_or(Value::Null));
    }
}
