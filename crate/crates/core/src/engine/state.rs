//! The run state machine.
//!
//! [`step`] is a pure transition function: each legal `(phase, event)` pair
//! has exactly one successor, every other pair is a [`ProtocolError`]. The
//! runner performs side effects around it.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ApprovalAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Loading,
    Validating,
    AwaitingLlm,
    AwaitingApproval,
    Postprocessing,
    Advancing,
    Completed,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Loading,
        Phase::Validating,
        Phase::AwaitingLlm,
        Phase::AwaitingApproval,
        Phase::Postprocessing,
        Phase::Advancing,
        Phase::Completed,
        Phase::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub phase: Phase,
    pub current_agent: Option<String>,
    /// LLM invocations so far for the current agent; 0 before the first.
    pub attempt: u32,
}

impl RunState {
    pub fn initial() -> Self {
        RunState {
            phase: Phase::Loading,
            current_agent: None,
            attempt: 0,
        }
    }

    fn at(phase: Phase, agent: Option<String>, attempt: u32) -> Self {
        RunState {
            phase,
            current_agent: agent,
            attempt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Loaded,
    Validated { head: String },
    ValidationFailed,
    LlmResponded { approval_required: bool },
    LlmFailed,
    Decision(ApprovalAction),
    ApprovalClosed,
    PostprocessDone { next: Option<String> },
    PostprocessFailed,
    Advanced,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Loaded => write!(f, "loaded"),
            Event::Validated { head } => write!(f, "validated(head={head})"),
            Event::ValidationFailed => write!(f, "validation_failed"),
            Event::LlmResponded { approval_required } => {
                write!(f, "llm_responded(approval_required={approval_required})")
            }
            Event::LlmFailed => write!(f, "llm_failed"),
            Event::Decision(a) => write!(f, "decision({a})"),
            Event::ApprovalClosed => write!(f, "approval_closed"),
            Event::PostprocessDone { next } => {
                write!(f, "postprocess_done(next={})", next.as_deref().unwrap_or("None"))
            }
            Event::PostprocessFailed => write!(f, "postprocess_failed"),
            Event::Advanced => write!(f, "advanced"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal event {event} in phase {phase:?}")]
pub struct ProtocolError {
    pub phase: Phase,
    pub event: String,
}

/// The successor of `state` under `event`.
pub fn step(state: &RunState, event: &Event) -> Result<RunState, ProtocolError> {
    let agent = state.current_agent.clone();
    let next = match (state.phase, event) {
        (Phase::Loading, Event::Loaded) => RunState::at(Phase::Validating, None, 0),
        (Phase::Validating, Event::Validated { head }) => RunState::at(Phase::AwaitingLlm, Some(head.clone()), 1),
        (Phase::Validating, Event::ValidationFailed) => RunState::at(Phase::Failed, None, 0),
        (Phase::AwaitingLlm, Event::LlmResponded { approval_required: true }) => {
            RunState::at(Phase::AwaitingApproval, agent, state.attempt)
        }
        (Phase::AwaitingLlm, Event::LlmResponded { approval_required: false }) => {
            RunState::at(Phase::Postprocessing, agent, state.attempt)
        }
        (Phase::AwaitingLlm, Event::LlmFailed) => RunState::at(Phase::Failed, agent, state.attempt),
        (Phase::AwaitingApproval, Event::Decision(ApprovalAction::Approve | ApprovalAction::Edit)) => {
            RunState::at(Phase::Postprocessing, agent, state.attempt)
        }
        (Phase::AwaitingApproval, Event::Decision(ApprovalAction::Reject)) => {
            RunState::at(Phase::AwaitingLlm, agent, state.attempt + 1)
        }
        (Phase::AwaitingApproval, Event::ApprovalClosed) => RunState::at(Phase::Failed, agent, state.attempt),
        (Phase::Postprocessing, Event::PostprocessDone { next: None }) => {
            RunState::at(Phase::Completed, agent, state.attempt)
        }
        (Phase::Postprocessing, Event::PostprocessDone { next: Some(n) }) => {
            RunState::at(Phase::Advancing, Some(n.clone()), 0)
        }
        (Phase::Postprocessing, Event::PostprocessFailed) => RunState::at(Phase::Failed, agent, state.attempt),
        (Phase::Advancing, Event::Advanced) => RunState::at(Phase::AwaitingLlm, agent, 1),
        (phase, event) => {
            return Err(ProtocolError {
                phase,
                event: event.to_string(),
            })
        }
    };
    Ok(next)
}
