use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ApprovalDecision;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub run_id: String,
    pub agent_name: String,
    pub attempt: u32,
    /// Raw model output awaiting a decision.
    pub proposed_output: String,
}

/// The decision channel went away before answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("approval channel closed")]
pub struct ApprovalClosed;

/// Answers approval gates; may block for as long as a human needs.
pub trait Approver: Send + Sync {
    fn decide(&self, request: &ApprovalRequest) -> Result<ApprovalDecision, ApprovalClosed>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AutoApprove;

impl Approver for AutoApprove {
    fn decide(&self, _: &ApprovalRequest) -> Result<ApprovalDecision, ApprovalClosed> {
        Ok(ApprovalDecision::approve())
    }
}

/// Replays a fixed list of decisions, then reports the channel closed.
#[derive(Debug, Default)]
pub struct ScriptedApprover {
    decisions: Mutex<VecDeque<ApprovalDecision>>,
    seen: Mutex<Vec<ApprovalRequest>>,
}

impl ScriptedApprover {
    pub fn new(decisions: impl IntoIterator<Item = ApprovalDecision>) -> Self {
        ScriptedApprover {
            decisions: Mutex::new(decisions.into_iter().collect()),
            seen: Mutex::default(),
        }
    }

    pub fn requests(&self) -> Vec<ApprovalRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Approver for ScriptedApprover {
    fn decide(&self, request: &ApprovalRequest) -> Result<ApprovalDecision, ApprovalClosed> {
        self.seen.lock().unwrap().push(request.clone());
        self.decisions.lock().unwrap().pop_front().ok_or(ApprovalClosed)
    }
}

/// Line-oriented terminal prompt.
///
/// Reads `a`/`approve`, `e`/`edit` or `r`/`reject`. An edit collects lines
/// until one consisting of a single `.`; line endings are kept as typed and
/// only the one before the terminator is dropped.
pub struct ConsoleApprover<R, W> {
    io: Mutex<(R, W)>,
}

impl<R: BufRead + Send, W: Write + Send> ConsoleApprover<R, W> {
    pub fn new(input: R, output: W) -> Self {
        ConsoleApprover {
            io: Mutex::new((input, output)),
        }
    }

    fn read_edit(input: &mut R, output: &mut W) -> std::io::Result<String> {
        writeln!(output, "Enter the replacement text; end with a line containing only '.'")?;
        output.flush()?;
        let mut text = String::new();
        loop {
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                break;
            }
            if line.trim_end_matches(['\r', '\n']) == "." {
                break;
            }
            text.push_str(&line);
        }
        if text.ends_with("\r\n") {
            text.truncate(text.len() - 2);
        } else if text.ends_with('\n') {
            text.truncate(text.len() - 1);
        }
        Ok(text)
    }
}

impl<R: BufRead + Send, W: Write + Send> Approver for ConsoleApprover<R, W> {
    fn decide(&self, request: &ApprovalRequest) -> Result<ApprovalDecision, ApprovalClosed> {
        let mut guard = self.io.lock().map_err(|_| ApprovalClosed)?;
        let (input, output) = &mut *guard;
        let io = |e: std::io::Error| {
            tracing::error!(error = %e, "approval prompt I/O failed");
            ApprovalClosed
        };
        writeln!(
            output,
            "\n=== Approval required: {} (attempt {}) ===\n{}\n=== end of output ===",
            request.agent_name, request.attempt, request.proposed_output
        )
        .map_err(io)?;
        loop {
            write!(output, "[a]pprove / [e]dit / [r]eject > ").map_err(io)?;
            output.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                return Err(ApprovalClosed);
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "a" | "approve" => return Ok(ApprovalDecision::approve()),
                "r" | "reject" => return Ok(ApprovalDecision::reject()),
                "e" | "edit" => {
                    let text = Self::read_edit(input, output).map_err(io)?;
                    if text.is_empty() {
                        writeln!(output, "Edited text must not be empty.").map_err(io)?;
                        continue;
                    }
                    return Ok(ApprovalDecision::edit(text));
                }
                _ => writeln!(output, "Please answer a, e or r.").map_err(io)?,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ApprovalAction;

    fn request() -> ApprovalRequest {
        ApprovalRequest {
            run_id: "r".into(),
            agent_name: "Writer".into(),
            attempt: 1,
            proposed_output: "draft".into(),
        }
    }

    fn ask(input: &str) -> (Result<ApprovalDecision, ApprovalClosed>, String) {
        let approver = ConsoleApprover::new(input.as_bytes(), Vec::new());
        let d = approver.decide(&request());
        let out = approver.io.into_inner().unwrap().1;
        (d, String::from_utf8(out).unwrap())
    }

    #[test]
    fn approve_and_reject() {
        let (d, out) = ask("a\n");
        assert_eq!(d.unwrap().action, ApprovalAction::Approve);
        assert!(out.contains("Writer") && out.contains("draft"));
        assert_eq!(ask("nonsense\nreject\n").0.unwrap().action, ApprovalAction::Reject);
    }

    #[test]
    fn edit_keeps_line_endings() {
        let (d, _) = ask("e\nline one\r\nline two\n\nlast\n.\n");
        assert_eq!(d.unwrap().edited_output.unwrap(), "line one\r\nline two\n\nlast");
        let (d, _) = ask("e\r\na\r\nb\r\n.\r\n");
        assert_eq!(d.unwrap().edited_output.unwrap(), "a\r\nb");
    }

    #[test]
    fn eof_closes_channel() {
        assert_eq!(ask("").0, Err(ApprovalClosed));
    }
}
