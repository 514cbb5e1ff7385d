//! Sequential execution of a validated workflow.
//!
//! Agents fire once each, in chain order. For every agent the runner builds a
//! prompt from its role and task plus the upstream text, calls the model,
//! optionally waits for a human decision on the raw response, applies the
//! agent's postprocessor, and hands the postprocessed text to the next agent.
//! A rejected response triggers a fresh model call for the same agent.

mod approval;
pub mod state;

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use approval::{
    Approver, AutoApprove, ApprovalClosed, ApprovalRequest, ConsoleApprover, ScriptedApprover,
};
pub use state::{step, Event, Phase, ProtocolError, RunState};

use crate::interactions::{
    format_timestamp, Clock, InteractionRecord, InteractionSink, Params, RecordKind, SystemClock,
};
use crate::llm::{CompletionProvider, CompletionRequest, LlmError, Message};
use crate::postprocess::{ExecutionPolicy, PostprocessError, Registry};
use crate::workflow::{chain_order, AgentSpec, ValidationReport, WorkflowDefinition};

const INPUT_OPEN: &str = "### INPUT";
const INPUT_CLOSE: &str = "### END INPUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: String,
    /// Sampling temperature, `[0, 2]`.
    pub creativity: f64,
    /// Nucleus sampling mass, `(0, 1]`.
    pub diversity: f64,
    pub max_tokens: u32,
    /// Injected into the head agent's prompt; callers stringify structured values.
    pub dynamic_input: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "openai/gpt-4o-mini".into(),
            creativity: 0.7,
            diversity: 1.0,
            max_tokens: 1024,
            dynamic_input: String::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.model.trim().is_empty() {
            return Err("model must not be empty".into());
        }
        if !(0.0..=2.0).contains(&self.creativity) {
            return Err(format!("creativity {} is outside [0, 2]", self.creativity));
        }
        if !(self.diversity > 0.0 && self.diversity <= 1.0) {
            return Err(format!("diversity {} is outside (0, 1]", self.diversity));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    fn params(&self) -> Params {
        Params {
            creativity: self.creativity,
            diversity: self.diversity,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutput {
    pub agent_name: String,
    pub raw_output: String,
    pub post_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    /// Postprocessed output of the terminal agent.
    pub final_output: String,
    pub step_outputs: Vec<StepOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApprovalAction {
    Approve,
    Edit,
    Reject,
}

impl fmt::Display for ApprovalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApprovalAction::Approve => "approve",
            ApprovalAction::Edit => "edit",
            ApprovalAction::Reject => "reject",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalDecision {
    pub action: ApprovalAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_output: Option<String>,
}

impl ApprovalDecision {
    pub fn approve() -> Self {
        ApprovalDecision {
            action: ApprovalAction::Approve,
            edited_output: None,
        }
    }

    pub fn reject() -> Self {
        ApprovalDecision {
            action: ApprovalAction::Reject,
            edited_output: None,
        }
    }

    pub fn edit(text: impl Into<String>) -> Self {
        ApprovalDecision {
            action: ApprovalAction::Edit,
            edited_output: Some(text.into()),
        }
    }

    /// `edited_output` is present and non-empty exactly for edits.
    pub fn check(&self) -> Result<(), String> {
        match (self.action, self.edited_output.as_deref()) {
            (ApprovalAction::Edit, Some(t)) if !t.is_empty() => Ok(()),
            (ApprovalAction::Edit, _) => Err("an edit decision needs a non-empty edited_output".into()),
            (_, Some(_)) => Err(format!("edited_output is only allowed with edit, not {}", self.action)),
            (_, None) => Ok(()),
        }
    }
}

/// Progress callbacks; all methods default to no-ops.
pub trait RunObserver: Send + Sync {
    fn on_state(&self, _state: &RunState) {}
    fn on_record(&self, _record: &InteractionRecord) {}
    fn on_step(&self, _step: &StepOutput) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("workflow chain is invalid: {0}")]
    InvalidWorkflow(ValidationReport),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("agent `{agent}` uses unknown postprocessor `{function}`")]
    UnknownPostprocessor { agent: String, function: String },
    #[error("agent `{agent}` attempt {attempt}: model call failed: {source}")]
    Llm {
        agent: String,
        attempt: u32,
        #[source]
        source: LlmError,
    },
    #[error("agent `{agent}`: postprocessor `{function}` failed: {source}")]
    Postprocess {
        agent: String,
        function: String,
        #[source]
        source: PostprocessError,
    },
    #[error("agent `{agent}`: approval aborted")]
    Aborted { agent: String },
    #[error("agent `{agent}`: invalid approval decision: {message}")]
    InvalidDecision { agent: String, message: String },
    #[error("writing interaction log: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Builds the two-message conversation for one agent.
///
/// `input` is the dynamic input for the head agent and the upstream
/// postprocessed output otherwise. An empty input adds no INPUT section.
pub fn build_prompt(agent: &AgentSpec, input: &str) -> Vec<Message> {
    let mut user = agent.what_should_agent_do.clone();
    if !input.is_empty() {
        user.push_str("\n\n");
        user.push_str(INPUT_OPEN);
        user.push('\n');
        user.push_str(input);
        user.push('\n');
        user.push_str(INPUT_CLOSE);
    }
    vec![Message::system(agent.role_of_agent.clone()), Message::user(user)]
}

/// Borrowed collaborators for one run.
pub struct RunContext<'a> {
    pub llm: &'a dyn CompletionProvider,
    pub registry: &'a Registry,
    pub approver: &'a dyn Approver,
    pub sink: &'a dyn InteractionSink,
    pub clock: &'a dyn Clock,
    pub observer: &'a dyn RunObserver,
    pub policy: &'a ExecutionPolicy,
    pub run_id: String,
}

static SYSTEM_CLOCK: SystemClock = SystemClock;
static NOOP: NoopObserver = NoopObserver;

fn default_policy() -> &'static ExecutionPolicy {
    static POLICY: OnceLock<ExecutionPolicy> = OnceLock::new();
    POLICY.get_or_init(ExecutionPolicy::default)
}

impl<'a> RunContext<'a> {
    /// System clock, no observer, default (code-execution-off) policy, random run id.
    pub fn new(
        llm: &'a dyn CompletionProvider,
        registry: &'a Registry,
        approver: &'a dyn Approver,
        sink: &'a dyn InteractionSink,
    ) -> Self {
        RunContext {
            llm,
            registry,
            approver,
            sink,
            clock: &SYSTEM_CLOCK,
            observer: &NOOP,
            policy: default_policy(),
            run_id: uuid::Uuid::new_v4().to_string(),
        }
    }

    pub fn with_clock(mut self, clock: &'a dyn Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_observer(mut self, observer: &'a dyn RunObserver) -> Self {
        self.observer = observer;
        self
    }

    pub fn with_policy(mut self, policy: &'a ExecutionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }
}

/// Checks that can fail before any model call.
pub fn precheck(def: &WorkflowDefinition, config: &RunConfig, registry: &Registry) -> Result<(), RunError> {
    config.validate().map_err(RunError::InvalidConfig)?;
    chain_order(def).map_err(|e| RunError::InvalidWorkflow(e.0))?;
    for agent in &def.agents {
        if !registry.resolves(&agent.postprocessor_function) {
            return Err(RunError::UnknownPostprocessor {
                agent: agent.name_of_agent.clone(),
                function: agent.postprocessor_function.clone(),
            });
        }
    }
    Ok(())
}

struct Runner<'r, 'a> {
    ctx: &'r RunContext<'a>,
    def: &'r WorkflowDefinition,
    config: &'r RunConfig,
    state: RunState,
    seq: u64,
}

struct Entry<'x> {
    kind: RecordKind,
    agent: Option<&'x AgentSpec>,
    attempt: Option<u32>,
    input: String,
    output: String,
}

impl<'r, 'a> Runner<'r, 'a> {
    fn transition(&mut self, event: Event) -> Result<(), RunError> {
        self.state = step(&self.state, &event)?;
        self.ctx.observer.on_state(&self.state);
        Ok(())
    }

    fn record(&mut self, entry: Entry<'_>, extra: impl FnOnce(&mut InteractionRecord)) -> Result<(), RunError> {
        self.seq += 1;
        let mut rec = InteractionRecord {
            seq: self.seq,
            run_id: self.ctx.run_id.clone(),
            kind: entry.kind,
            agent_name: entry.agent.map(|a| a.name_of_agent.clone()),
            agent_role: entry.agent.map(|a| a.role_of_agent.clone()),
            attempt: entry.attempt,
            input: entry.input,
            output: entry.output,
            model: self.config.model.clone(),
            params: self.config.params(),
            timestamp: format_timestamp(self.ctx.clock.now()),
            function: None,
            edited_output: None,
            side_effects: Vec::new(),
            error: None,
        };
        extra(&mut rec);
        self.ctx.sink.append(&rec)?;
        self.ctx.observer.on_record(&rec);
        Ok(())
    }

    /// Writes `run_end` and moves to `Failed` (if not already there).
    fn fail(&mut self, err: RunError, event: Option<Event>) -> RunError {
        if let Some(event) = event {
            if let Err(e) = self.transition(event) {
                tracing::error!(error = %e, "failure transition rejected");
            }
        }
        let message = err.to_string();
        let end = Entry {
            kind: RecordKind::RunEnd,
            agent: None,
            attempt: None,
            input: String::new(),
            output: String::new(),
        };
        if let Err(e) = self.record(end, |r| r.error = Some(message)) {
            tracing::error!(error = %e, "could not write run_end record");
        }
        err
    }

    fn run(&mut self) -> Result<RunResult, RunError> {
        self.transition(Event::Loaded)?;
        let start = Entry {
            kind: RecordKind::RunStart,
            agent: None,
            attempt: None,
            input: self.def.flow_description.clone(),
            output: self.config.dynamic_input.clone(),
        };
        self.record(start, |_| {})?;

        if let Err(e) = precheck(self.def, self.config, self.ctx.registry) {
            return Err(self.fail(e, Some(Event::ValidationFailed)));
        }
        let order = chain_order(self.def).expect("prechecked").agents;
        self.transition(Event::Validated {
            head: order[0].name_of_agent.clone(),
        })?;

        let mut steps = Vec::with_capacity(order.len());
        let mut upstream = self.config.dynamic_input.clone();
        for (idx, agent) in order.iter().enumerate() {
            let raw = self.obtain_approved_output(agent, &upstream)?;
            let post = self.postprocess(agent, &raw)?;
            let step = StepOutput {
                agent_name: agent.name_of_agent.clone(),
                raw_output: raw,
                post_output: post.clone(),
            };
            self.ctx.observer.on_step(&step);
            steps.push(step);
            let next = order.get(idx + 1).map(|a| a.name_of_agent.clone());
            let advancing = next.is_some();
            self.transition(Event::PostprocessDone { next })?;
            if advancing {
                self.transition(Event::Advanced)?;
            }
            upstream = post;
        }

        let final_output = steps.last().map(|s| s.post_output.clone()).unwrap_or_default();
        let end = Entry {
            kind: RecordKind::RunEnd,
            agent: None,
            attempt: None,
            input: String::new(),
            output: final_output.clone(),
        };
        self.record(end, |_| {})?;
        Ok(RunResult {
            final_output,
            step_outputs: steps,
        })
    }

    /// Calls the model until the response is accepted; returns the approved raw text.
    fn obtain_approved_output(&mut self, agent: &AgentSpec, input: &str) -> Result<String, RunError> {
        let messages = build_prompt(agent, input);
        let prompt = messages[1].content.clone();
        loop {
            let attempt = self.state.attempt;
            let req = CompletionRequest::new(
                self.config.model.clone(),
                messages.clone(),
                self.config.creativity,
                self.config.diversity,
                self.config.max_tokens,
            );
            let result = self.ctx.llm.complete(&req);
            let call = Entry {
                kind: RecordKind::LlmCall,
                agent: Some(agent),
                attempt: Some(attempt),
                input: prompt.clone(),
                output: result.as_ref().map(|r| r.text.clone()).unwrap_or_default(),
            };
            let raw = match result {
                Ok(resp) => {
                    self.record(call, |_| {})?;
                    resp.text
                }
                Err(source) => {
                    let message = source.to_string();
                    self.record(call, |r| r.error = Some(message))?;
                    let err = RunError::Llm {
                        agent: agent.name_of_agent.clone(),
                        attempt,
                        source,
                    };
                    return Err(self.fail(err, Some(Event::LlmFailed)));
                }
            };

            let gated = agent.require_human_approval_of_response;
            self.transition(Event::LlmResponded {
                approval_required: gated,
            })?;
            if !gated {
                return Ok(raw);
            }

            let request = ApprovalRequest {
                run_id: self.ctx.run_id.clone(),
                agent_name: agent.name_of_agent.clone(),
                attempt,
                proposed_output: raw.clone(),
            };
            let decision = match self.ctx.approver.decide(&request) {
                Ok(d) => d,
                Err(ApprovalClosed) => {
                    let err = RunError::Aborted {
                        agent: agent.name_of_agent.clone(),
                    };
                    return Err(self.fail(err, Some(Event::ApprovalClosed)));
                }
            };
            if let Err(message) = decision.check() {
                let err = RunError::InvalidDecision {
                    agent: agent.name_of_agent.clone(),
                    message,
                };
                return Err(self.fail(err, Some(Event::ApprovalClosed)));
            }
            let event = Entry {
                kind: RecordKind::ApprovalEvent,
                agent: Some(agent),
                attempt: Some(attempt),
                input: raw.clone(),
                output: decision.action.to_string(),
            };
            let edited = decision.edited_output.clone();
            self.record(event, |r| r.edited_output = edited)?;
            self.transition(Event::Decision(decision.action))?;
            match decision.action {
                ApprovalAction::Approve => return Ok(raw),
                ApprovalAction::Edit => return Ok(decision.edited_output.unwrap_or_default()),
                ApprovalAction::Reject => continue,
            }
        }
    }

    fn postprocess(&mut self, agent: &AgentSpec, raw: &str) -> Result<String, RunError> {
        let function = agent.postprocessor_function.clone();
        let entry = |output: String| Entry {
            kind: RecordKind::Postprocess,
            agent: Some(agent),
            attempt: Some(self.state.attempt),
            input: raw.to_owned(),
            output,
        };
        match self.ctx.registry.apply(&function, raw, self.ctx.policy) {
            Ok(result) => {
                // Side-effect-only functions and empty replacements keep the chain fed.
                let post = match result.output {
                    Some(text) if !(text.is_empty() && !raw.is_empty()) => text,
                    _ => raw.to_owned(),
                };
                let e = entry(post.clone());
                let effects = result.side_effects;
                self.record(e, |r| {
                    r.function = Some(function);
                    r.side_effects = effects;
                })?;
                Ok(post)
            }
            Err(source) => {
                let e = entry(String::new());
                let message = source.to_string();
                let f = function.clone();
                self.record(e, |r| {
                    r.function = Some(f);
                    r.error = Some(message);
                })?;
                let err = RunError::Postprocess {
                    agent: agent.name_of_agent.clone(),
                    function,
                    source,
                };
                Err(self.fail(err, Some(Event::PostprocessFailed)))
            }
        }
    }
}

/// Runs `def` to completion or failure.
///
/// Every model call, approval decision and postprocessor result is appended
/// to `ctx.sink`; on failure a `run_end` record carrying the error is written
/// before returning.
pub fn run_workflow(def: &WorkflowDefinition, config: &RunConfig, ctx: &RunContext<'_>) -> Result<RunResult, RunError> {
    let mut runner = Runner {
        ctx,
        def,
        config,
        state: RunState::initial(),
        seq: 0,
    };
    runner.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::MemorySink;
    use crate::llm::{EchoProvider, ScriptedProvider};
    use crate::workflow::NONE_SENTINEL;

    fn agent(name: &str, head: bool, next: &str, gated: bool, post: &str) -> AgentSpec {
        AgentSpec {
            head,
            name_of_agent: name.into(),
            role_of_agent: format!("{name} role"),
            what_should_agent_do: format!("{name} task"),
            require_human_approval_of_response: gated,
            postprocessor_function: post.into(),
            next: next.into(),
        }
    }

    fn workflow(agents: Vec<AgentSpec>) -> WorkflowDefinition {
        WorkflowDefinition {
            flow_description: "test".into(),
            agents,
            source_stem: "test".into(),
        }
    }

    fn config() -> RunConfig {
        RunConfig {
            model: "mock/x".into(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn prompt_without_input_is_task_only() {
        let a = agent("A", true, NONE_SENTINEL, false, NONE_SENTINEL);
        let m = build_prompt(&a, "");
        assert_eq!(m.len(), 2);
        assert_eq!(m[0], Message::system("A role"));
        assert_eq!(m[1].content, "A task");
    }

    #[test]
    fn prompt_with_upstream_ends_with_input_section() {
        let a = agent("B", false, NONE_SENTINEL, false, NONE_SENTINEL);
        let m = build_prompt(&a, "HELLO");
        assert!(m[1].content.starts_with("B task"));
        assert!(m[1].content.ends_with("### INPUT\nHELLO\n### END INPUT"));
        assert_eq!(build_prompt(&a, "HELLO"), m);
    }

    #[test]
    fn identity_pipeline() {
        let def = workflow(vec![agent("A", true, NONE_SENTINEL, false, NONE_SENTINEL)]);
        let llm = ScriptedProvider::sequence(["X"]);
        let registry = Registry::with_builtins();
        let sink = MemorySink::new();
        let ctx = RunContext::new(&llm, &registry, &AutoApprove, &sink);
        let result = run_workflow(&def, &config(), &ctx).unwrap();
        assert_eq!(result.final_output, "X");
        assert_eq!(
            result.step_outputs,
            vec![StepOutput {
                agent_name: "A".into(),
                raw_output: "X".into(),
                post_output: "X".into()
            }]
        );
        let kinds: Vec<RecordKind> = sink.records().iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            [RecordKind::RunStart, RecordKind::LlmCall, RecordKind::Postprocess, RecordKind::RunEnd]
        );
    }

    #[test]
    fn reject_twice_then_approve() {
        let def = workflow(vec![
            agent("A", true, "B", true, NONE_SENTINEL),
            agent("B", false, NONE_SENTINEL, false, NONE_SENTINEL),
        ]);
        let llm = ScriptedProvider::sequence(["a1", "a2", "a3", "b1"]);
        let registry = Registry::new();
        let sink = MemorySink::new();
        let approver = ScriptedApprover::new([
            ApprovalDecision::reject(),
            ApprovalDecision::reject(),
            ApprovalDecision::approve(),
        ]);
        let ctx = RunContext::new(&llm, &registry, &approver, &sink);
        let result = run_workflow(&def, &config(), &ctx).unwrap();
        assert_eq!(result.step_outputs.len(), 2);
        assert_eq!(result.step_outputs[0].raw_output, "a3");
        let calls: Vec<(String, u32)> = sink
            .records()
            .iter()
            .filter(|r| r.kind == RecordKind::LlmCall)
            .map(|r| (r.agent_name.clone().unwrap(), r.attempt.unwrap()))
            .collect();
        assert_eq!(
            calls,
            [("A".into(), 1), ("A".into(), 2), ("A".into(), 3), ("B".into(), 1)]
        );
        // B sees the approved third attempt.
        assert!(llm.calls()[3].messages[1].content.contains("a3"));
    }

    #[test]
    fn edit_replaces_raw_output() {
        let def = workflow(vec![
            agent("A", true, "B", true, NONE_SENTINEL),
            agent("B", false, NONE_SENTINEL, false, NONE_SENTINEL),
        ]);
        let registry = Registry::new();
        let sink = MemorySink::new();
        let approver = ScriptedApprover::new([ApprovalDecision::edit("FIXED")]);
        let ctx = RunContext::new(&EchoProvider, &registry, &approver, &sink);
        let result = run_workflow(&def, &config(), &ctx).unwrap();
        assert_eq!(result.step_outputs[0].raw_output, "FIXED");
        assert!(result.final_output.contains("### INPUT\nFIXED\n"));
        let ev = sink.records().into_iter().find(|r| r.kind == RecordKind::ApprovalEvent).unwrap();
        assert_eq!(ev.output, "edit");
        assert_eq!(ev.edited_output.as_deref(), Some("FIXED"));
    }

    #[test]
    fn approval_gates_before_postprocessing() {
        let def = workflow(vec![agent("A", true, NONE_SENTINEL, true, "trimtoonly50chars")]);
        let long = "z".repeat(80);
        let llm = ScriptedProvider::sequence([long.clone()]);
        let registry = Registry::with_builtins();
        let sink = MemorySink::new();
        let approver = ScriptedApprover::new([ApprovalDecision::approve()]);
        let ctx = RunContext::new(&llm, &registry, &approver, &sink);
        let result = run_workflow(&def, &config(), &ctx).unwrap();
        let seen = approver.requests();
        assert_eq!(seen[0].proposed_output, long);
        assert_eq!(result.final_output, "z".repeat(50));
    }

    #[test]
    fn closed_approval_aborts_and_logs() {
        let def = workflow(vec![agent("A", true, NONE_SENTINEL, true, NONE_SENTINEL)]);
        let llm = ScriptedProvider::sequence(["a"]);
        let registry = Registry::new();
        let sink = MemorySink::new();
        let approver = ScriptedApprover::new([]);
        let ctx = RunContext::new(&llm, &registry, &approver, &sink);
        let err = run_workflow(&def, &config(), &ctx).unwrap_err();
        assert!(matches!(err, RunError::Aborted { .. }));
        let last = sink.records().pop().unwrap();
        assert_eq!(last.kind, RecordKind::RunEnd);
        assert!(last.error.unwrap().contains("aborted"));
    }

    #[test]
    fn llm_failure_is_logged_and_fails_run() {
        let def = workflow(vec![
            agent("A", true, "B", false, NONE_SENTINEL),
            agent("B", false, NONE_SENTINEL, false, NONE_SENTINEL),
        ]);
        let llm = ScriptedProvider::sequence(["only one"]);
        let registry = Registry::new();
        let sink = MemorySink::new();
        let ctx = RunContext::new(&llm, &registry, &AutoApprove, &sink);
        let err = run_workflow(&def, &config(), &ctx).unwrap_err();
        assert!(matches!(err, RunError::Llm { ref agent, attempt: 1, .. } if agent == "B"));
        let records = sink.records();
        let llm_calls = records.iter().filter(|r| r.kind == RecordKind::LlmCall).count();
        assert_eq!(llm_calls, llm.call_count());
        assert!(records[records.len() - 2].error.is_some());
    }

    #[test]
    fn unknown_postprocessor_fails_before_any_call() {
        let def = workflow(vec![agent("A", true, NONE_SENTINEL, false, "nope")]);
        let llm = ScriptedProvider::sequence(["a"]);
        let registry = Registry::with_builtins();
        let sink = MemorySink::new();
        let ctx = RunContext::new(&llm, &registry, &AutoApprove, &sink);
        let err = run_workflow(&def, &config(), &ctx).unwrap_err();
        assert!(matches!(err, RunError::UnknownPostprocessor { ref function, .. } if function == "nope"));
        assert_eq!(llm.call_count(), 0);
    }

    #[test]
    fn postprocessor_error_names_agent_and_function() {
        let def = workflow(vec![agent("A", true, NONE_SENTINEL, false, "execute_code")]);
        let llm = ScriptedProvider::sequence(["print(1)"]);
        let registry = Registry::with_builtins();
        let sink = MemorySink::new();
        let ctx = RunContext::new(&llm, &registry, &AutoApprove, &sink);
        let err = run_workflow(&def, &config(), &ctx).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`A`") && msg.contains("execute_code") && msg.contains("disabled"), "{msg}");
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = config();
        c.creativity = 3.5;
        assert!(c.validate().is_err());
        c.creativity = 1.0;
        c.diversity = 0.0;
        assert!(c.validate().is_err());
        c.diversity = 1.0;
        c.max_tokens = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn observer_sees_states_in_order() {
        #[derive(Default)]
        struct Phases(std::sync::Mutex<Vec<Phase>>);
        impl RunObserver for Phases {
            fn on_state(&self, s: &RunState) {
                self.0.lock().unwrap().push(s.phase);
            }
        }
        let def = workflow(vec![
            agent("A", true, "B", true, NONE_SENTINEL),
            agent("B", false, NONE_SENTINEL, false, NONE_SENTINEL),
        ]);
        let registry = Registry::new();
        let sink = MemorySink::new();
        let obs = Phases::default();
        let ctx = RunContext::new(&EchoProvider, &registry, &AutoApprove, &sink).with_observer(&obs);
        run_workflow(&def, &config(), &ctx).unwrap();
        use Phase::*;
        assert_eq!(
            *obs.0.lock().unwrap(),
            [Validating, AwaitingLlm, AwaitingApproval, Postprocessing, Advancing, AwaitingLlm, Postprocessing, Completed]
        );
    }

    #[test]
    fn decision_invariants() {
        assert!(ApprovalDecision::edit("").check().is_err());
        assert!(ApprovalDecision::edit("x").check().is_ok());
        assert!(ApprovalDecision {
            action: ApprovalAction::Approve,
            edited_output: Some("x".into())
        }
        .check()
        .is_err());
    }
}
