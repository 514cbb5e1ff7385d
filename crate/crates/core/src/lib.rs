//! Declarative orchestration of chained LLM agents.
//!
//! A workflow is a JSON document listing agents linked from a single head by
//! `next` pointers. [`run`] loads one, calls each agent's model in chain order,
//! pauses for human approval where requested, applies named postprocessors,
//! and appends every interaction to a JSON Lines log.

pub mod corpus;
pub mod engine;
pub mod interactions;
pub mod llm;
pub mod postprocess;
pub mod workflow;

use std::io::{self, BufReader};
use std::path::Path;

pub use engine::{
    run_workflow, ApprovalAction, ApprovalDecision, Approver, RunConfig, RunContext, RunError, RunResult,
    StepOutput,
};
pub use interactions::{InteractionRecord, JsonlSink, DEFAULT_INTERACTIONS_DIR};
pub use llm::{CompletionProvider, Credentials, Router, RouterConfig};
pub use postprocess::{ExecutionPolicy, Registry};
pub use workflow::{load_workflow, LoadError, ValidationMode, ValidationReport, WorkflowDefinition};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("opening interaction log: {0}")]
    Log(#[from] io::Error),
}

/// Runs the workflow at `workflow_path` with terminal approvals.
///
/// Credentials come from `.env` and the process environment; interactions go
/// to `./Interactions/<stem>_interactions.json`. Returns the terminal agent's
/// postprocessed output and every step in order.
pub fn run(
    workflow_path: impl AsRef<Path>,
    dynamic_input: &str,
    model: &str,
    creativity: f64,
    diversity: f64,
    max_tokens: u32,
) -> Result<(String, Vec<StepOutput>), Error> {
    let def = load_workflow(workflow_path.as_ref(), ValidationMode::Lenient)?;
    let router = Router::new(RouterConfig::default(), Credentials::from_env());
    let registry = Registry::with_builtins();
    let approver = engine::ConsoleApprover::new(BufReader::new(io::stdin()), io::stdout());
    let sink = JsonlSink::open(interactions::log_path(Path::new(DEFAULT_INTERACTIONS_DIR), &def.source_stem)?)?;
    let config = RunConfig {
        model: model.to_owned(),
        creativity,
        diversity,
        max_tokens,
        dynamic_input: dynamic_input.to_owned(),
    };
    let ctx = RunContext::new(&router, &registry, &approver, &sink);
    let result = run_workflow(&def, &config, &ctx)?;
    Ok((result.final_output, result.step_outputs))
}
