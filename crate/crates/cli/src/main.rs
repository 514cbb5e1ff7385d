//! `agentchain` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or usage failure, 2 runtime failure.

use std::io::{self, BufReader, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use agentchain::engine::{
    precheck, run_workflow, ApprovalDecision, Approver, AutoApprove, ConsoleApprover, RunConfig, RunContext,
    RunObserver, ScriptedApprover, StepOutput,
};
use agentchain::interactions::{self, JsonlSink, DEFAULT_INTERACTIONS_DIR};
use agentchain::llm::{CompletionProvider, Credentials, Router, RouterConfig, ScriptedProvider};
use agentchain::postprocess::{ExecutionPolicy, Registry};
use agentchain::workflow::{
    parse_workflow, validate_chain, validate_document, ValidationMode, ValidationReport,
    WorkflowDefinition,
};
use agentchain::RunError;
use agentchain_server::{AppState, ConfigFile, ServiceConfig};
use clap::{Args, Parser, Subcommand};

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "agentchain", version, about = "Run declarative chains of LLM agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a workflow file (or a bundled workflow by stem).
    Run(RunArgs),
    /// Check a workflow document; exit 0 iff it is accepted.
    Validate(ValidateArgs),
    /// List bundled workflows and those in a directory.
    List(ListArgs),
    /// Show a workflow's interaction log.
    Logs(LogsArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    workflow: String,
    #[arg(long, default_value = "openai/gpt-4o-mini")]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    creativity: f64,
    #[arg(long, default_value_t = 1.0)]
    diversity: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Dynamic input for the head agent.
    #[arg(long, conflicts_with = "input_file")]
    input: Option<String>,
    #[arg(long)]
    input_file: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_INTERACTIONS_DIR)]
    interactions_dir: PathBuf,
    /// Reject documents that deviate from the exact schema.
    #[arg(long)]
    strict: bool,
    /// Approve every gate without prompting.
    #[arg(long, conflicts_with = "approval_script")]
    yes: bool,
    /// JSON array of decisions answered in order, e.g. `[{"action":"reject"},{"action":"approve"}]`.
    #[arg(long)]
    approval_script: Option<PathBuf>,
    /// Allow postprocessors that execute model-generated code.
    #[arg(long)]
    unsafe_allow_code_execution: bool,
    /// Interpreter command line for code execution.
    #[arg(long)]
    interpreter: Option<String>,
    /// JSON array (sequence) or object keyed by prompt hash; replaces the model provider.
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    workflow: String,
    #[arg(long)]
    strict: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ListArgs {
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct LogsArgs {
    /// Workflow file or stem.
    workflow: String,
    #[arg(long, default_value = DEFAULT_INTERACTIONS_DIR)]
    interactions_dir: PathBuf,
    /// Print all records as one JSON array.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    /// JSON service configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workflows_dir: Option<PathBuf>,
    #[arg(long)]
    interactions_dir: Option<PathBuf>,
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

/// A failure with its exit code; the message is printed to stderr.
struct Failure(u8, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(EXIT_INVALID, msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        Failure(EXIT_RUNTIME, msg.into())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::List(a) => cmd_list(a),
        Command::Logs(a) => cmd_logs(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn mode(strict: bool) -> ValidationMode {
    if strict {
        ValidationMode::Strict
    } else {
        ValidationMode::Lenient
    }
}

/// Document text and stem for a file path or a bundled workflow stem.
fn read_source(workflow: &str) -> Result<(String, String), Failure> {
    let path = Path::new(workflow);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{workflow}: {e}")))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "workflow".into());
        return Ok((text, stem));
    }
    agentchain::corpus::get(workflow)
        .map(|t| (t.to_owned(), workflow.to_owned()))
        .ok_or_else(|| Failure::invalid(format!("{workflow}: no such file or bundled workflow")))
}

fn report_failure(source: &str, report: &ValidationReport) -> Failure {
    Failure::invalid(format!("{source} failed validation:\n{report}"))
}

fn load(workflow: &str, strict: bool) -> Result<WorkflowDefinition, Failure> {
    let (text, stem) = read_source(workflow)?;
    let def = parse_workflow(&text, &stem, mode(strict)).map_err(|r| report_failure(workflow, &r))?;
    let chain = validate_chain(&def);
    if !chain.is_accepted() {
        return Err(report_failure(workflow, &chain));
    }
    Ok(def)
}

struct PrintSteps;

impl RunObserver for PrintSteps {
    fn on_step(&self, step: &StepOutput) {
        let mut out = io::stdout().lock();
        let _ = writeln!(out, "\n=== {} ===\n{}", step.agent_name, step.post_output);
        let _ = out.flush();
    }
}

fn approver_for(args: &RunArgs, def: &WorkflowDefinition) -> Result<Box<dyn Approver>, Failure> {
    if args.yes {
        return Ok(Box::new(AutoApprove));
    }
    if let Some(path) = &args.approval_script {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        let decisions: Vec<ApprovalDecision> = serde_json::from_str(&text)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        return Ok(Box::new(ScriptedApprover::new(decisions)));
    }
    let gated = def.agents.iter().any(|a| a.require_human_approval_of_response);
    if gated && !io::stdin().is_terminal() {
        return Err(Failure::invalid(
            "this workflow has approval gates; run it in a terminal or pass --yes or --approval-script",
        ));
    }
    Ok(Box::new(ConsoleApprover::new(BufReader::new(io::stdin()), io::stdout())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let def = load(&args.workflow, args.strict)?;
    let dynamic_input = match (&args.input, &args.input_file) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?,
        (None, None) => String::new(),
    };
    let config = RunConfig {
        model: args.model.clone(),
        creativity: args.creativity,
        diversity: args.diversity,
        max_tokens: args.max_tokens,
        dynamic_input,
    };
    let mut policy = ExecutionPolicy {
        allow_code_execution: args.unsafe_allow_code_execution,
        ..ExecutionPolicy::default()
    };
    if let Some(cmd) = &args.interpreter {
        policy.interpreter_cmd = cmd.split_whitespace().map(str::to_owned).collect();
    }
    let registry = Registry::with_builtins();
    precheck(&def, &config, &registry).map_err(|e| Failure::invalid(e.to_string()))?;

    let llm: Arc<dyn CompletionProvider> = match &args.mock_script {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
            Arc::new(ScriptedProvider::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?)
        }
        None => Arc::new(Router::new(RouterConfig::default(), Credentials::from_env())),
    };
    let approver = approver_for(&args, &def)?;
    let log_path = interactions::log_path(&args.interactions_dir, &def.source_stem)
        .map_err(|e| Failure::runtime(format!("{}: {e}", args.interactions_dir.display())))?;
    let sink = JsonlSink::open(&log_path).map_err(|e| Failure::runtime(format!("{}: {e}", log_path.display())))?;

    let observer = PrintSteps;
    let ctx = RunContext::new(llm.as_ref(), &registry, approver.as_ref(), &sink)
        .with_observer(&observer)
        .with_policy(&policy);
    match run_workflow(&def, &config, &ctx) {
        Ok(result) => {
            println!("\n=== Final output ===\n{}", result.final_output);
            eprintln!("interactions logged to {}", log_path.display());
            Ok(())
        }
        Err(e @ (RunError::InvalidWorkflow(_) | RunError::InvalidConfig(_) | RunError::UnknownPostprocessor { .. })) => {
            Err(Failure::invalid(e.to_string()))
        }
        Err(e) => Err(Failure::runtime(format!("{e} (log: {})", log_path.display()))),
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let (text, _) = read_source(&args.workflow)?;
    let report = validate_document(&text, mode(args.strict));
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("{report}");
        for w in &report.warnings {
            eprintln!("warning: {}: {}", w.path, w.message);
        }
    }
    if report.is_accepted() {
        Ok(())
    } else {
        Err(Failure(EXIT_INVALID, format!("{} is not a valid workflow", args.workflow)))
    }
}

fn cmd_list(args: ListArgs) -> Result<(), Failure> {
    let mut rows: Vec<(String, String)> = agentchain::corpus::WORKFLOWS
        .iter()
        .map(|(s, t)| (format!("{s} (bundled)"), t.to_string()))
        .collect();
    if let Some(dir) = &args.dir {
        let entries = std::fs::read_dir(dir).map_err(|e| Failure::invalid(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for path in files {
            if let Ok(text) = std::fs::read_to_string(&path) {
                rows.push((path.display().to_string(), text));
            }
        }
    }
    for (name, text) in rows {
        match parse_workflow(&text, "listed", ValidationMode::Lenient) {
            Ok(def) => println!("{name}\t{} agent(s)\t{}", def.agents.len(), def.flow_description),
            Err(_) => println!("{name}\tinvalid"),
        }
    }
    Ok(())
}

fn cmd_logs(args: LogsArgs) -> Result<(), Failure> {
    let stem = Path::new(&args.workflow)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.workflow.clone());
    let path = args.interactions_dir.join(format!("{stem}_interactions.json"));
    if !path.exists() {
        return Err(Failure::invalid(format!("no interaction log at {}", path.display())));
    }
    let records = interactions::load(&path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&records).expect("records serialize"));
        return Ok(());
    }
    for (run_id, recs) in interactions::group_by_run(&records) {
        println!("run {run_id} ({} records)", recs.len());
        for r in recs {
            let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            let who = match (&r.agent_name, r.attempt) {
                (Some(a), Some(n)) => format!(" {a} (attempt {n})"),
                (Some(a), None) => format!(" {a}"),
                _ => String::new(),
            };
            println!("  #{} {} {kind}{who}", r.seq, r.timestamp);
            if let Some(f) = &r.function {
                println!("    function: {f}");
            }
            if !r.output.is_empty() {
                println!("    output: {}", r.output.replace('\n', "\n            "));
            }
            if let Some(e) = &r.error {
                println!("    error: {e}");
            }
        }
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let mut config = ServiceConfig::default();
    if let Some(path) = &args.config {
        config = ConfigFile::load(path).map_err(Failure::invalid)?.apply(config);
    }
    if let Some(v) = args.bind {
        config.bind = v;
    }
    if args.workflows_dir.is_some() {
        config.workflows_dir = args.workflows_dir;
    }
    if let Some(v) = args.interactions_dir {
        config.interactions_dir = v;
    }
    if args.ui_dir.is_some() {
        config.ui_dir = args.ui_dir;
    }
    if !config.bind.ip().is_loopback() && config.token.is_none() {
        return Err(Failure::invalid(format!(
            "refusing to bind {} without {} set",
            config.bind,
            agentchain_server::TOKEN_ENV
        )));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime(e.to_string()))?;
    runtime
        .block_on(agentchain_server::serve(AppState::new(config)))
        .map_err(|e| Failure::runtime(e.to_string()))
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn yes_conflicts_with_approval_script() {
        let r = Cli::try_parse_from(["agentchain", "run", "w.json", "--yes", "--approval-script", "a.json"]);
        assert!(r.is_err());
    }

    #[test]
    fn input_conflicts_with_input_file() {
        let r = Cli::try_parse_from(["agentchain", "run", "w.json", "--input", "x", "--input-file", "f"]);
        assert!(r.is_err());
    }
}
