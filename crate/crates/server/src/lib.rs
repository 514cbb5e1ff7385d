//! Local HTTP facade over the engine.
//!
//! Runs execute on their own OS threads; approval gates park that thread until
//! a decision is POSTed. Clients follow progress by long-polling the event
//! list, whose sequence numbers are contiguous per run.

mod runs;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentchain::engine::{precheck, run_workflow, ApprovalDecision, ApprovalRequest, RunConfig, RunContext};
use agentchain::interactions::{self, JsonlSink, SystemClock};
use agentchain::llm::{Router, RouterConfig};
use agentchain::postprocess::{ExecutionPolicy, Registry};
use agentchain::workflow::{
    parse_workflow_report, validate_chain, validate_document, ValidationMode, ValidationReport, WorkflowDefinition,
};
use agentchain::{Credentials, RunError};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

pub use runs::{RunEvent, RunHandle, STATE_CHANGE};
use runs::{DecideError, RunSlot, SlotApprover, SlotObserver};

pub const TOKEN_ENV: &str = "AGENTCHAIN_TOKEN";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Extra workflow files served by stem; bundled examples are always listed.
    pub workflows_dir: Option<PathBuf>,
    pub interactions_dir: PathBuf,
    /// Built web console assets, mounted at `/ui` when present.
    pub ui_dir: Option<PathBuf>,
    /// When set, every API request needs `Authorization: Bearer <token>`.
    pub token: Option<String>,
    pub body_limit: usize,
    pub default_wait: Duration,
    pub max_wait: Duration,
    /// Base policy; `allow_code_execution` is overridden per run.
    pub policy: ExecutionPolicy,
    pub router: RouterConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8787)),
            workflows_dir: None,
            interactions_dir: PathBuf::from(interactions::DEFAULT_INTERACTIONS_DIR),
            ui_dir: None,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            body_limit: 1 << 20,
            default_wait: Duration::from_secs(25),
            max_wait: Duration::from_secs(60),
            policy: ExecutionPolicy::default(),
            router: RouterConfig::default(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    config: ServiceConfig,
    llm: Arc<Router>,
    registry: Arc<Registry>,
    runs: Mutex<HashMap<String, Arc<RunSlot>>>,
}

impl AppState {
    /// Router over credentials from `.env` and the environment, built-in postprocessors.
    pub fn new(config: ServiceConfig) -> Self {
        let llm = Router::new(config.router.clone(), Credentials::from_env());
        Self::with_parts(config, llm, Registry::with_builtins())
    }

    pub fn with_parts(config: ServiceConfig, llm: Router, registry: Registry) -> Self {
        AppState {
            inner: Arc::new(Shared {
                config,
                llm: Arc::new(llm),
                registry: Arc::new(registry),
                runs: Mutex::default(),
            }),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<RunSlot>, ApiError> {
        self.inner
            .runs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_run", format!("no run with id `{id}`")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    report: Option<ValidationReport>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            report: None,
        }
    }

    fn invalid(report: ValidationReport) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_workflow",
            message: "workflow failed validation".into(),
            report: Some(report),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(report) = self.report {
            body["report"] = serde_json::to_value(report).unwrap_or(Value::Null);
        }
        (self.status, Json(body)).into_response()
    }
}

pub fn app(state: AppState) -> axum::Router {
    let limit = state.inner.config.body_limit;
    let api = axum::Router::new()
        .route("/workflows", get(list_workflows))
        .route("/workflows/validate", post(validate))
        .route("/workflows/{stem}", get(get_workflow))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(run_events))
        .route("/runs/{id}/approvals/pending", get(pending_approval))
        .route("/runs/{id}/approvals", post(post_approval))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(limit));
    let mut router = api.with_state(state.clone());
    if let Some(dir) = state.inner.config.ui_dir.as_ref().filter(|d| d.is_dir()) {
        router = router.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    router
}

/// Binds `config.bind` and serves until the process exits.
pub async fn serve(state: AppState) -> std::io::Result<()> {
    let addr = state.inner.config.bind;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, auth = state.inner.config.token.is_some(), "service listening");
    axum::serve(listener, app(state)).await
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let Some(expected) = state.inner.config.token.as_deref() else {
        return next.run(request).await;
    };
    let supplied = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if supplied == Some(expected) {
        next.run(request).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

fn stored_workflows(config: &ServiceConfig) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = agentchain::corpus::WORKFLOWS
        .iter()
        .map(|(s, t)| (s.to_string(), t.to_string()))
        .collect();
    if let Some(dir) = &config.workflows_dir {
        if let Ok(entries) = std::fs::read_dir(dir) {
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "json") {
                    if let (Some(stem), Ok(text)) = (path.file_stem(), std::fs::read_to_string(&path)) {
                        out.insert(stem.to_string_lossy().into_owned(), text);
                    }
                }
            }
        }
    }
    out
}

async fn list_workflows(State(state): State<AppState>) -> Json<Value> {
    let items: Vec<Value> = stored_workflows(&state.inner.config)
        .into_iter()
        .map(|(stem, text)| {
            let (def, report) = parse_workflow_report(&text, &stem, ValidationMode::Lenient);
            json!({
                "stem": stem,
                "flow_description": def.as_ref().map(|d| d.flow_description.clone()),
                "agents": def.as_ref().map(|d| d.agents.len()),
                "valid": def.is_some() && report.is_accepted(),
            })
        })
        .collect();
    Json(Value::Array(items))
}

async fn get_workflow(State(state): State<AppState>, UrlPath(stem): UrlPath<String>) -> Result<Response, ApiError> {
    let text = stored_workflows(&state.inner.config)
        .remove(&stem)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_workflow", format!("no stored workflow `{stem}`")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

#[derive(Deserialize)]
struct ModeQuery {
    mode: Option<String>,
}

fn parse_json(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", format!("request body is not JSON: {e}")))
}

async fn validate(Query(q): Query<ModeQuery>, body: Bytes) -> Result<Response, ApiError> {
    let mode = match q.mode.as_deref() {
        None => ValidationMode::Strict,
        Some(m) => m
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_mode", e))?,
    };
    parse_json(&body)?;
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))?;
    let report = validate_document(text, mode);
    let status = if report.is_accepted() {
        StatusCode::OK
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    Ok((status, Json(report)).into_response())
}

#[derive(Deserialize)]
struct CreateRun {
    /// Inline workflow document, or the stem of a stored one.
    workflow: Value,
    /// Log name for inline workflows.
    stem: Option<String>,
    #[serde(default)]
    config: RunConfig,
    #[serde(default)]
    unsafe_allow_code_execution: bool,
}

const INLINE_STEM: &str = "inline";

fn resolve_workflow(state: &AppState, req: &CreateRun) -> Result<WorkflowDefinition, ApiError> {
    let (text, stem) = match &req.workflow {
        Value::String(stem) => {
            let text = stored_workflows(&state.inner.config).remove(stem).ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_workflow", format!("no stored workflow `{stem}`"))
            })?;
            (text, stem.clone())
        }
        Value::Object(_) => (
            req.workflow.to_string(),
            req.stem.clone().unwrap_or_else(|| INLINE_STEM.to_owned()),
        ),
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                "`workflow` must be a JSON object or a stored workflow stem",
            ))
        }
    };
    if stem.is_empty() || stem.contains(['/', '\\']) || stem == "." || stem == ".." {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("unusable stem `{stem}`")));
    }
    let (def, report) = parse_workflow_report(&text, &stem, ValidationMode::Lenient);
    let def = def.ok_or_else(|| ApiError::invalid(report))?;
    let chain = validate_chain(&def);
    if !chain.is_accepted() {
        return Err(ApiError::invalid(chain));
    }
    Ok(def)
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<RunHandle>), ApiError> {
    let value = parse_json(&body)?;
    let req: CreateRun = serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    let def = resolve_workflow(&state, &req)?;
    let shared = &state.inner;
    match precheck(&def, &req.config, &shared.registry) {
        Ok(()) => {}
        Err(RunError::InvalidConfig(m)) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", m)),
        Err(e @ RunError::UnknownPostprocessor { .. }) => {
            return Err(ApiError::new(StatusCode::CONFLICT, "unknown_postprocessor", e.to_string()))
        }
        Err(RunError::InvalidWorkflow(report)) => return Err(ApiError::invalid(report)),
        Err(e) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string())),
    }
    shared
        .llm
        .resolve(&req.config.model)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "unknown_model", e.to_string()))?;

    let log = interactions::log_path(&shared.config.interactions_dir, &def.source_stem)
        .and_then(JsonlSink::open)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "log_unavailable", e.to_string()))?;

    let run_id = uuid::Uuid::new_v4().to_string();
    let created_at = interactions::format_timestamp(chrono::Utc::now());
    let slot = RunSlot::new(run_id.clone(), def.source_stem.clone(), created_at);
    shared
        .runs
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(run_id.clone(), slot.clone());

    let policy = ExecutionPolicy {
        allow_code_execution: req.unsafe_allow_code_execution,
        ..shared.config.policy.clone()
    };
    let llm = shared.llm.clone();
    let registry = shared.registry.clone();
    let config = req.config;
    let worker_slot = slot.clone();
    std::thread::Builder::new()
        .name(format!("run-{run_id}"))
        .spawn(move || {
            let approver = SlotApprover(worker_slot.clone());
            let observer = SlotObserver(worker_slot.clone());
            let clock = SystemClock;
            let ctx = RunContext::new(llm.as_ref(), &registry, &approver, &log)
                .with_clock(&clock)
                .with_observer(&observer)
                .with_policy(&policy)
                .with_run_id(run_id);
            let outcome = run_workflow(&def, &config, &ctx).map_err(|e| e.to_string());
            worker_slot.finish(outcome);
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "spawn_failed", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(slot.snapshot())))
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<RunHandle>> {
    let slots: Vec<Arc<RunSlot>> = state
        .inner
        .runs
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .values()
        .cloned()
        .collect();
    let mut handles: Vec<RunHandle> = slots.iter().map(|s| s.snapshot()).collect();
    handles.sort_by(|a, b| a.created_at.cmp(&b.created_at));
    Json(handles)
}

async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<RunHandle>, ApiError> {
    Ok(Json(state.slot(&id)?.snapshot()))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
    wait_ms: Option<u64>,
}

async fn run_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Vec<RunEvent>>, ApiError> {
    let slot = state.slot(&id)?;
    let config = &state.inner.config;
    let wait = q
        .wait_ms
        .map(Duration::from_millis)
        .unwrap_or(config.default_wait)
        .min(config.max_wait);
    let deadline = tokio::time::Instant::now() + wait;
    let mut rx = slot.subscribe();
    loop {
        rx.borrow_and_update();
        let (events, finished) = slot.events_after(q.after);
        if !events.is_empty() || finished {
            return Ok(Json(events));
        }
        match tokio::time::timeout_at(deadline, rx.changed()).await {
            Ok(Ok(())) => continue,
            _ => return Ok(Json(Vec::new())),
        }
    }
}

async fn pending_approval(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Option<ApprovalRequest>>, ApiError> {
    Ok(Json(state.slot(&id)?.pending()))
}

#[derive(Deserialize)]
struct DecisionBody {
    #[serde(flatten)]
    decision: ApprovalDecision,
    /// With `attempt`, names the gate being answered so replays are safe.
    agent_name: Option<String>,
    attempt: Option<u32>,
}

async fn post_approval(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let slot = state.slot(&id)?;
    let body: DecisionBody = serde_json::from_value(parse_json(&body)?)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    body.decision
        .check()
        .map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "invalid_decision", m))?;
    let key = match (body.agent_name, body.attempt) {
        (Some(a), Some(n)) => Some((a, n)),
        (None, None) => None,
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                "`agent_name` and `attempt` must be given together",
            ))
        }
    };
    match slot.decide(key, body.decision) {
        Ok(_) => Ok(StatusCode::NO_CONTENT),
        Err(DecideError::NoPending) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "no_pending_approval",
            "the run is not waiting for this approval",
        )),
        Err(DecideError::Conflict(m)) => Err(ApiError::new(StatusCode::CONFLICT, "decision_conflict", m)),
    }
}

/// Service configuration file shape (`agentchain serve --config`).
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub bind: Option<SocketAddr>,
    pub workflows_dir: Option<PathBuf>,
    pub interactions_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub body_limit: Option<usize>,
    pub policy: Option<ExecutionPolicy>,
    pub router: Option<RouterConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn apply(self, mut config: ServiceConfig) -> ServiceConfig {
        if let Some(v) = self.bind {
            config.bind = v;
        }
        if self.workflows_dir.is_some() {
            config.workflows_dir = self.workflows_dir;
        }
        if let Some(v) = self.interactions_dir {
            config.interactions_dir = v;
        }
        if self.ui_dir.is_some() {
            config.ui_dir = self.ui_dir;
        }
        if let Some(v) = self.body_limit {
            config.body_limit = v;
        }
        if let Some(v) = self.policy {
            config.policy = v;
        }
        if let Some(v) = self.router {
            config.router = v;
        }
        config
    }
}
