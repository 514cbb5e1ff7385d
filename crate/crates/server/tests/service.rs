use std::sync::Arc;
use std::time::Duration;

use agentchain::llm::{Credentials, Router, RouterConfig, ScriptedProvider};
use agentchain::postprocess::Registry;
use agentchain_server::{app, AppState, ServiceConfig};
use reqwest::StatusCode;
use serde_json::{json, Value};

const TWO_AGENT: &str = include_str!("../../core/tests/fixtures/two-agent-example.json");

struct Service {
    base: String,
    client: reqwest::Client,
    _logs: tempfile::TempDir,
}

impl Service {
    async fn start(mock: Option<Arc<ScriptedProvider>>, token: Option<&str>) -> Self {
        let logs = tempfile::tempdir().unwrap();
        let config = ServiceConfig {
            interactions_dir: logs.path().to_path_buf(),
            token: token.map(str::to_owned),
            body_limit: 64 * 1024,
            ..ServiceConfig::default()
        };
        let mut router = Router::new(RouterConfig::default(), Credentials::empty());
        if let Some(m) = mock {
            router = router.with_mock(m);
        }
        let state = AppState::with_parts(config, router, Registry::with_builtins());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app(state)).await.unwrap() });
        Service {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
            _logs: logs,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self.client.post(self.url(path)).json(body).send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    async fn create(&self, workflow: Value, config: Value) -> String {
        let (status, body) = self.post("/runs", &json!({ "workflow": workflow, "config": config })).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["run_id"].as_str().unwrap().to_owned()
    }

    async fn wait_finished(&self, id: &str) -> Value {
        for _ in 0..500 {
            let (_, run) = self.get(&format!("/runs/{id}")).await;
            if run["finished"] == json!(true) {
                return run;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("run {id} did not finish");
    }

    async fn wait_pending(&self, id: &str) -> Value {
        for _ in 0..500 {
            let (_, pending) = self.get(&format!("/runs/{id}/approvals/pending")).await;
            if !pending.is_null() {
                return pending;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("run {id} never asked for approval");
    }
}

fn single_agent(post: &str, gated: bool) -> Value {
    json!({
        "flow_description": "one step",
        "agents": [{
            "head": "True",
            "name_of_agent": "Solo",
            "role_of_agent": "Echo",
            "what_should_agent_do": "Repeat",
            "require_human_approval_of_response": if gated { "True" } else { "False" },
            "postprocessor_function": post,
            "next": "None"
        }]
    })
}

fn echo() -> Value {
    json!({ "model": "mock/echo" })
}

#[tokio::test]
async fn validate_endpoint_statuses() {
    let svc = Service::start(None, None).await;
    let two: Value = serde_json::from_str(TWO_AGENT).unwrap();
    let (s, body) = svc.post("/workflows/validate?mode=strict", &two).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["violations"], json!([]));

    let (s, body) = svc.post("/workflows/validate", &json!({"flow_description": "x", "agents": []})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"][0]["code"], "MIN_ITEMS");
    assert_eq!(body["violations"][0]["path"], "/agents");

    let foodtruck: Value = serde_json::from_str(agentchain::corpus::get("foodtruck-website").unwrap()).unwrap();
    let (s, body) = svc.post("/workflows/validate?mode=strict", &foodtruck).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.to_string().contains("require_human_approval_of_response?"));
    let (s, _) = svc.post("/workflows/validate?mode=lenient", &foodtruck).await;
    assert_eq!(s, StatusCode::OK);

    let resp = svc
        .client
        .post(svc.url("/workflows/validate"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let huge = json!({ "flow_description": "x".repeat(100 * 1024), "agents": [] });
    let (s, _) = svc.post("/workflows/validate", &huge).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn happy_path_single_agent() {
    let svc = Service::start(None, None).await;
    let id = svc
        .create(single_agent("None", false), json!({ "model": "mock/echo", "dynamic_input": "ping" }))
        .await;
    let run = svc.wait_finished(&id).await;
    assert_eq!(run["state"]["phase"], "completed");
    assert!(run["result"]["final_output"].as_str().unwrap().contains("ping"));

    let (_, events) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    let events = events.as_array().unwrap();
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(events.last().unwrap()["kind"], "run_end");

    let last = seqs.len();
    let started = std::time::Instant::now();
    let (_, none) = svc.get(&format!("/runs/{id}/events?after={last}&wait_ms=2000")).await;
    assert_eq!(none, json!([]));
    // Finished runs answer at once.
    assert!(started.elapsed() < Duration::from_millis(1500));
}

#[tokio::test]
async fn long_poll_times_out_on_a_parked_run() {
    let svc = Service::start(None, None).await;
    let id = svc.create(single_agent("None", true), echo()).await;
    svc.wait_pending(&id).await;
    let (_, events) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    let last = events.as_array().unwrap().len();
    let started = std::time::Instant::now();
    let (s, none) = svc.get(&format!("/runs/{id}/events?after={last}&wait_ms=300")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(none, json!([]));
    assert!(started.elapsed() >= Duration::from_millis(250));
}

#[tokio::test]
async fn run_creation_errors() {
    let mock = Arc::new(ScriptedProvider::sequence(["unused"]));
    let svc = Service::start(Some(mock.clone()), None).await;

    let (s, body) = svc
        .post("/runs", &json!({ "workflow": single_agent("None", false), "config": { "model": "mock/x", "creativity": 3.5 } }))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");

    let (s, body) = svc
        .post("/runs", &json!({ "workflow": single_agent("nope", false), "config": { "model": "mock/x" } }))
        .await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    assert!(body["message"].as_str().unwrap().contains("nope"));
    assert_eq!(mock.call_count(), 0);

    let (s, body) = svc
        .post("/runs", &json!({ "workflow": {"flow_description": "x", "agents": []}, "config": echo() }))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["report"]["violations"][0]["code"], "MIN_ITEMS");

    let (s, _) = svc
        .post("/runs", &json!({ "workflow": single_agent("None", false), "config": { "model": "nosuch/x" } }))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = svc.post("/runs", &json!({ "workflow": "No-Such-Stem", "config": echo() })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = svc.get("/runs/does-not-exist").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = svc.post("/runs/does-not-exist/approvals", &json!({"action": "approve"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stored_workflows_are_listed_and_runnable() {
    let mock = Arc::new(ScriptedProvider::sequence(["a", "b", "c", "d"]));
    let svc = Service::start(Some(mock), None).await;
    let (_, list) = svc.get("/workflows").await;
    let stems: Vec<&str> = list.as_array().unwrap().iter().map(|w| w["stem"].as_str().unwrap()).collect();
    assert_eq!(stems.len(), 9);
    assert!(stems.contains(&"foodtruck-website"));
    let id = svc.create(json!("foodtruck-website"), json!({ "model": "mock/seq" })).await;
    let p = svc.wait_pending(&id).await;
    assert_eq!(p["agent_name"], "TechnicalRequirementsWriter");
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &json!({"action": "approve"})).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let run = svc.wait_finished(&id).await;
    assert_eq!(run["workflow_stem"], "foodtruck-website");
    assert_eq!(run["result"]["final_output"], "d");
}

#[tokio::test]
async fn reject_edit_and_replay() {
    let svc = Service::start(None, None).await;
    let two: Value = serde_json::from_str(TWO_AGENT).unwrap();
    // Agent2 is gated; Agent1's postprocessor must exist.
    let mut two = two;
    two["agents"][0]["postprocessor_function"] = json!("None");
    let id = svc.create(two, echo()).await;

    let first = svc.wait_pending(&id).await;
    assert_eq!(first["agent_name"], "Agent2");
    assert_eq!(first["attempt"], 1);
    let reject = json!({"action": "reject", "agent_name": "Agent2", "attempt": 1});
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &reject).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let second = loop {
        let p = svc.wait_pending(&id).await;
        if p["attempt"] == 2 {
            break p;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    };
    assert_eq!(second["agent_name"], "Agent2");

    let (_, before) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &reject).await;
    assert_eq!(s, StatusCode::NO_CONTENT, "replay is a no-op");
    let (_, after) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    assert_eq!(before, after);
    assert_eq!(svc.wait_pending(&id).await["attempt"], 2);

    let conflicting = json!({"action": "approve", "agent_name": "Agent2", "attempt": 1});
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &conflicting).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &json!({"action": "edit", "edited_output": ""})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let edit = json!({"action": "edit", "edited_output": "FIXED", "agent_name": "Agent2", "attempt": 2});
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &edit).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let run = svc.wait_finished(&id).await;
    assert_eq!(run["result"]["final_output"], "FIXED");

    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &json!({"action": "approve"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = svc.post(&format!("/runs/{id}/approvals"), &edit).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let (_, events) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    let llm_calls = events
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "llm_call" && e["payload"]["agent_name"] == "Agent2")
        .count();
    assert_eq!(llm_calls, 2);
}

#[tokio::test]
async fn edit_reaches_next_prompt() {
    let svc = Service::start(None, None).await;
    let wf = json!({
        "flow_description": "edit flows downstream",
        "agents": [
            {"head": "True", "name_of_agent": "Writer", "role_of_agent": "w", "what_should_agent_do": "write",
             "require_human_approval_of_response": "True", "postprocessor_function": "None", "next": "Reader"},
            {"head": "False", "name_of_agent": "Reader", "role_of_agent": "r", "what_should_agent_do": "read",
             "require_human_approval_of_response": "False", "postprocessor_function": "None", "next": "None"}
        ]
    });
    let id = svc.create(wf, echo()).await;
    svc.wait_pending(&id).await;
    let (s, _) = svc
        .post(&format!("/runs/{id}/approvals"), &json!({"action": "edit", "edited_output": "FIXED"}))
        .await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    svc.wait_finished(&id).await;
    let (_, events) = svc.get(&format!("/runs/{id}/events?after=0")).await;
    let reader_prompt = events
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["kind"] == "llm_call" && e["payload"]["agent_name"] == "Reader")
        .map(|e| e["payload"]["input"].as_str().unwrap().to_owned())
        .unwrap();
    assert!(reader_prompt.contains("### INPUT\nFIXED\n### END INPUT"), "{reader_prompt}");
}

#[tokio::test]
async fn code_execution_needs_the_unsafe_flag() {
    let svc = Service::start(None, None).await;
    let id = svc.create(single_agent("execute_code", false), echo()).await;
    let run = svc.wait_finished(&id).await;
    assert_eq!(run["state"]["phase"], "failed");
    assert!(run["error"].as_str().unwrap().contains("disabled"), "{run}");
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let svc = Service::start(None, Some("s3cret-token")).await;
    let (s, _) = svc.get("/workflows").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let resp = svc
        .client
        .get(svc.url("/workflows"))
        .bearer_auth("s3cret-token")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
