//! Workflow documents: parsing, schema validation, and chain structure.
//!
//! A workflow is a JSON object with a `flow_description` and an ordered
//! `agents` array. Each agent names its successor through `next`; following
//! those pointers from the single `head` agent must visit every agent exactly
//! once and end at the `"None"` sentinel.
//!
//! Boolean fields are the string enums `"True"` / `"False"`, matched
//! case-sensitively.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Sentinel used for "no postprocessor" and "no successor".
pub const NONE_SENTINEL: &str = "None";

const KEY_HEAD: &str = "head";
const KEY_NAME: &str = "name_of_agent";
const KEY_ROLE: &str = "role_of_agent";
const KEY_TASK: &str = "what_should_agent_do";
const KEY_APPROVAL: &str = "require_human_approval_of_response";
const KEY_APPROVAL_ALIAS: &str = "require_human_approval_of_response?";
const KEY_POSTPROCESSOR: &str = "postprocessor_function";
const KEY_NEXT: &str = "next";

const AGENT_KEYS: [&str; 7] = [
    KEY_HEAD,
    KEY_NAME,
    KEY_ROLE,
    KEY_TASK,
    KEY_APPROVAL,
    KEY_POSTPROCESSOR,
    KEY_NEXT,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    Strict,
    /// Accepts the `require_human_approval_of_response?` alias and repairs
    /// next pointers that only dangle (see [`parse_workflow_report`]).
    #[default]
    Lenient,
}

impl std::str::FromStr for ValidationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ValidationMode::Strict),
            "lenient" => Ok(ValidationMode::Lenient),
            other => Err(format!("unknown validation mode `{other}` (expected strict or lenient)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    MalformedJson,
    TypeMismatch,
    MissingField,
    UnknownProperty,
    InvalidEnum,
    EmptyValue,
    MinItems,
    NoHead,
    MultipleHeads,
    DanglingNext,
    Cycle,
    Unreachable,
    DuplicateName,
    MultiplePredecessors,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::MalformedJson => "MALFORMED_JSON",
            ViolationCode::TypeMismatch => "TYPE_MISMATCH",
            ViolationCode::MissingField => "MISSING_FIELD",
            ViolationCode::UnknownProperty => "UNKNOWN_PROPERTY",
            ViolationCode::InvalidEnum => "INVALID_ENUM",
            ViolationCode::EmptyValue => "EMPTY_VALUE",
            ViolationCode::MinItems => "MIN_ITEMS",
            ViolationCode::NoHead => "NO_HEAD",
            ViolationCode::MultipleHeads => "MULTIPLE_HEADS",
            ViolationCode::DanglingNext => "DANGLING_NEXT",
            ViolationCode::Cycle => "CYCLE",
            ViolationCode::Unreachable => "UNREACHABLE",
            ViolationCode::DuplicateName => "DUPLICATE_NAME",
            ViolationCode::MultiplePredecessors => "MULTIPLE_PREDECESSORS",
        }
    }

    /// Structural defects of the pointer graph, as opposed to schema errors.
    pub fn is_chain_defect(self) -> bool {
        matches!(
            self,
            ViolationCode::NoHead
                | ViolationCode::MultipleHeads
                | ViolationCode::DanglingNext
                | ViolationCode::Cycle
                | ViolationCode::Unreachable
                | ViolationCode::DuplicateName
                | ViolationCode::MultiplePredecessors
        )
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// JSON pointer to the offending location.
    pub path: String,
    pub message: String,
}

/// Non-fatal finding: an accepted alias key, a repaired pointer, or a
/// next-pointer order that differs from array order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub violations: Vec<Violation>,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn new(mode: ValidationMode) -> Self {
        ValidationReport {
            mode,
            violations: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_code(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Warning {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "OK")?;
        } else {
            write!(f, "{} violation(s)", self.violations.len())?;
        }
        for v in &self.violations {
            write!(f, "\n  {} at {}: {}", v.code, display_path(&v.path), v.message)?;
        }
        for w in &self.warnings {
            write!(f, "\n  warning at {}: {}", display_path(&w.path), w.message)?;
        }
        Ok(())
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "/"
    } else {
        path
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub head: bool,
    pub name_of_agent: String,
    pub role_of_agent: String,
    pub what_should_agent_do: String,
    pub require_human_approval_of_response: bool,
    /// Registered postprocessor name or `"None"`.
    pub postprocessor_function: String,
    /// Successor agent name or `"None"`.
    pub next: String,
}

impl AgentSpec {
    pub fn postprocessor(&self) -> Option<&str> {
        if self.postprocessor_function == NONE_SENTINEL {
            None
        } else {
            Some(&self.postprocessor_function)
        }
    }

    pub fn next_agent(&self) -> Option<&str> {
        if self.next == NONE_SENTINEL {
            None
        } else {
            Some(&self.next)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub flow_description: String,
    pub agents: Vec<AgentSpec>,
    /// File name without extension; names the interaction log.
    pub source_stem: String,
}

/// On-disk shape of an agent, booleans as `"True"`/`"False"`.
#[derive(Serialize)]
struct AgentDocument<'a> {
    head: &'static str,
    name_of_agent: &'a str,
    role_of_agent: &'a str,
    what_should_agent_do: &'a str,
    require_human_approval_of_response: &'static str,
    postprocessor_function: &'a str,
    next: &'a str,
}

#[derive(Serialize)]
struct WorkflowDocument<'a> {
    flow_description: &'a str,
    agents: Vec<AgentDocument<'a>>,
}

fn bool_enum(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

impl WorkflowDefinition {
    /// Canonical workflow JSON (strict-valid, pretty printed).
    pub fn to_json_string(&self) -> String {
        let doc = WorkflowDocument {
            flow_description: &self.flow_description,
            agents: self
                .agents
                .iter()
                .map(|a| AgentDocument {
                    head: bool_enum(a.head),
                    name_of_agent: &a.name_of_agent,
                    role_of_agent: &a.role_of_agent,
                    what_should_agent_do: &a.what_should_agent_do,
                    require_human_approval_of_response: bool_enum(a.require_human_approval_of_response),
                    postprocessor_function: &a.postprocessor_function,
                    next: &a.next,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("workflow document serializes")
    }

    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name_of_agent == name)
    }

    pub fn head(&self) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.head)
    }

    /// Postprocessor names referenced by the workflow, deduplicated, in agent order.
    pub fn postprocessor_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.agents
            .iter()
            .filter_map(AgentSpec::postprocessor)
            .filter(|n| seen.insert(*n))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read workflow {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("workflow {path} rejected: {report}")]
    Invalid { path: String, report: ValidationReport },
}

/// Parses a workflow document, returning the definition or the violations.
pub fn parse_workflow(
    text: &str,
    source_stem: &str,
    mode: ValidationMode,
) -> Result<WorkflowDefinition, ValidationReport> {
    match parse_workflow_report(text, source_stem, mode) {
        (Some(def), _) => Ok(def),
        (None, report) => Err(report),
    }
}

/// Like [`parse_workflow`] but also returns warnings on success.
///
/// In lenient mode a document whose only chain defects are dangling `next`
/// pointers (and the agents they strand) is accepted when its sole head is the
/// first array element: pointers are rewritten to follow array order and each
/// rewrite is reported as a warning. Strict mode performs schema checks only;
/// use [`validate_document`] for schema plus chain checks.
pub fn parse_workflow_report(
    text: &str,
    source_stem: &str,
    mode: ValidationMode,
) -> (Option<WorkflowDefinition>, ValidationReport) {
    let mut report = ValidationReport::new(mode);
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            report.push(
                ViolationCode::MalformedJson,
                "",
                format!("line {} column {}: {e}", e.line(), e.column()),
            );
            return (None, report);
        }
    };
    let def = schema_check(&value, source_stem, mode, &mut report);
    let Some(mut def) = def else {
        return (None, report);
    };
    if !report.violations.is_empty() {
        return (None, report);
    }
    if mode == ValidationMode::Lenient {
        repair_dangling_pointers(&mut def, &mut report);
    }
    (Some(def), report)
}

/// Full acceptance check: schema, then chain structure.
pub fn validate_document(text: &str, mode: ValidationMode) -> ValidationReport {
    let (def, mut report) = parse_workflow_report(text, "document", mode);
    if let Some(def) = def {
        let chain = validate_chain(&def);
        report.violations.extend(chain.violations);
        report.warnings.extend(chain.warnings);
    }
    report
}

/// Reads and parses a workflow file; the stem comes from the file name.
pub fn load_workflow(path: &Path, mode: ValidationMode) -> Result<WorkflowDefinition, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "workflow".to_owned());
    let def = parse_workflow(&text, &stem, mode).map_err(|report| LoadError::Invalid {
        path: path.display().to_string(),
        report,
    })?;
    let chain = validate_chain(&def);
    if !chain.is_accepted() {
        return Err(LoadError::Invalid {
            path: path.display().to_string(),
            report: chain,
        });
    }
    Ok(def)
}

fn escape_pointer(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn agent_path(index: usize, key: &str) -> String {
    format!("/agents/{index}/{}", escape_pointer(key))
}

fn schema_check(
    value: &Value,
    source_stem: &str,
    mode: ValidationMode,
    report: &mut ValidationReport,
) -> Option<WorkflowDefinition> {
    let Some(root) = value.as_object() else {
        report.push(ViolationCode::TypeMismatch, "", "document must be a JSON object");
        return None;
    };
    for key in root.keys() {
        if key != "flow_description" && key != "agents" {
            report.push(
                ViolationCode::UnknownProperty,
                format!("/{}", escape_pointer(key)),
                format!("unknown property `{key}`"),
            );
        }
    }
    let flow_description = required_string(root, "flow_description", "", report);
    let agents = match root.get("agents") {
        None => {
            report.push(ViolationCode::MissingField, "/agents", "missing required property `agents`");
            None
        }
        Some(Value::Array(items)) => {
            if items.is_empty() {
                report.push(ViolationCode::MinItems, "/agents", "`agents` must contain at least 1 item");
            }
            let parsed: Vec<Option<AgentSpec>> = items
                .iter()
                .enumerate()
                .map(|(i, item)| agent_check(item, i, mode, report))
                .collect();
            parsed.into_iter().collect::<Option<Vec<_>>>()
        }
        Some(_) => {
            report.push(ViolationCode::TypeMismatch, "/agents", "`agents` must be an array");
            None
        }
    };
    Some(WorkflowDefinition {
        flow_description: flow_description?,
        agents: agents?,
        source_stem: source_stem.to_owned(),
    })
}

fn required_string(
    obj: &Map<String, Value>,
    key: &str,
    base: &str,
    report: &mut ValidationReport,
) -> Option<String> {
    let path = format!("{base}/{}", escape_pointer(key));
    match obj.get(key) {
        None => {
            report.push(ViolationCode::MissingField, path, format!("missing required property `{key}`"));
            None
        }
        Some(Value::String(s)) if s.trim().is_empty() => {
            report.push(ViolationCode::EmptyValue, path, format!("`{key}` must not be empty"));
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            report.push(ViolationCode::TypeMismatch, path, format!("`{key}` must be a string"));
            None
        }
    }
}

fn required_enum(
    obj: &Map<String, Value>,
    key: &str,
    path: String,
    report: &mut ValidationReport,
) -> Option<bool> {
    match obj.get(key) {
        None => {
            report.push(ViolationCode::MissingField, path, format!("missing required property `{key}`"));
            None
        }
        Some(Value::String(s)) if s == "True" => Some(true),
        Some(Value::String(s)) if s == "False" => Some(false),
        Some(Value::String(s)) => {
            report.push(
                ViolationCode::InvalidEnum,
                path,
                format!("`{key}` must be \"True\" or \"False\", found {s:?}"),
            );
            None
        }
        Some(_) => {
            report.push(
                ViolationCode::TypeMismatch,
                path,
                format!("`{key}` must be the string \"True\" or \"False\""),
            );
            None
        }
    }
}

fn agent_check(
    item: &Value,
    index: usize,
    mode: ValidationMode,
    report: &mut ValidationReport,
) -> Option<AgentSpec> {
    let base = format!("/agents/{index}");
    let Some(obj) = item.as_object() else {
        report.push(ViolationCode::TypeMismatch, base, "agent must be a JSON object");
        return None;
    };

    let mut approval_key = KEY_APPROVAL;
    for key in obj.keys() {
        if AGENT_KEYS.contains(&key.as_str()) {
            continue;
        }
        if key == KEY_APPROVAL_ALIAS && mode == ValidationMode::Lenient && !obj.contains_key(KEY_APPROVAL) {
            approval_key = KEY_APPROVAL_ALIAS;
            report.warn(
                agent_path(index, key),
                format!("`{KEY_APPROVAL_ALIAS}` accepted as an alias for `{KEY_APPROVAL}`"),
            );
            continue;
        }
        report.push(
            ViolationCode::UnknownProperty,
            agent_path(index, key),
            format!("unknown property `{key}`"),
        );
    }

    let head = required_enum(obj, KEY_HEAD, agent_path(index, KEY_HEAD), report);
    let name = required_string(obj, KEY_NAME, &base, report);
    let role = required_string(obj, KEY_ROLE, &base, report);
    let task = required_string(obj, KEY_TASK, &base, report);
    let approval = if approval_key == KEY_APPROVAL_ALIAS {
        required_enum(obj, approval_key, agent_path(index, approval_key), report)
    } else {
        required_enum(obj, KEY_APPROVAL, agent_path(index, KEY_APPROVAL), report)
    };
    let postprocessor = required_string(obj, KEY_POSTPROCESSOR, &base, report);
    let next = required_string(obj, KEY_NEXT, &base, report);

    Some(AgentSpec {
        head: head?,
        name_of_agent: name?,
        role_of_agent: role?,
        what_should_agent_do: task?,
        require_human_approval_of_response: approval?,
        postprocessor_function: postprocessor?,
        next: next?,
    })
}

/// Checks that head/next pointers form a single simple path over all agents.
pub fn validate_chain(def: &WorkflowDefinition) -> ValidationReport {
    let mut report = ValidationReport::new(ValidationMode::Strict);
    let agents = &def.agents;

    let mut by_name: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, a) in agents.iter().enumerate() {
        by_name.entry(a.name_of_agent.as_str()).or_default().push(i);
    }
    for (i, a) in agents.iter().enumerate() {
        if by_name[a.name_of_agent.as_str()].len() > 1 {
            report.push(
                ViolationCode::DuplicateName,
                agent_path(i, KEY_NAME),
                format!("agent name `{}` is used more than once", a.name_of_agent),
            );
        }
    }

    let heads: Vec<usize> = agents.iter().enumerate().filter(|(_, a)| a.head).map(|(i, _)| i).collect();
    match heads.len() {
        0 => report.push(ViolationCode::NoHead, "/agents", "no agent has head = \"True\""),
        1 => {}
        n => {
            for &i in &heads {
                report.push(
                    ViolationCode::MultipleHeads,
                    agent_path(i, KEY_HEAD),
                    format!("{n} agents are marked as head"),
                );
            }
        }
    }

    let mut predecessors: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, a) in agents.iter().enumerate() {
        let Some(next) = a.next_agent() else { continue };
        if by_name.contains_key(next) {
            predecessors.entry(next).or_default().push(i);
        } else {
            report.push(
                ViolationCode::DanglingNext,
                agent_path(i, KEY_NEXT),
                format!("next names unknown agent `{next}`"),
            );
        }
    }
    let mut targets: Vec<(&str, &Vec<usize>)> = predecessors.iter().map(|(k, v)| (*k, v)).collect();
    targets.sort_by_key(|(_, v)| v[0]);
    for (target, preds) in targets {
        if preds.len() > 1 {
            for &i in preds {
                report.push(
                    ViolationCode::MultiplePredecessors,
                    agent_path(i, KEY_NEXT),
                    format!("agent `{target}` is the next of {} agents", preds.len()),
                );
            }
        }
    }

    if heads.len() == 1 {
        let mut visited = vec![false; agents.len()];
        let mut current = heads[0];
        loop {
            visited[current] = true;
            let Some(next) = agents[current].next_agent() else { break };
            let Some(&target) = by_name.get(next).and_then(|v| v.first()) else {
                break;
            };
            if visited[target] {
                report.push(
                    ViolationCode::Cycle,
                    agent_path(current, KEY_NEXT),
                    format!("next pointer back to `{next}` closes a cycle"),
                );
                break;
            }
            current = target;
        }
        for (i, seen) in visited.iter().enumerate() {
            if !seen {
                report.push(
                    ViolationCode::Unreachable,
                    format!("/agents/{i}"),
                    format!("agent `{}` is not reachable from the head", agents[i].name_of_agent),
                );
            }
        }
    }

    report
}

fn repair_dangling_pointers(def: &mut WorkflowDefinition, report: &mut ValidationReport) {
    let chain = validate_chain(def);
    if chain.is_accepted() {
        return;
    }
    let repairable = chain
        .violations
        .iter()
        .all(|v| matches!(v.code, ViolationCode::DanglingNext | ViolationCode::Unreachable))
        && def.agents.first().is_some_and(|a| a.head);
    if !repairable {
        return;
    }
    let names: Vec<String> = def.agents.iter().map(|a| a.name_of_agent.clone()).collect();
    for (i, agent) in def.agents.iter_mut().enumerate() {
        let wanted = names.get(i + 1).map(String::as_str).unwrap_or(NONE_SENTINEL);
        if agent.next != wanted {
            report.warn(
                agent_path(i, KEY_NEXT),
                format!("next `{}` rewritten to `{wanted}` (array order)", agent.next),
            );
            agent.next = wanted.to_owned();
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("chain_order called on a workflow with an invalid chain: {0}")]
pub struct InvalidChain(pub ValidationReport);

#[derive(Debug, Clone)]
pub struct ChainOrder<'a> {
    pub agents: Vec<&'a AgentSpec>,
    /// Set when pointer order differs from array order.
    pub warning: Option<Warning>,
}

/// Agents in execution order, following `next` from the head.
pub fn chain_order(def: &WorkflowDefinition) -> Result<ChainOrder<'_>, InvalidChain> {
    let report = validate_chain(def);
    if !report.is_accepted() {
        return Err(InvalidChain(report));
    }
    let mut agents = Vec::with_capacity(def.agents.len());
    let mut current = def.head();
    while let Some(agent) = current {
        agents.push(agent);
        current = agent.next_agent().and_then(|n| def.agent(n));
    }
    let in_array_order = agents
        .iter()
        .zip(&def.agents)
        .all(|(a, b)| a.name_of_agent == b.name_of_agent);
    let warning = (!in_array_order).then(|| Warning {
        path: "/agents".to_owned(),
        message: "execution follows next pointers, which differ from array order".to_owned(),
    });
    Ok(ChainOrder { agents, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_AGENT: &str = include_str!("../tests/fixtures/two-agent-example.json");

    fn agent(name: &str, head: bool, next: &str) -> AgentSpec {
        AgentSpec {
            head,
            name_of_agent: name.into(),
            role_of_agent: format!("{name} role"),
            what_should_agent_do: format!("{name} task"),
            require_human_approval_of_response: false,
            postprocessor_function: NONE_SENTINEL.into(),
            next: next.into(),
        }
    }

    fn def(agents: Vec<AgentSpec>) -> WorkflowDefinition {
        WorkflowDefinition {
            flow_description: "x".into(),
            agents,
            source_stem: "t".into(),
        }
    }

    fn codes(report: &ValidationReport) -> Vec<ViolationCode> {
        report.violations.iter().map(|v| v.code).collect()
    }

    #[test]
    fn parses_two_agent_example() {
        let d = parse_workflow(TWO_AGENT, "example", ValidationMode::Strict).unwrap();
        assert_eq!(d.flow_description, "Give the workflow some name");
        assert_eq!(d.agents.len(), 2);
        assert!(d.agents[0].head);
        assert_eq!(d.agents[0].next, "Agent2");
        assert!(!d.agents[1].head);
        assert!(d.agents[1].require_human_approval_of_response);
        assert_eq!(d.agents[0].postprocessor(), Some("process_output"));
        assert_eq!(d.agents[1].postprocessor(), None);
        assert!(validate_chain(&d).is_accepted());
    }

    #[test]
    fn empty_agents_is_min_items() {
        let r = parse_workflow(r#"{"flow_description":"x","agents":[]}"#, "x", ValidationMode::Strict)
            .unwrap_err();
        assert_eq!(codes(&r), vec![ViolationCode::MinItems]);
        assert_eq!(r.violations[0].path, "/agents");
    }

    #[test]
    fn malformed_json() {
        let r = parse_workflow("{\"agents\": [", "x", ValidationMode::Lenient).unwrap_err();
        assert_eq!(codes(&r), vec![ViolationCode::MalformedJson]);
    }

    #[test]
    fn missing_flow_description() {
        let text = TWO_AGENT.replace("\"flow_description\": \"Give the workflow some name\",", "");
        let r = parse_workflow(&text, "x", ValidationMode::Strict).unwrap_err();
        assert_eq!(codes(&r), vec![ViolationCode::MissingField]);
        assert_eq!(r.violations[0].path, "/flow_description");
    }

    #[test]
    fn enum_is_case_sensitive() {
        let text = TWO_AGENT.replacen("\"head\": \"True\"", "\"head\": \"true\"", 1);
        let r = parse_workflow(&text, "x", ValidationMode::Lenient).unwrap_err();
        assert_eq!(codes(&r), vec![ViolationCode::InvalidEnum]);
        assert_eq!(r.violations[0].path, "/agents/0/head");
    }

    #[test]
    fn alias_key_depends_on_mode() {
        let text = TWO_AGENT.replacen(
            "\"require_human_approval_of_response\": \"True\"",
            "\"require_human_approval_of_response?\": \"True\"",
            1,
        );
        let r = parse_workflow(&text, "x", ValidationMode::Strict).unwrap_err();
        assert!(r.has_code(ViolationCode::UnknownProperty));
        assert_eq!(r.violations[0].path, "/agents/1/require_human_approval_of_response?");

        let (d, report) = parse_workflow_report(&text, "x", ValidationMode::Lenient);
        let d = d.unwrap();
        assert!(d.agents[1].require_human_approval_of_response);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn alias_alongside_canonical_key_is_rejected() {
        let text = TWO_AGENT.replacen(
            "\"require_human_approval_of_response\": \"True\",",
            "\"require_human_approval_of_response\": \"True\", \"require_human_approval_of_response?\": \"True\",",
            1,
        );
        let r = parse_workflow(&text, "x", ValidationMode::Lenient).unwrap_err();
        assert_eq!(codes(&r), vec![ViolationCode::UnknownProperty]);
    }

    #[test]
    fn unknown_top_level_key() {
        let text = TWO_AGENT.replacen('{', "{\"extra\": 1,", 1);
        let r = parse_workflow(&text, "x", ValidationMode::Lenient).unwrap_err();
        assert_eq!(r.violations[0].path, "/extra");
    }

    #[test]
    fn single_agent_chain_is_valid() {
        assert!(validate_chain(&def(vec![agent("A", true, "None")])).is_accepted());
    }

    #[test]
    fn two_cycle_is_reported() {
        let r = validate_chain(&def(vec![agent("A", true, "B"), agent("B", false, "A")]));
        assert_eq!(codes(&r), vec![ViolationCode::Cycle]);
        assert_eq!(r.violations[0].path, "/agents/1/next");
    }

    #[test]
    fn chain_defect_codes() {
        let r = validate_chain(&def(vec![agent("A", false, "None")]));
        assert_eq!(codes(&r), vec![ViolationCode::NoHead]);

        let r = validate_chain(&def(vec![agent("A", true, "B"), agent("B", true, "None")]));
        assert_eq!(codes(&r), vec![ViolationCode::MultipleHeads, ViolationCode::MultipleHeads]);

        let r = validate_chain(&def(vec![agent("A", true, "Z")]));
        assert_eq!(codes(&r), vec![ViolationCode::DanglingNext]);

        let r = validate_chain(&def(vec![agent("A", true, "None"), agent("B", false, "None")]));
        assert_eq!(codes(&r), vec![ViolationCode::Unreachable]);
        assert_eq!(r.violations[0].path, "/agents/1");

        let r = validate_chain(&def(vec![agent("A", true, "B"), agent("A", false, "None")]));
        assert!(r.has_code(ViolationCode::DuplicateName));

        let r = validate_chain(&def(vec![
            agent("A", true, "C"),
            agent("B", false, "C"),
            agent("C", false, "None"),
        ]));
        assert!(r.has_code(ViolationCode::MultiplePredecessors));
        assert!(r.has_code(ViolationCode::Unreachable));
    }

    #[test]
    fn pointer_order_overrides_array_order() {
        let d = def(vec![agent("B", false, "None"), agent("A", true, "B")]);
        let order = chain_order(&d).unwrap();
        let names: Vec<_> = order.agents.iter().map(|a| a.name_of_agent.as_str()).collect();
        assert_eq!(names, ["A", "B"]);
        assert!(order.warning.is_some());
    }

    #[test]
    fn chain_order_rejects_invalid_chain() {
        let d = def(vec![agent("A", true, "B"), agent("B", false, "A")]);
        assert!(chain_order(&d).is_err());
    }

    #[test]
    fn lenient_repairs_dangling_next_only_when_head_first() {
        let text = r#"{"flow_description":"x","agents":[
            {"head":"True","name_of_agent":"A","role_of_agent":"r","what_should_agent_do":"t",
             "require_human_approval_of_response":"False","postprocessor_function":"None","next":"Missing"},
            {"head":"False","name_of_agent":"B","role_of_agent":"r","what_should_agent_do":"t",
             "require_human_approval_of_response":"False","postprocessor_function":"None","next":"None"}]}"#;
        let (d, report) = parse_workflow_report(text, "x", ValidationMode::Lenient);
        let d = d.unwrap();
        assert_eq!(d.agents[0].next, "B");
        assert_eq!(report.warnings[0].path, "/agents/0/next");
        assert!(validate_chain(&d).is_accepted());

        let strict = validate_document(text, ValidationMode::Strict);
        assert!(strict.has_code(ViolationCode::DanglingNext));

        let head_second = def(vec![agent("B", false, "None"), agent("A", true, "Missing")]).to_json_string();
        let (d, _) = parse_workflow_report(&head_second, "x", ValidationMode::Lenient);
        assert!(!validate_chain(&d.unwrap()).is_accepted());
    }

    #[test]
    fn cycles_are_never_repaired() {
        let d = def(vec![agent("A", true, "B"), agent("B", false, "A")]);
        let text = d.to_json_string();
        let report = validate_document(&text, ValidationMode::Lenient);
        assert!(report.has_code(ViolationCode::Cycle));
    }

    #[test]
    fn serialization_round_trips() {
        let d = parse_workflow(TWO_AGENT, "example", ValidationMode::Strict).unwrap();
        let again = parse_workflow(&d.to_json_string(), "example", ValidationMode::Strict).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn report_serializes_with_stable_codes() {
        let r = parse_workflow(r#"{"flow_description":"x","agents":[]}"#, "x", ValidationMode::Strict)
            .unwrap_err();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["violations"][0]["code"], "MIN_ITEMS");
        assert_eq!(json["mode"], "strict");
        let back: ValidationReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
