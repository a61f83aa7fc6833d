//! PoC agent: turns a gated advisory into a structured proof-of-concept and
//! derives sink candidates from the code it mentions.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::advisory::{AdvisoryRecord, AdvisorySource};
use crate::agent::{run_react_loop, AgentOutcome, Budget, LlmBackend, LoopError, Tool, ToolSet};
use crate::code_model::ProgramGraph;
use crate::dependency_scan::UsageRecord;
use crate::sinks::{match_callable, Confidence, SinkCandidate, SinkOrigin, SinkRegistry};

const SEARCH_RESULT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PocStatus {
    Verified,
    Plausible,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvisoryRef {
    pub source: AdvisorySource,
    pub identifier: String,
    pub dependency: String,
}

impl From<&AdvisoryRecord> for AdvisoryRef {
    fn from(a: &AdvisoryRecord) -> Self {
        AdvisoryRef {
            source: a.source,
            identifier: a.identifier.clone(),
            dependency: a.dependency.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoCArtifact {
    pub advisory: AdvisoryRef,
    pub restated_description: String,
    pub root_cause: String,
    pub code_pattern: String,
    pub attack_scenario: String,
    pub trigger_code: String,
    pub patch: String,
    pub explanation: String,
    pub status: PocStatus,
    /// Final payload as received, kept for audit when it failed the schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_payload: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schema_errors: Vec<String>,
}

/// Shape the agent's final block must have.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PocPayload {
    restated_description: String,
    root_cause: String,
    code_pattern: String,
    attack_scenario: String,
    trigger_code: String,
    patch: String,
    explanation: String,
    #[serde(default)]
    status: Option<PocStatus>,
}

impl PoCArtifact {
    fn rejected(advisory: AdvisoryRef, raw: Option<String>, errors: Vec<String>) -> Self {
        PoCArtifact {
            advisory,
            restated_description: String::new(),
            root_cause: String::new(),
            code_pattern: String::new(),
            attack_scenario: String::new(),
            trigger_code: String::new(),
            patch: String::new(),
            explanation: String::new(),
            status: PocStatus::Rejected,
            raw_payload: raw,
            schema_errors: errors,
        }
    }

    /// Validates a final payload. Verified requires non-empty trigger code
    /// and a patch that differs from it; the agent may only lower the status
    /// it would otherwise get.
    pub fn from_payload(advisory: AdvisoryRef, payload: Option<&str>) -> Self {
        let Some(raw) = payload else {
            return Self::rejected(advisory, None, vec!["agent produced no final answer".into()]);
        };
        let parsed: PocPayload = match serde_json::from_str(raw) {
            Ok(p) => p,
            Err(e) => return Self::rejected(advisory, Some(raw.to_string()), vec![e.to_string()]),
        };
        let complete = !parsed.trigger_code.trim().is_empty()
            && !parsed.patch.trim().is_empty()
            && parsed.trigger_code.trim() != parsed.patch.trim();
        let derived = if complete { PocStatus::Verified } else { PocStatus::Plausible };
        let status = parsed.status.map_or(derived, |claimed| claimed.max(derived));
        let raw_payload = (status == PocStatus::Rejected).then(|| raw.to_string());
        PoCArtifact {
            advisory,
            restated_description: parsed.restated_description,
            root_cause: parsed.root_cause,
            code_pattern: parsed.code_pattern,
            attack_scenario: parsed.attack_scenario,
            trigger_code: parsed.trigger_code,
            patch: parsed.patch,
            explanation: parsed.explanation,
            status,
            raw_payload,
            schema_errors: Vec::new(),
        }
    }
}

/// Code context handed to the agent.
#[derive(Debug, Clone, Default)]
pub struct PocContext {
    pub usage: Option<UsageRecord>,
    pub code_excerpts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PocRun {
    pub artifact: PoCArtifact,
    pub outcome: AgentOutcome,
}

/// Replay/script session key for an advisory: `poc_` plus the identifier
/// lowercased with non-alphanumerics replaced by `_`.
pub fn poc_session(advisory: &AdvisoryRecord) -> String {
    let id: String = advisory
        .identifier
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("poc_{id}")
}

pub const POC_SYSTEM_PROMPT: &str = "You are a security researcher analysing a third-party dependency advisory \
against a target code base. Restate the vulnerability, then reason step by step about its root cause, the code \
pattern that makes it exploitable, and a plausible attack scenario. Use the tools to inspect how the target uses \
the dependency. Finish with a ```final``` block holding a JSON object with the string fields restated_description, \
root_cause, code_pattern, attack_scenario, trigger_code, patch and explanation. Name suspected sink callables by \
their qualified names in code_pattern and trigger_code.";

struct DependencyUsageTool {
    text: String,
}

impl Tool for DependencyUsageTool {
    fn name(&self) -> &str {
        "dependency_usage"
    }
    fn description(&self) -> &str {
        "lists program-graph nodes that reference the advisory's dependency"
    }
    fn invoke(&self, _args: &serde_json::Value) -> Result<String, String> {
        Ok(self.text.clone())
    }
}

struct AdvisoryDetailsTool {
    text: String,
}

impl Tool for AdvisoryDetailsTool {
    fn name(&self) -> &str {
        "advisory_details"
    }
    fn description(&self) -> &str {
        "returns the normalized advisory record"
    }
    fn invoke(&self, _args: &serde_json::Value) -> Result<String, String> {
        Ok(self.text.clone())
    }
}

struct SearchGraphTool {
    labels: Vec<(String, String)>,
}

impl Tool for SearchGraphTool {
    fn name(&self) -> &str {
        "search_graph"
    }
    fn description(&self) -> &str {
        "searches node labels by case-insensitive substring; args {\"query\": string}"
    }
    fn invoke(&self, args: &serde_json::Value) -> Result<String, String> {
        let q = args["query"]
            .as_str()
            .ok_or("missing string argument `query`")?
            .to_lowercase();
        let hits: Vec<_> = self
            .labels
            .iter()
            .filter(|(_, l)| l.to_lowercase().contains(&q))
            .take(SEARCH_RESULT_LIMIT)
            .map(|(id, l)| json!({"node": id, "label": l}))
            .collect();
        Ok(serde_json::to_string(&hits).expect("json"))
    }
}

fn usage_text(graph: &ProgramGraph, usage: Option<&UsageRecord>) -> String {
    let Some(u) = usage else {
        return "[]".to_string();
    };
    let rows: Vec<_> = u
        .node_ids
        .iter()
        .filter_map(|id| graph.node(id.as_str()))
        .map(|n| json!({"node": n.id, "label": n.label, "function": n.function_id}))
        .collect();
    serde_json::to_string(&rows).expect("json")
}

fn task_text(advisory: &AdvisoryRecord, ctx: &PocContext) -> String {
    let mut s = format!(
        "Advisory {} ({}) for dependency {}.\nSeverity: {:?}. Affected versions: {}.\nDescription: {}",
        advisory.identifier,
        advisory.source.as_str(),
        advisory.dependency,
        advisory.severity,
        if advisory.affected_versions.is_empty() { "unspecified" } else { &advisory.affected_versions },
        advisory.description
    );
    if !ctx.code_excerpts.is_empty() {
        s.push_str("\nCode excerpts:");
        for e in &ctx.code_excerpts {
            s.push_str("\n- ");
            s.push_str(e);
        }
    }
    s
}

pub fn generate_poc(
    advisory: &AdvisoryRecord,
    ctx: &PocContext,
    graph: &ProgramGraph,
    backend: &dyn LlmBackend,
    budget: Budget,
) -> Result<PocRun, LoopError> {
    let mut labels: Vec<(String, String)> = graph
        .nodes()
        .iter()
        .map(|n| (n.id.to_string(), n.label.clone()))
        .collect();
    labels.sort();
    let tools = ToolSet::new()
        .with(DependencyUsageTool {
            text: usage_text(graph, ctx.usage.as_ref()),
        })
        .with(AdvisoryDetailsTool {
            text: serde_json::to_string(advisory).expect("json"),
        })
        .with(SearchGraphTool { labels });
    let outcome = run_react_loop(
        &poc_session(advisory),
        POC_SYSTEM_PROMPT,
        &task_text(advisory, ctx),
        &tools,
        backend,
        budget,
    )?;
    let artifact = PoCArtifact::from_payload(advisory.into(), outcome.final_payload.as_deref());
    Ok(PocRun { artifact, outcome })
}

fn identifier_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[A-Za-z_][A-Za-z0-9_$]*(?:\.[A-Za-z_][A-Za-z0-9_$]*)+").expect("valid regex")
    })
}

/// Dotted identifiers of two or more segments, deduplicated and sorted.
pub fn extract_callable_names(text: &str) -> BTreeSet<String> {
    identifier_regex()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Candidates for every callable named in the PoC's code pattern and trigger
/// code: exact matches first, then fuzzy, then unmatched names, each group
/// sorted by name. Rejected artifacts yield nothing.
pub fn derive_sink_candidates(poc: &PoCArtifact, graph: &ProgramGraph, registry: &SinkRegistry) -> Vec<SinkCandidate> {
    if poc.status == PocStatus::Rejected {
        return Vec::new();
    }
    let mut names = extract_callable_names(&poc.code_pattern);
    names.extend(extract_callable_names(&poc.trigger_code));
    let mut exact = Vec::new();
    let mut fuzzy = Vec::new();
    let mut unmatched = Vec::new();
    for name in names {
        let (e, f) = match_callable(graph, &name);
        let kind = registry.kind_of(&name).unwrap_or("advisory").to_string();
        let mk = |matched, confidence| SinkCandidate {
            callable_name: name.clone(),
            matched_node_ids: matched,
            origin: SinkOrigin::AdvisoryPoc,
            confidence,
            sink_kind: kind.clone(),
            root_sink: None,
            advisory: Some(poc.advisory.identifier.clone()),
        };
        if !e.is_empty() {
            exact.push(mk(e, Confidence::Exact));
        } else if !f.is_empty() {
            fuzzy.push(mk(f, Confidence::Fuzzy));
        } else {
            unmatched.push(mk(Vec::new(), Confidence::Fuzzy));
        }
    }
    exact.extend(fuzzy);
    exact.extend(unmatched);
    exact
}
