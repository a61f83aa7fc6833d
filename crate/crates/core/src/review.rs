//! Review of candidate flows: end-to-end reachability, hop-by-hop audit and
//! the final three-way verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{run_react_loop, AgentOutcome, Budget, LlmBackend, ToolSet};
use crate::code_model::{DataFlow, FlowOrigin, ProgramGraph, TaintRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neutralization {
    None,
    Validation,
    Sanitization,
    Encoding,
    TypeCast,
}

/// Guard tag to neutralization kind, in precedence order.
const HOP_TAGS: [(&str, Neutralization); 5] = [
    ("validated", Neutralization::Validation),
    ("sanitized", Neutralization::Sanitization),
    ("encoded", Neutralization::Encoding),
    ("type-cast", Neutralization::TypeCast),
    ("cast", Neutralization::TypeCast),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopAssessment {
    /// 1-based triple index.
    pub position: usize,
    pub entry_description: String,
    pub content_and_path: String,
    pub neutralization: Neutralization,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructKind {
    ControlFlowGuard,
    ExceptionHandler,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptingConstruct {
    pub position: usize,
    pub edge: String,
    pub tag: String,
    pub kind: ConstructKind,
    pub fatal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilityFinding {
    pub reachable: bool,
    pub interrupting_constructs: Vec<InterruptingConstruct>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStatus {
    Confirmed,
    Refuted,
    NeedsHuman,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewMode {
    #[default]
    Rule,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPolicy {
    /// Interrupting guard tag to fatality.
    pub fatal_tags: BTreeMap<String, bool>,
    /// Confirm clean forward flows without human sign-off.
    pub auto_confirm_forward_flows: bool,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        ReviewPolicy {
            fatal_tags: [("validated", true), ("guarded", true), ("caught", false)]
                .into_iter()
                .map(|(t, f)| (t.to_string(), f))
                .collect(),
            auto_confirm_forward_flows: true,
        }
    }
}

fn construct_kind(tag: &str) -> ConstructKind {
    match tag {
        "caught" => ConstructKind::ExceptionHandler,
        "validated" => ConstructKind::Validation,
        _ => ConstructKind::ControlFlowGuard,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub flow_id: String,
    pub reachable: bool,
    pub interrupting_constructs: Vec<InterruptingConstruct>,
    pub hops: Vec<HopAssessment>,
    pub final_status: FinalStatus,
    pub mode: ReviewMode,
    /// Why an llm-mode review fell back to rule mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Flags every edge whose guard tags appear in the policy table; the flow is
/// unreachable when any flagged tag is fatal.
pub fn review_end_to_end(flow: &DataFlow, graph: &ProgramGraph, policy: &ReviewPolicy) -> ReachabilityFinding {
    let mut constructs = Vec::new();
    for (i, step) in flow.triples.iter().enumerate() {
        let Some(edge) = graph.edge(step.edge.as_str()) else {
            continue;
        };
        for tag in &edge.guard_tags {
            if let Some(&fatal) = policy.fatal_tags.get(tag) {
                constructs.push(InterruptingConstruct {
                    position: i + 1,
                    edge: edge.id.to_string(),
                    tag: tag.clone(),
                    kind: construct_kind(tag),
                    fatal,
                });
            }
        }
    }
    ReachabilityFinding {
        reachable: !constructs.iter().any(|c| c.fatal),
        interrupting_constructs: constructs,
    }
}

fn describe_node(graph: &ProgramGraph, id: &str) -> String {
    match graph.node(id) {
        Some(n) => {
            let kind = serde_json::to_value(n.kind).ok();
            format!("`{}` ({})", n.label, kind.as_ref().and_then(|v| v.as_str()).unwrap_or(""))
        }
        None => format!("`{id}`"),
    }
}

/// One assessment per triple from edge guard tags and sanitizer endpoints.
pub fn review_hop_by_hop(flow: &DataFlow, graph: &ProgramGraph) -> Vec<HopAssessment> {
    flow.triples
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let edge = graph.edge(step.edge.as_str());
            let to = graph.node(step.to.as_str());
            let via = match (edge, step.bridged) {
                (Some(e), _) => e.kind.as_str().to_string(),
                (None, true) => "synthesized call boundary".to_string(),
                (None, false) => "unknown edge".to_string(),
            };
            let function = to
                .and_then(|n| n.function_id.as_ref())
                .map(|f| format!(" in `{f}`"))
                .unwrap_or_default();
            let entry_description = format!(
                "taint enters {}{} via {} from {}",
                describe_node(graph, step.to.as_str()),
                function,
                via,
                describe_node(graph, step.from.as_str())
            );
            let content_and_path = format!("{} -[{}]-> {}", step.from, step.edge, step.to);
            let tagged = edge.and_then(|e| {
                HOP_TAGS
                    .iter()
                    .find(|(tag, _)| e.guard_tags.contains(*tag))
                    .map(|(tag, n)| (*n, format!("edge `{}` is tagged `{tag}`", e.id)))
            });
            let sanitizer = [&step.from, &step.to].into_iter().find_map(|id| {
                graph
                    .node(id.as_str())
                    .filter(|n| n.taint_role == TaintRole::Sanitizer)
                    .map(|n| (Neutralization::Sanitization, format!("node `{}` is a sanitizer", n.id)))
            });
            let (neutralization, justification) = tagged
                .or(sanitizer)
                .unwrap_or((Neutralization::None, String::new()));
            HopAssessment {
                position: i + 1,
                entry_description,
                content_and_path,
                neutralization,
                justification,
            }
        })
        .collect()
}

/// Refuted on any fatal construct or neutralizing hop; confirmed only for a
/// clean, reachable forward flow without bridged steps when the policy
/// allows auto-confirmation; needs-human otherwise.
pub fn finalize_verdict(
    flow: &DataFlow,
    findings: &ReachabilityFinding,
    hops: Vec<HopAssessment>,
    policy: &ReviewPolicy,
    mode: ReviewMode,
    fallback: Option<String>,
) -> ReviewVerdict {
    let neutralized = hops.iter().any(|h| h.neutralization != Neutralization::None);
    let final_status = if !findings.reachable || neutralized {
        FinalStatus::Refuted
    } else if flow.origin == FlowOrigin::Forward && !flow.has_bridged() && policy.auto_confirm_forward_flows {
        FinalStatus::Confirmed
    } else {
        FinalStatus::NeedsHuman
    };
    ReviewVerdict {
        flow_id: flow.id(),
        reachable: findings.reachable,
        interrupting_constructs: findings.interrupting_constructs.clone(),
        hops,
        final_status,
        mode,
        fallback,
    }
}

pub fn review_rule(flow: &DataFlow, graph: &ProgramGraph, policy: &ReviewPolicy) -> ReviewVerdict {
    let findings = review_end_to_end(flow, graph, policy);
    finalize_verdict(flow, &findings, review_hop_by_hop(flow, graph), policy, ReviewMode::Rule, None)
}

pub fn review_session(flow: &DataFlow) -> String {
    format!("review_{}", flow.id())
}

pub const REVIEW_SYSTEM_PROMPT: &str = "You audit a candidate taint flow hop by hop. For every triple, describe how \
the taint enters the code block, summarise the nodes and edge, and decide whether validation, sanitization, \
encoding or type casting neutralizes the propagation. Answer with a ```final``` block holding JSON \
{\"hops\": [{\"position\", \"entry_description\", \"content_and_path\", \"neutralization\", \"justification\"}]} \
with neutralization one of none, validation, sanitization, encoding, type-cast.";

fn review_task(flow: &DataFlow, graph: &ProgramGraph) -> String {
    let mut s = format!("Flow {} with {} triples:", flow.id(), flow.len());
    for h in review_hop_by_hop(flow, graph) {
        let tags = graph
            .edge(flow.triples[h.position - 1].edge.as_str())
            .map(|e| e.guard_tags.iter().cloned().collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        s.push_str(&format!("\n{}. {} [tags: {}]", h.position, h.content_and_path, tags));
    }
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlmHops {
    hops: Vec<HopAssessment>,
}

fn check_llm_hops(payload: &str, flow: &DataFlow) -> Result<Vec<HopAssessment>, String> {
    let parsed: LlmHops = serde_json::from_str(payload).map_err(|e| format!("schema: {e}"))?;
    if parsed.hops.len() != flow.len() {
        return Err(format!("schema: {} hops for {} triples", parsed.hops.len(), flow.len()));
    }
    for (i, h) in parsed.hops.iter().enumerate() {
        if h.position != i + 1 {
            return Err(format!("schema: hop {} has position {}", i + 1, h.position));
        }
        if h.neutralization != Neutralization::None && h.justification.trim().is_empty() {
            return Err(format!("schema: hop {} neutralized without justification", i + 1));
        }
    }
    Ok(parsed.hops)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmReview {
    pub verdict: ReviewVerdict,
    /// Present whenever the backend produced a transcript, including on fallback.
    pub outcome: Option<AgentOutcome>,
}

/// Hop breakdown requested from the model; any backend or schema failure
/// falls back to rule-mode hops and records why.
pub fn review_llm(
    flow: &DataFlow,
    graph: &ProgramGraph,
    policy: &ReviewPolicy,
    backend: &dyn LlmBackend,
    budget: Budget,
) -> LlmReview {
    let findings = review_end_to_end(flow, graph, policy);
    let run = run_react_loop(
        &review_session(flow),
        REVIEW_SYSTEM_PROMPT,
        &review_task(flow, graph),
        &ToolSet::new(),
        backend,
        budget,
    );
    let (outcome, checked) = match run {
        Err(e) => (None, Err(e.error.to_string())),
        Ok(out) => {
            let checked = match out.final_payload.as_deref() {
                None => Err(format!("no final answer ({:?})", out.stop_reason)),
                Some(p) => check_llm_hops(p, flow),
            };
            (Some(out), checked)
        }
    };
    let verdict = match checked {
        Ok(hops) => finalize_verdict(flow, &findings, hops, policy, ReviewMode::Llm, None),
        Err(reason) => finalize_verdict(
            flow,
            &findings,
            review_hop_by_hop(flow, graph),
            policy,
            ReviewMode::Rule,
            Some(reason),
        ),
    };
    LlmReview { verdict, outcome }
}
