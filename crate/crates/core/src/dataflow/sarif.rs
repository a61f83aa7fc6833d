//! SARIF 2.1.0 `codeFlows` import.
//!
//! Each thread flow is a sequence of physical locations. Locations are bound
//! to content nodes through the graph's anchor table, consecutive nodes are
//! joined with an existing access-path edge, and the result is re-validated.
//! A thread flow that cannot be bound completely is skipped with a
//! diagnostic; partial flows are never produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_model::{validate_flow, DataFlow, FlowOrigin, FlowStep, NodeId, ProgramGraph};

#[derive(Debug, Error)]
pub enum SarifError {
    #[error("cannot read SARIF file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed SARIF at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported SARIF version {0:?} (expected 2.1.0)")]
    VersionUnsupported(String),
}

#[derive(Debug, Deserialize)]
struct SarifLog {
    version: String,
    #[serde(default)]
    runs: Vec<Run>,
}

#[derive(Debug, Deserialize)]
struct Run {
    #[serde(default)]
    results: Vec<SarifResult>,
}

#[derive(Debug, Deserialize)]
struct SarifResult {
    #[serde(rename = "ruleId")]
    rule_id: Option<String>,
    #[serde(rename = "codeFlows", default)]
    code_flows: Vec<CodeFlow>,
}

#[derive(Debug, Deserialize)]
struct CodeFlow {
    #[serde(rename = "threadFlows", default)]
    thread_flows: Vec<ThreadFlow>,
}

#[derive(Debug, Deserialize)]
struct ThreadFlow {
    #[serde(default)]
    locations: Vec<ThreadFlowLocation>,
}

/// Accepts both the standard `location.physicalLocation` nesting and a bare
/// `physicalLocation`.
#[derive(Debug, Deserialize)]
struct ThreadFlowLocation {
    location: Option<Location>,
    #[serde(rename = "physicalLocation")]
    physical_location: Option<PhysicalLocation>,
}

#[derive(Debug, Deserialize)]
struct Location {
    #[serde(rename = "physicalLocation")]
    physical_location: Option<PhysicalLocation>,
}

#[derive(Debug, Deserialize)]
struct PhysicalLocation {
    #[serde(rename = "artifactLocation")]
    artifact_location: Option<ArtifactLocation>,
    region: Option<Region>,
}

#[derive(Debug, Deserialize)]
struct ArtifactLocation {
    uri: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Region {
    #[serde(rename = "startLine")]
    start_line: Option<u32>,
    #[serde(rename = "endLine")]
    end_line: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum SkipReason {
    MissingLocation { step: usize },
    UnknownFile { step: usize, file: String },
    UnanchoredRegion { step: usize, file: String, line: u32 },
    NoEdge { step: usize, from: NodeId, to: NodeId },
    TooShort,
    Invalid { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarifDiagnostic {
    pub run: usize,
    pub result: usize,
    pub rule_id: Option<String>,
    pub code_flow: usize,
    pub thread_flow: usize,
    #[serde(flatten)]
    pub skip: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarifImport {
    pub flows: Vec<DataFlow>,
    pub diagnostics: Vec<SarifDiagnostic>,
}

fn normalize_uri(uri: &str) -> &str {
    let s = uri.strip_prefix("file://").unwrap_or(uri);
    s.strip_prefix("./").unwrap_or(s)
}

fn anchor_for(graph: &ProgramGraph, file: &str, start: u32, end: u32) -> Option<NodeId> {
    graph
        .anchors()
        .iter()
        .filter(|a| normalize_uri(&a.file) == file && a.start_line <= start && end <= a.end_line)
        .min_by(|a, b| {
            (a.end_line - a.start_line, &a.node).cmp(&(b.end_line - b.start_line, &b.node))
        })
        .map(|a| a.node.clone())
}

fn bind_thread_flow(
    graph: &ProgramGraph,
    tf: &ThreadFlow,
    max_length: usize,
) -> Result<DataFlow, SkipReason> {
    let mut nodes: Vec<NodeId> = Vec::new();
    for (step, loc) in tf.locations.iter().enumerate() {
        let phys = loc
            .location
            .as_ref()
            .and_then(|l| l.physical_location.as_ref())
            .or(loc.physical_location.as_ref())
            .ok_or(SkipReason::MissingLocation { step })?;
        let uri = phys
            .artifact_location
            .as_ref()
            .and_then(|a| a.uri.as_deref())
            .ok_or(SkipReason::MissingLocation { step })?;
        let start = phys
            .region
            .as_ref()
            .and_then(|r| r.start_line)
            .ok_or(SkipReason::MissingLocation { step })?;
        let end = phys.region.as_ref().and_then(|r| r.end_line).unwrap_or(start);
        let file = normalize_uri(uri);
        if !graph.files().iter().any(|f| normalize_uri(f) == file) {
            return Err(SkipReason::UnknownFile {
                step,
                file: file.to_string(),
            });
        }
        let node = anchor_for(graph, file, start, end.max(start)).ok_or_else(|| {
            SkipReason::UnanchoredRegion {
                step,
                file: file.to_string(),
                line: start,
            }
        })?;
        // Several SARIF steps commonly sit inside one node's region.
        if nodes.last() != Some(&node) {
            nodes.push(node);
        }
    }
    if nodes.len() < 2 {
        return Err(SkipReason::TooShort);
    }
    let mut triples = Vec::with_capacity(nodes.len() - 1);
    for (step, pair) in nodes.windows(2).enumerate() {
        let edge = graph
            .outgoing(pair[0].as_str())
            .find(|e| e.to == pair[1])
            .ok_or_else(|| SkipReason::NoEdge {
                step: step + 1,
                from: pair[0].clone(),
                to: pair[1].clone(),
            })?;
        triples.push(FlowStep::new(edge.from.clone(), edge.id.clone(), edge.to.clone()));
    }
    let flow = DataFlow {
        triples,
        origin: FlowOrigin::Forward,
        max_length_bound: max_length,
    };
    let verdict = validate_flow(&flow, graph);
    if !verdict.accepted {
        return Err(SkipReason::Invalid {
            detail: format!("{:?}", verdict.violations),
        });
    }
    Ok(flow)
}

/// Parses SARIF text and binds its thread flows onto `graph`.
pub fn parse_sarif(
    text: &str,
    graph: &ProgramGraph,
    max_length: usize,
) -> Result<SarifImport, SarifError> {
    let log: SarifLog = serde_json::from_str(text).map_err(|e| SarifError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if log.version != "2.1.0" {
        return Err(SarifError::VersionUnsupported(log.version));
    }
    let mut out = SarifImport::default();
    for (ri, run) in log.runs.iter().enumerate() {
        for (xi, result) in run.results.iter().enumerate() {
            for (ci, cf) in result.code_flows.iter().enumerate() {
                for (ti, tf) in cf.thread_flows.iter().enumerate() {
                    match bind_thread_flow(graph, tf, max_length) {
                        Ok(flow) => out.flows.push(flow),
                        Err(skip) => out.diagnostics.push(SarifDiagnostic {
                            run: ri,
                            result: xi,
                            rule_id: result.rule_id.clone(),
                            code_flow: ci,
                            thread_flow: ti,
                            skip,
                        }),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reads a SARIF file and binds its thread flows onto `graph`.
pub fn import_sarif(
    path: impl AsRef<Path>,
    graph: &ProgramGraph,
    max_length: usize,
) -> Result<SarifImport, SarifError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SarifError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sarif(&text, graph, max_length)
}
