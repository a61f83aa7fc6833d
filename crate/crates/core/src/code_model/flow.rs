use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EdgeId, NodeId, ProgramGraph, TaintRole};

/// Default bound on flow length: a flow of `n` triples must satisfy `n < 64`.
pub const DEFAULT_MAX_FLOW_LENGTH: usize = 64;

fn is_false(b: &bool) -> bool {
    !*b
}

/// One `(from, edge, to)` triple.
///
/// `bridged` marks a pseudo-edge synthesized during stitching where the graph
/// records no access path; such steps always need human review.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowStep {
    pub from: NodeId,
    pub edge: EdgeId,
    pub to: NodeId,
    #[serde(default, skip_serializing_if = "is_false")]
    pub bridged: bool,
}

impl FlowStep {
    pub fn new(from: impl Into<NodeId>, edge: impl Into<EdgeId>, to: impl Into<NodeId>) -> Self {
        Self {
            from: from.into(),
            edge: edge.into(),
            to: to.into(),
            bridged: false,
        }
    }

    pub fn bridged(from: NodeId, to: NodeId) -> Self {
        Self {
            edge: EdgeId(format!("bridge:{from}->{to}")),
            from,
            to,
            bridged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowOrigin {
    Forward,
    Stitched,
}

/// An ordered edge-triple sequence from a node to a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFlow {
    pub triples: Vec<FlowStep>,
    pub origin: FlowOrigin,
    pub max_length_bound: usize,
}

impl DataFlow {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn source(&self) -> Option<&NodeId> {
        self.triples.first().map(|t| &t.from)
    }

    pub fn sink(&self) -> Option<&NodeId> {
        self.triples.last().map(|t| &t.to)
    }

    pub fn edge_ids(&self) -> Vec<&str> {
        self.triples.iter().map(|t| t.edge.as_str()).collect()
    }

    /// Node sequence `v1, v2, ..., v(n+1)`; assumes continuity.
    pub fn node_path(&self) -> Vec<&NodeId> {
        let mut v: Vec<&NodeId> = self.triples.iter().map(|t| &t.from).collect();
        if let Some(last) = self.triples.last() {
            v.push(&last.to);
        }
        v
    }

    pub fn has_bridged(&self) -> bool {
        self.triples.iter().any(|t| t.bridged)
    }

    /// Stable short identifier derived from the triple sequence.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.triples {
            h.update(t.from.as_str().as_bytes());
            h.update([0x1f]);
            h.update(t.edge.as_str().as_bytes());
            h.update([0x1f]);
            h.update(t.to.as_str().as_bytes());
            h.update([0x1e]);
        }
        let digest = h.finalize();
        format!("flow-{}", hex::encode(&digest[..6]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum FlowViolation {
    /// A flow has at least one triple.
    Empty,
    TooLong { length: usize, bound: usize },
    UnknownNode { position: usize, node: NodeId },
    UnknownEdge { position: usize, edge: EdgeId },
    EndpointMismatch { position: usize, edge: EdgeId },
    /// `to` of triple `position - 1` differs from `from` of triple `position`.
    Discontinuity { position: usize },
    /// A bridged step reuses the id of a real edge.
    BridgedCollision { position: usize, edge: EdgeId },
}

/// Outcome of [`validate_flow`]. Positions are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowVerdict {
    pub accepted: bool,
    pub violations: Vec<FlowViolation>,
    pub bridged_positions: Vec<usize>,
}

/// Checks a flow against its graph: every edge exists with matching
/// endpoints (or is an explicitly flagged bridge), consecutive triples share
/// a node, and the length is strictly below the flow's bound.
pub fn validate_flow(flow: &DataFlow, graph: &ProgramGraph) -> FlowVerdict {
    let mut violations = Vec::new();
    let mut bridged_positions = Vec::new();
    let n = flow.triples.len();
    if n == 0 {
        violations.push(FlowViolation::Empty);
    }
    if n >= flow.max_length_bound {
        violations.push(FlowViolation::TooLong {
            length: n,
            bound: flow.max_length_bound,
        });
    }
    for (i, t) in flow.triples.iter().enumerate() {
        let position = i + 1;
        for node in [&t.from, &t.to] {
            if !graph.contains_node(node.as_str()) {
                violations.push(FlowViolation::UnknownNode {
                    position,
                    node: node.clone(),
                });
            }
        }
        if t.bridged {
            bridged_positions.push(position);
            if graph.edge(t.edge.as_str()).is_some() {
                violations.push(FlowViolation::BridgedCollision {
                    position,
                    edge: t.edge.clone(),
                });
            }
        } else {
            match graph.edge(t.edge.as_str()) {
                None => violations.push(FlowViolation::UnknownEdge {
                    position,
                    edge: t.edge.clone(),
                }),
                Some(e) if e.from != t.from || e.to != t.to => {
                    violations.push(FlowViolation::EndpointMismatch {
                        position,
                        edge: t.edge.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if i > 0 && flow.triples[i - 1].to != t.from {
            violations.push(FlowViolation::Discontinuity { position });
        }
    }
    FlowVerdict {
        accepted: violations.is_empty(),
        violations,
        bridged_positions,
    }
}

impl DataFlow {
    /// True when the flow starts at a source and ends at a sink, as required
    /// of flows reported as vulnerability candidates.
    pub fn has_candidate_endpoints(&self, graph: &ProgramGraph) -> bool {
        let role = |id: Option<&NodeId>| id.and_then(|n| graph.node(n.as_str())).map(|n| n.taint_role);
        role(self.source()) == Some(TaintRole::Source) && role(self.sink()) == Some(TaintRole::Sink)
    }
}
