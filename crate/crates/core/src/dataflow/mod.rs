//! Forward taint search from sources to sinks, plus SARIF import for
//! results produced by an external analyzer.
//!
//! The built-in engine enumerates simple paths (no node repeats) with a
//! depth-first worklist. For each target it first computes, by reverse BFS,
//! the minimum number of hops from every node to the target; a partial path
//! is only extended when it can still reach the target within the length
//! bound. Out-edges are visited in edge-id order, so per source the paths
//! come out in lexicographic edge-id order and the per-sink cap can stop the
//! search early.

mod sarif;

pub use sarif::{import_sarif, parse_sarif, SarifDiagnostic, SarifError, SarifImport, SkipReason};

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_model::{
    DataFlow, FlowOrigin, FlowStep, NodeId, ProgramGraph, TaintRole, DEFAULT_MAX_FLOW_LENGTH,
};

pub const DEFAULT_MAX_FLOWS_PER_SINK: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("unknown sink id `{0}`")]
    UnknownSinkId(String),
    #[error("unknown source id `{0}`")]
    UnknownSourceId(String),
    #[error("invalid flow query: {0}")]
    InvalidQuery(String),
}

/// Which nodes taint starts from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSelector {
    /// All `source` nodes whose `source_kind` is in the set; empty set means
    /// every source.
    Kinds(BTreeSet<String>),
    Nodes(Vec<NodeId>),
}

impl SourceSelector {
    pub fn all() -> Self {
        SourceSelector::Kinds(BTreeSet::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowQuery {
    pub sources: SourceSelector,
    pub sinks: Vec<NodeId>,
    /// Flows must have strictly fewer triples than this.
    pub max_length: usize,
    pub max_flows_per_sink: usize,
    pub respect_visibility: bool,
}

impl FlowQuery {
    pub fn new(sinks: Vec<NodeId>) -> Self {
        Self {
            sources: SourceSelector::all(),
            sinks,
            max_length: DEFAULT_MAX_FLOW_LENGTH,
            max_flows_per_sink: DEFAULT_MAX_FLOWS_PER_SINK,
            respect_visibility: true,
        }
    }

    pub fn uncapped(mut self) -> Self {
        self.max_flows_per_sink = usize::MAX;
        self
    }

    pub fn with_max_length(mut self, n: usize) -> Self {
        self.max_length = n;
        self
    }

    pub fn ignoring_visibility(mut self) -> Self {
        self.respect_visibility = false;
        self
    }
}

pub(crate) fn resolve_sources(
    graph: &ProgramGraph,
    selector: &SourceSelector,
) -> Result<Vec<usize>, FlowError> {
    let mut out = match selector {
        SourceSelector::Kinds(kinds) => graph
            .nodes_with_role(TaintRole::Source)
            .into_iter()
            .filter(|n| {
                kinds.is_empty()
                    || n.source_kind.as_ref().is_some_and(|k| kinds.contains(k))
            })
            .map(|n| graph.node_idx(n.id.as_str()).expect("indexed node"))
            .collect::<Vec<_>>(),
        SourceSelector::Nodes(ids) => ids
            .iter()
            .map(|id| {
                graph
                    .node_idx(id.as_str())
                    .ok_or_else(|| FlowError::UnknownSourceId(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    out.sort_by(|&a, &b| graph.node_at(a).id.cmp(&graph.node_at(b).id));
    out.dedup();
    Ok(out)
}

/// Finds data flows from the selected sources to every sink in the query.
///
/// Output is grouped by sink id; within a sink, flows are ordered by their
/// edge-id sequence and truncated to `max_flows_per_sink`.
pub fn forward_search(graph: &ProgramGraph, query: &FlowQuery) -> Result<Vec<DataFlow>, FlowError> {
    if query.max_length < 1 {
        return Err(FlowError::InvalidQuery("max_length must be at least 1".into()));
    }
    if query.max_flows_per_sink < 1 {
        return Err(FlowError::InvalidQuery("max_flows_per_sink must be at least 1".into()));
    }
    let mut sinks = Vec::with_capacity(query.sinks.len());
    for s in &query.sinks {
        let idx = graph
            .node_idx(s.as_str())
            .ok_or_else(|| FlowError::UnknownSinkId(s.to_string()))?;
        sinks.push(idx);
    }
    sinks.sort_by(|&a, &b| graph.node_at(a).id.cmp(&graph.node_at(b).id));
    sinks.dedup();
    let sources = resolve_sources(graph, &query.sources)?;

    let per_sink: Vec<Vec<DataFlow>> = sinks
        .par_iter()
        .map(|&sink| search_one_sink(graph, &sources, sink, query))
        .collect();
    Ok(per_sink.into_iter().flatten().collect())
}

struct Walk<'g> {
    graph: &'g ProgramGraph,
    respect_visibility: bool,
}

impl Walk<'_> {
    fn blocked(&self, node: usize) -> bool {
        self.graph.node_at(node).taint_role == TaintRole::Sanitizer
    }

    fn edge_usable(&self, edge: usize) -> bool {
        !self.respect_visibility || self.graph.edge_at(edge).visible_to_forward
    }

    /// Hop distance from every node to `target` over usable edges, avoiding
    /// sanitizers. `usize::MAX` marks unreachable nodes.
    fn distances_to(&self, target: usize, limit: usize) -> Vec<usize> {
        let g = self.graph;
        let mut dist = vec![usize::MAX; g.node_count()];
        if self.blocked(target) {
            return dist;
        }
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v];
            if d >= limit {
                continue;
            }
            for &e in g.in_edge_indices(v) {
                if !self.edge_usable(e) {
                    continue;
                }
                let u = g.node_idx(g.edge_at(e).from.as_str()).expect("indexed");
                if dist[u] == usize::MAX && !self.blocked(u) {
                    dist[u] = d + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

fn search_one_sink(
    graph: &ProgramGraph,
    sources: &[usize],
    sink: usize,
    query: &FlowQuery,
) -> Vec<DataFlow> {
    let walk = Walk {
        graph,
        respect_visibility: query.respect_visibility,
    };
    let max_edges = query.max_length - 1;
    let cap = query.max_flows_per_sink;
    let dist = walk.distances_to(sink, max_edges);

    let mut flows: Vec<Vec<usize>> = Vec::new();
    let mut on_path = vec![false; graph.node_count()];
    for &src in sources {
        if src == sink || walk.blocked(src) || dist[src] > max_edges {
            continue;
        }
        let mut found = 0usize;
        let mut edges: Vec<usize> = Vec::new();
        // (node, position of the next out-edge to try)
        let mut stack: Vec<(usize, usize)> = vec![(src, 0)];
        on_path[src] = true;
        'dfs: while let Some(top) = stack.last_mut() {
            let (v, pos) = *top;
            let outs = graph.out_edge_indices(v);
            if pos >= outs.len() {
                on_path[v] = false;
                stack.pop();
                edges.pop();
                continue;
            }
            top.1 += 1;
            let e = outs[pos];
            if !walk.edge_usable(e) {
                continue;
            }
            let w = graph.node_idx(graph.edge_at(e).to.as_str()).expect("indexed");
            if on_path[w] || dist[w] == usize::MAX || edges.len() + 1 + dist[w] > max_edges {
                continue;
            }
            if w == sink {
                let mut path = edges.clone();
                path.push(e);
                flows.push(path);
                found += 1;
                if found >= cap {
                    break 'dfs;
                }
                continue;
            }
            on_path[w] = true;
            edges.push(e);
            stack.push((w, 0));
        }
        for (v, _) in stack.drain(..) {
            on_path[v] = false;
        }
    }

    let mut flows: Vec<DataFlow> = flows
        .into_iter()
        .map(|path| DataFlow {
            triples: path
                .into_iter()
                .map(|e| {
                    let edge = graph.edge_at(e);
                    FlowStep::new(edge.from.clone(), edge.id.clone(), edge.to.clone())
                })
                .collect(),
            origin: FlowOrigin::Forward,
            max_length_bound: query.max_length,
        })
        .collect();
    flows.sort_by(|a, b| a.edge_ids().cmp(&b.edge_ids()));
    flows.truncate(cap);
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::{validate_flow, GraphLoader};

    /// Source `ip` is formatted into a command string that reaches a
    /// `subprocess.call(..., shell=True)` argument.
    pub(crate) const FIG1: &str = r#"{
        "format_version": "1",
        "functions": [{"id": "handler", "name": "ping_handler", "is_entry_point": true}],
        "nodes": [
            {"id": "ip", "kind": "variable", "function_id": "handler", "label": "request.args.ip", "taint_role": "source", "source_kind": "http-param"},
            {"id": "cmd", "kind": "variable", "function_id": "handler", "label": "cmd"},
            {"id": "call", "kind": "call-argument", "function_id": "handler", "label": "subprocess.call", "taint_role": "sink", "sink_kind": "command-exec"}
        ],
        "edges": [
            {"id": "e1", "from": "ip", "to": "cmd", "kind": "assign"},
            {"id": "e2", "from": "cmd", "to": "call", "kind": "call-pass"}
        ]
    }"#;

    fn graph(text: &str) -> ProgramGraph {
        GraphLoader::default().parse(text).unwrap().graph
    }

    #[test]
    fn fig1_has_one_flow_of_length_two() {
        let g = graph(FIG1);
        let flows = forward_search(&g, &FlowQuery::new(vec!["call".into()])).unwrap();
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].len(), 2);
        assert_eq!(flows[0].edge_ids(), vec!["e1", "e2"]);
        assert!(validate_flow(&flows[0], &g).accepted);
        assert!(flows[0].has_candidate_endpoints(&g));
    }

    #[test]
    fn sanitizer_kills_flow() {
        let text = FIG1.replace(
            r#""label": "cmd"}"#,
            r#""label": "shlex.quote", "taint_role": "sanitizer"}"#,
        );
        let g = graph(&text);
        let flows = forward_search(&g, &FlowQuery::new(vec!["call".into()])).unwrap();
        assert!(flows.is_empty());
    }

    #[test]
    fn hidden_edge_respected_unless_disabled() {
        let text = FIG1.replace(
            r#""kind": "call-pass"}"#,
            r#""kind": "call-pass", "visible_to_forward": false}"#,
        );
        let g = graph(&text);
        let q = FlowQuery::new(vec!["call".into()]);
        assert!(forward_search(&g, &q).unwrap().is_empty());
        assert_eq!(forward_search(&g, &q.ignoring_visibility()).unwrap().len(), 1);
    }

    #[test]
    fn length_bound_is_strict() {
        let g = graph(FIG1);
        let q = FlowQuery::new(vec!["call".into()]).with_max_length(2);
        assert!(forward_search(&g, &q).unwrap().is_empty());
        let q = FlowQuery::new(vec!["call".into()]).with_max_length(3);
        assert_eq!(forward_search(&g, &q).unwrap().len(), 1);
    }

    #[test]
    fn unknown_sink_is_an_error() {
        let g = graph(FIG1);
        let err = forward_search(&g, &FlowQuery::new(vec!["nope".into()])).unwrap_err();
        assert_eq!(err, FlowError::UnknownSinkId("nope".into()));
    }

    #[test]
    fn invalid_query_rejected() {
        let g = graph(FIG1);
        let q = FlowQuery::new(vec!["call".into()]).with_max_length(0);
        assert!(matches!(forward_search(&g, &q), Err(FlowError::InvalidQuery(_))));
    }

    #[test]
    fn cap_keeps_lexicographically_smallest() {
        // Diamond with three parallel middles: edges a*, b*, c*.
        let text = r#"{
            "format_version": "1",
            "functions": [{"id": "f", "name": "f"}],
            "nodes": [
                {"id": "s", "kind": "variable", "function_id": "f", "label": "s", "taint_role": "source"},
                {"id": "m1", "kind": "variable", "function_id": "f", "label": "m1"},
                {"id": "m2", "kind": "variable", "function_id": "f", "label": "m2"},
                {"id": "m3", "kind": "variable", "function_id": "f", "label": "m3"},
                {"id": "t", "kind": "variable", "function_id": "f", "label": "t", "taint_role": "sink"}
            ],
            "edges": [
                {"id": "c1", "from": "s", "to": "m3", "kind": "assign"},
                {"id": "c2", "from": "m3", "to": "t", "kind": "assign"},
                {"id": "a1", "from": "s", "to": "m1", "kind": "assign"},
                {"id": "a2", "from": "m1", "to": "t", "kind": "assign"},
                {"id": "b1", "from": "s", "to": "m2", "kind": "assign"},
                {"id": "b2", "from": "m2", "to": "t", "kind": "assign"}
            ]
        }"#;
        let g = graph(text);
        let mut q = FlowQuery::new(vec!["t".into()]);
        q.max_flows_per_sink = 2;
        let flows = forward_search(&g, &q).unwrap();
        let ids: Vec<_> = flows.iter().map(|f| f.edge_ids().join(",")).collect();
        assert_eq!(ids, vec!["a1,a2", "b1,b2"]);
    }

    #[test]
    fn source_kind_filter() {
        let g = graph(FIG1);
        let mut q = FlowQuery::new(vec!["call".into()]);
        q.sources = SourceSelector::Kinds(["env-var".to_string()].into());
        assert!(forward_search(&g, &q).unwrap().is_empty());
        q.sources = SourceSelector::Kinds(["http-param".to_string()].into());
        assert_eq!(forward_search(&g, &q).unwrap().len(), 1);
        q.sources = SourceSelector::Nodes(vec!["cmd".into()]);
        assert_eq!(forward_search(&g, &q).unwrap()[0].len(), 1);
    }
}
