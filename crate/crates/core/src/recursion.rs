//! Backward-forward recovery for sinks that forward search cannot reach.
//!
//! Starting from the function that owns an unreached sink, callers are
//! expanded breadth-first into a tree whose leaves are the uppermost calls.
//! Each leaf's call-site node becomes a surrogate sink; forward flows from
//! sources into a surrogate are then extended back down the tree path to the
//! original sink.
//!
//! Extending a flow across one tree level means crossing a call boundary and
//! then walking the callee's body to its own call site (or to the sink). The
//! boundary uses an existing `call-pass` edge into a callee parameter when
//! the graph has one, whether or not forward analysis can see it. With no
//! such edge a `bridged` pseudo-edge is synthesized. The walk through the
//! callee must use real edges; when it cannot, no flow is stitched.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_model::{
    validate_flow, DataFlow, EdgeKind, FlowOrigin, FlowStep, FunctionId, NodeId, NodeKind,
    ProgramGraph, TaintRole,
};
use crate::dataflow::{forward_search, FlowError, FlowQuery, SourceSelector};
use crate::sinks::{Confidence, SinkCandidate, SinkOrigin};

pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecursionError {
    #[error("unknown sink id `{0}`")]
    UnknownSinkId(String),
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    #[error("flow ends at `{0}`, which is not a surrogate of this tree")]
    SurrogateMismatch(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Absent only when the sink is a global outside any function.
    pub function: Option<FunctionId>,
    /// The call into the parent's function; for the root, the sink itself.
    pub call_site_node: NodeId,
    pub depth: usize,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardTree {
    pub root_sink: NodeId,
    pub max_depth: usize,
    pub nodes: Vec<TreeNode>,
    /// Indices into `nodes`, ordered by function id.
    pub leaves: Vec<usize>,
}

impl BackwardTree {
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaf_functions(&self) -> Vec<&FunctionId> {
        self.leaves
            .iter()
            .filter_map(|&i| self.nodes[i].function.as_ref())
            .collect()
    }

    /// Tree indices from `node` up to the root, inclusive.
    pub fn path_to_root(&self, mut node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.nodes[node].parent {
            path.push(p);
            node = p;
        }
        path
    }

    fn leaf_for_surrogate(&self, surrogate: &NodeId) -> Option<usize> {
        self.leaves
            .iter()
            .copied()
            .find(|&i| &self.nodes[i].call_site_node == surrogate)
    }
}

/// Builds the caller tree rooted at `sink`.
///
/// Breadth-first over reversed call edges; each function enters the tree at
/// most once. When a caller reaches the current function through several
/// call sites, the smallest call-site id is kept.
pub fn backward_expand(
    graph: &ProgramGraph,
    sink: &NodeId,
    max_depth: usize,
) -> Result<BackwardTree, RecursionError> {
    if max_depth < 1 {
        return Err(RecursionError::InvalidDepth);
    }
    let sink_node = graph
        .node(sink.as_str())
        .ok_or_else(|| RecursionError::UnknownSinkId(sink.to_string()))?;
    let mut nodes = vec![TreeNode {
        function: sink_node.function_id.clone(),
        call_site_node: sink.clone(),
        depth: 0,
        parent: None,
    }];
    let mut visited: HashSet<FunctionId> = nodes[0].function.iter().cloned().collect();
    let mut has_children = vec![false];
    let mut queue = VecDeque::from([0usize]);
    while let Some(t) = queue.pop_front() {
        let (Some(function), depth) = (nodes[t].function.clone(), nodes[t].depth) else {
            continue;
        };
        if depth >= max_depth {
            continue;
        }
        for call in graph.callers_of(function.as_str()) {
            if !visited.insert(call.caller.clone()) {
                continue;
            }
            has_children[t] = true;
            nodes.push(TreeNode {
                function: Some(call.caller.clone()),
                call_site_node: call.call_site_node.clone(),
                depth: depth + 1,
                parent: Some(t),
            });
            has_children.push(false);
            queue.push_back(nodes.len() - 1);
        }
    }
    let mut leaves: Vec<usize> = (0..nodes.len()).filter(|&i| !has_children[i]).collect();
    leaves.sort_by(|&a, &b| {
        (&nodes[a].function, &nodes[a].call_site_node).cmp(&(&nodes[b].function, &nodes[b].call_site_node))
    });
    Ok(BackwardTree {
        root_sink: sink.clone(),
        max_depth,
        nodes,
        leaves,
    })
}

/// One surrogate sink per tree leaf, in leaf order.
pub fn promote_surrogates(tree: &BackwardTree, graph: &ProgramGraph) -> Vec<SinkCandidate> {
    let sink_kind = graph
        .node(tree.root_sink.as_str())
        .and_then(|n| n.sink_kind.clone())
        .unwrap_or_else(|| "unknown".into());
    tree.leaves
        .iter()
        .map(|&i| {
            let site = &tree.nodes[i].call_site_node;
            SinkCandidate {
                callable_name: graph
                    .node(site.as_str())
                    .map(|n| n.label.clone())
                    .unwrap_or_else(|| site.to_string()),
                matched_node_ids: vec![site.clone()],
                origin: SinkOrigin::Surrogate,
                confidence: Confidence::Exact,
                sink_kind: sink_kind.clone(),
                root_sink: Some(tree.root_sink.clone()),
                advisory: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchedFlow {
    pub surrogate: NodeId,
    pub root_sink: NodeId,
    pub forward_part: DataFlow,
    /// Call-site chain from the surrogate down to the root sink.
    pub backward_part: Vec<NodeId>,
    pub combined: DataFlow,
    /// Always false here; only review can change a stitched flow's standing.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchDiagnostic {
    pub surrogate: NodeId,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchOutput {
    pub stitched: Vec<StitchedFlow>,
    pub diagnostics: Vec<StitchDiagnostic>,
}

/// Shortest real path `from → to`, ignoring visibility, never entering a
/// sanitizer. Ties break on edge id.
fn shortest_chain(graph: &ProgramGraph, from: &NodeId, to: &NodeId) -> Option<Vec<FlowStep>> {
    if from == to {
        return Some(Vec::new());
    }
    let mut prev: HashMap<&NodeId, (&NodeId, &crate::code_model::AccessPathEdge)> = HashMap::new();
    let mut seen: HashSet<&NodeId> = HashSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        for e in graph.outgoing(v.as_str()) {
            let w = &e.to;
            if seen.contains(w) {
                continue;
            }
            if graph.node(w.as_str()).map(|n| n.taint_role) == Some(TaintRole::Sanitizer) {
                continue;
            }
            seen.insert(w);
            prev.insert(w, (v, e));
            if w == to {
                let mut steps = Vec::new();
                let mut cur = w;
                while let Some(&(p, e)) = prev.get(cur) {
                    steps.push(FlowStep::new(e.from.clone(), e.id.clone(), e.to.clone()));
                    cur = p;
                }
                steps.reverse();
                return Some(steps);
            }
            queue.push_back(w);
        }
    }
    None
}

/// Steps from the call site `site` (in a caller) to `target` inside `callee`.
fn bridge_level(
    graph: &ProgramGraph,
    site: &NodeId,
    callee: &FunctionId,
    target: &NodeId,
) -> Result<Vec<FlowStep>, String> {
    let is_sanitizer =
        |id: &NodeId| graph.node(id.as_str()).map(|n| n.taint_role) == Some(TaintRole::Sanitizer);
    let entries: Vec<_> = graph
        .outgoing(site.as_str())
        .filter(|e| e.kind == EdgeKind::CallPass)
        .filter(|e| {
            graph
                .node(e.to.as_str())
                .is_some_and(|n| n.function_id.as_ref() == Some(callee) && n.kind == NodeKind::Parameter)
        })
        .collect();
    if !entries.is_empty() {
        for e in entries.iter().filter(|e| !is_sanitizer(&e.to)) {
            if let Some(rest) = shortest_chain(graph, &e.to, target) {
                let mut steps = vec![FlowStep::new(e.from.clone(), e.id.clone(), e.to.clone())];
                steps.extend(rest);
                return Ok(steps);
            }
        }
        return Err(format!("no access path from `{site}` through `{callee}` to `{target}`"));
    }
    let params = graph
        .function(callee.as_str())
        .map(|f| f.parameters.clone())
        .unwrap_or_default();
    if params.is_empty() {
        return Ok(vec![FlowStep::bridged(site.clone(), target.clone())]);
    }
    for p in params.iter().filter(|p| !is_sanitizer(p)) {
        if let Some(rest) = shortest_chain(graph, p, target) {
            let mut steps = vec![FlowStep::bridged(site.clone(), p.clone())];
            steps.extend(rest);
            return Ok(steps);
        }
    }
    Err(format!("no parameter of `{callee}` reaches `{target}`"))
}

/// Steps from a leaf's call site down to the root sink, plus the call-site chain.
fn backward_steps(
    graph: &ProgramGraph,
    tree: &BackwardTree,
    leaf: usize,
) -> Result<(Vec<FlowStep>, Vec<NodeId>), String> {
    let path = tree.path_to_root(leaf);
    let chain: Vec<NodeId> = path.iter().map(|&i| tree.nodes[i].call_site_node.clone()).collect();
    let mut steps = Vec::new();
    for pair in path.windows(2) {
        let (child, parent) = (&tree.nodes[pair[0]], &tree.nodes[pair[1]]);
        let callee = parent
            .function
            .as_ref()
            .ok_or_else(|| "tree level without a function".to_string())?;
        steps.extend(bridge_level(graph, &child.call_site_node, callee, &parent.call_site_node)?);
    }
    Ok((steps, chain))
}

/// Joins forward flows that end at surrogates of `tree` with the tree path
/// down to the root sink.
pub fn stitch(
    graph: &ProgramGraph,
    forward_flows: &[DataFlow],
    tree: &BackwardTree,
) -> Result<StitchOutput, RecursionError> {
    let mut leaves = Vec::with_capacity(forward_flows.len());
    for f in forward_flows {
        let end = f
            .sink()
            .ok_or_else(|| RecursionError::SurrogateMismatch(String::new()))?;
        let leaf = tree
            .leaf_for_surrogate(end)
            .ok_or_else(|| RecursionError::SurrogateMismatch(end.to_string()))?;
        leaves.push(leaf);
    }
    let mut cache: HashMap<usize, Result<(Vec<FlowStep>, Vec<NodeId>), String>> = HashMap::new();
    let mut out = StitchOutput::default();
    for (flow, leaf) in forward_flows.iter().zip(leaves) {
        let surrogate = tree.nodes[leaf].call_site_node.clone();
        let backward = cache
            .entry(leaf)
            .or_insert_with(|| backward_steps(graph, tree, leaf));
        let (steps, chain) = match backward {
            Ok(b) => b,
            Err(detail) => {
                out.diagnostics.push(StitchDiagnostic {
                    surrogate,
                    detail: detail.clone(),
                });
                continue;
            }
        };
        let mut triples = flow.triples.clone();
        triples.extend(steps.iter().cloned());
        let combined = DataFlow {
            triples,
            origin: FlowOrigin::Stitched,
            max_length_bound: flow.max_length_bound,
        };
        let verdict = validate_flow(&combined, graph);
        if !verdict.accepted {
            out.diagnostics.push(StitchDiagnostic {
                surrogate,
                detail: format!("stitched flow rejected: {:?}", verdict.violations),
            });
            continue;
        }
        out.stitched.push(StitchedFlow {
            surrogate,
            root_sink: tree.root_sink.clone(),
            forward_part: flow.clone(),
            backward_part: chain.clone(),
            combined,
            verified: false,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursionConfig {
    pub sources: SourceSelector,
    pub max_depth: usize,
    pub max_length: usize,
    pub max_flows_per_sink: usize,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        Self {
            sources: SourceSelector::all(),
            max_depth: DEFAULT_MAX_DEPTH,
            max_length: crate::code_model::DEFAULT_MAX_FLOW_LENGTH,
            max_flows_per_sink: crate::dataflow::DEFAULT_MAX_FLOWS_PER_SINK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecursionOutcome {
    pub tree: BackwardTree,
    pub surrogates: Vec<SinkCandidate>,
    pub stitched: Vec<StitchedFlow>,
    pub diagnostics: Vec<StitchDiagnostic>,
}

/// Full recursion step for one sink: expand, promote, search forward into
/// the surrogates, stitch.
pub fn recover_flows(
    graph: &ProgramGraph,
    sink: &NodeId,
    config: &RecursionConfig,
) -> Result<RecursionOutcome, RecursionError> {
    let tree = backward_expand(graph, sink, config.max_depth)?;
    let surrogates = promote_surrogates(&tree, graph);
    let targets: Vec<NodeId> = surrogates
        .iter()
        .flat_map(|s| s.matched_node_ids.iter().cloned())
        .collect();
    let query = FlowQuery {
        sources: config.sources.clone(),
        sinks: targets,
        max_length: config.max_length,
        max_flows_per_sink: config.max_flows_per_sink,
        respect_visibility: true,
    };
    let forward = forward_search(graph, &query)?;
    let StitchOutput {
        stitched,
        diagnostics,
    } = stitch(graph, &forward, &tree)?;
    Ok(RecursionOutcome {
        tree,
        surrogates,
        stitched,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::GraphLoader;

    fn graph(text: &str) -> ProgramGraph {
        GraphLoader::default().parse(text).unwrap().graph
    }

    /// entry(src) -> mid -> leafsink; call-pass mid_arg -> sink_p hidden.
    const CHAIN: &str = r#"{
        "format_version": "1",
        "functions": [
            {"id": "A", "name": "Controller.handle", "parameters": ["a_src"], "is_entry_point": true},
            {"id": "B", "name": "Service.run", "parameters": ["b_p"]},
            {"id": "C", "name": "Parser.parse", "parameters": ["c_p"]}
        ],
        "nodes": [
            {"id": "a_src", "kind": "parameter", "function_id": "A", "label": "req", "taint_role": "source"},
            {"id": "a_arg", "kind": "call-argument", "function_id": "A", "label": "Service.run"},
            {"id": "b_p", "kind": "parameter", "function_id": "B", "label": "input"},
            {"id": "b_v", "kind": "variable", "function_id": "B", "label": "buf"},
            {"id": "b_arg", "kind": "call-argument", "function_id": "B", "label": "Parser.parse"},
            {"id": "c_p", "kind": "parameter", "function_id": "C", "label": "xml"},
            {"id": "c_sink", "kind": "call-argument", "function_id": "C", "label": "DocumentBuilder.parse", "taint_role": "sink", "sink_kind": "xml-parse"}
        ],
        "edges": [
            {"id": "e1", "from": "a_src", "to": "a_arg", "kind": "assign"},
            {"id": "e2", "from": "a_arg", "to": "b_p", "kind": "call-pass"},
            {"id": "e3", "from": "b_p", "to": "b_v", "kind": "assign"},
            {"id": "e4", "from": "b_v", "to": "b_arg", "kind": "assign"},
            {"id": "e5", "from": "b_arg", "to": "c_p", "kind": "call-pass", "visible_to_forward": false},
            {"id": "e6", "from": "c_p", "to": "c_sink", "kind": "assign"}
        ],
        "call_edges": [
            {"caller": "A", "callee": "B", "call_site_node": "a_arg"},
            {"caller": "B", "callee": "C", "call_site_node": "b_arg"}
        ]
    }"#;

    #[test]
    fn entry_sink_gives_depth_zero_tree() {
        let g = graph(CHAIN);
        let tree = backward_expand(&g, &"a_arg".into(), DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.leaves, vec![0]);
        let s = promote_surrogates(&tree, &g);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].matched_node_ids, vec![NodeId::from("a_arg")]);
    }

    #[test]
    fn chain_tree_and_surrogate() {
        let g = graph(CHAIN);
        let tree = backward_expand(&g, &"c_sink".into(), DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.leaf_functions(), vec![&FunctionId::from("A")]);
        let s = promote_surrogates(&tree, &g);
        assert_eq!(s[0].matched_node_ids, vec![NodeId::from("a_arg")]);
        assert_eq!(s[0].origin, SinkOrigin::Surrogate);
        assert_eq!(s[0].root_sink, Some(NodeId::from("c_sink")));
    }

    #[test]
    fn depth_bound_cuts_tree() {
        let g = graph(CHAIN);
        let tree = backward_expand(&g, &"c_sink".into(), 1).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.leaf_functions(), vec![&FunctionId::from("B")]);
        assert_eq!(backward_expand(&g, &"c_sink".into(), 0), Err(RecursionError::InvalidDepth));
        assert!(matches!(
            backward_expand(&g, &"zz".into(), 3),
            Err(RecursionError::UnknownSinkId(_))
        ));
    }

    #[test]
    fn hidden_edge_recovered_identically() {
        let g = graph(CHAIN);
        let sink: NodeId = "c_sink".into();
        assert!(forward_search(&g, &FlowQuery::new(vec![sink.clone()])).unwrap().is_empty());
        let out = recover_flows(&g, &sink, &RecursionConfig::default()).unwrap();
        assert_eq!(out.stitched.len(), 1);
        let s = &out.stitched[0];
        assert!(!s.verified);
        assert!(!s.combined.has_bridged());
        assert_eq!(s.backward_part, vec![NodeId::from("a_arg"), "b_arg".into(), "c_sink".into()]);
        let oracle = forward_search(&g, &FlowQuery::new(vec![sink]).ignoring_visibility()).unwrap();
        assert_eq!(oracle.len(), 1);
        assert_eq!(oracle[0].triples, s.combined.triples);
    }

    #[test]
    fn missing_call_pass_is_bridged() {
        let text = CHAIN.replace(
            r#"{"id": "e5", "from": "b_arg", "to": "c_p", "kind": "call-pass", "visible_to_forward": false},"#,
            "",
        );
        let g = graph(&text);
        let out = recover_flows(&g, &"c_sink".into(), &RecursionConfig::default()).unwrap();
        assert_eq!(out.stitched.len(), 1);
        let c = &out.stitched[0].combined;
        assert!(c.has_bridged());
        let v = validate_flow(c, &g);
        assert!(v.accepted);
        assert_eq!(v.bridged_positions, vec![5]);
        assert_eq!(c.triples[4].edge.as_str(), "bridge:b_arg->c_p");
    }

    #[test]
    fn sanitizer_in_callee_prevents_stitch() {
        let text = CHAIN.replace(
            r#""label": "buf"}"#,
            r#""label": "escape", "taint_role": "sanitizer"}"#,
        );
        let g = graph(&text);
        let out = recover_flows(&g, &"c_sink".into(), &RecursionConfig::default()).unwrap();
        assert!(out.stitched.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn mutual_recursion_terminates() {
        let text = CHAIN.replace(
            r#"{"caller": "A", "callee": "B", "call_site_node": "a_arg"},"#,
            r#"{"caller": "A", "callee": "B", "call_site_node": "a_arg"},
               {"caller": "B", "callee": "A", "call_site_node": "b_arg"},
               {"caller": "C", "callee": "B", "call_site_node": "c_sink"},"#,
        );
        let g = graph(&text);
        let tree = backward_expand(&g, &"c_sink".into(), DEFAULT_MAX_DEPTH).unwrap();
        let mut fns: Vec<_> = tree.nodes.iter().map(|n| n.function.clone().unwrap()).collect();
        fns.sort();
        fns.dedup();
        assert_eq!(fns.len(), tree.nodes.len());
        assert!(tree.nodes.len() <= g.functions().len());
    }

    #[test]
    fn identity_stitch_for_root_surrogate() {
        let g = graph(CHAIN);
        let tree = backward_expand(&g, &"a_arg".into(), DEFAULT_MAX_DEPTH).unwrap();
        let fwd = forward_search(&g, &FlowQuery::new(vec!["a_arg".into()])).unwrap();
        let out = stitch(&g, &fwd, &tree).unwrap();
        assert_eq!(out.stitched.len(), 1);
        assert_eq!(out.stitched[0].combined.triples, fwd[0].triples);
        assert_eq!(out.stitched[0].combined.origin, FlowOrigin::Stitched);
    }

    #[test]
    fn two_forward_flows_share_backward_part() {
        let text = CHAIN
            .replace(
                r#"{"id": "a_arg","#,
                r#"{"id": "a_src2", "kind": "variable", "function_id": "A", "label": "cookie", "taint_role": "source"},
                   {"id": "a_arg","#,
            )
            .replace(
                r#"{"id": "e2","#,
                r#"{"id": "e1b", "from": "a_src2", "to": "a_arg", "kind": "assign"},
                   {"id": "e2","#,
            );
        let g = graph(&text);
        let out = recover_flows(&g, &"c_sink".into(), &RecursionConfig::default()).unwrap();
        assert_eq!(out.stitched.len(), 2);
        assert_eq!(out.stitched[0].backward_part, out.stitched[1].backward_part);
    }

    #[test]
    fn mismatched_surrogate_is_an_error() {
        let g = graph(CHAIN);
        let tree = backward_expand(&g, &"c_sink".into(), DEFAULT_MAX_DEPTH).unwrap();
        let fwd = forward_search(&g, &FlowQuery::new(vec!["b_v".into()]).ignoring_visibility()).unwrap();
        assert_eq!(
            stitch(&g, &fwd, &tree),
            Err(RecursionError::SurrogateMismatch("b_v".into()))
        );
    }
}
