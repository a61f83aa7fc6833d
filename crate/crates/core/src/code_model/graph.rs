use std::collections::{HashMap, HashSet};

use super::{
    AccessPathEdge, Anchor, CallEdge, ContentNode, EdgeKind, FunctionDecl, GraphDocument,
    GraphError, NodeKind, TaintRole,
};

/// A validated, indexed program graph.
///
/// Construction checks referential integrity; afterwards the graph is
/// read-only. Adjacency lists are kept sorted by edge id so every traversal
/// built on top of them is deterministic.
#[derive(Debug, Clone)]
pub struct ProgramGraph {
    doc: GraphDocument,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    function_index: HashMap<String, usize>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    callers: HashMap<String, Vec<usize>>,
}

impl PartialEq for ProgramGraph {
    fn eq(&self, other: &Self) -> bool {
        self.doc == other.doc
    }
}

fn integrity(id: impl Into<String>, reason: impl Into<String>) -> GraphError {
    GraphError::Integrity {
        id: id.into(),
        reason: reason.into(),
    }
}

impl ProgramGraph {
    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        if doc.format_version != super::FORMAT_VERSION {
            return Err(GraphError::Version(doc.format_version.clone()));
        }
        if doc.functions.is_empty() {
            return Err(integrity("functions", "graph must declare at least one function"));
        }

        let mut function_index = HashMap::with_capacity(doc.functions.len());
        for (i, f) in doc.functions.iter().enumerate() {
            if function_index.insert(f.id.0.clone(), i).is_some() {
                return Err(integrity(f.id.as_str(), "duplicate function id"));
            }
        }

        let mut node_index = HashMap::with_capacity(doc.nodes.len());
        for (i, n) in doc.nodes.iter().enumerate() {
            if node_index.insert(n.id.0.clone(), i).is_some() {
                return Err(integrity(n.id.as_str(), "duplicate node id"));
            }
            if let Some(fid) = &n.function_id {
                if !function_index.contains_key(fid.as_str()) {
                    return Err(integrity(
                        fid.as_str(),
                        format!("node `{}` is owned by an unknown function", n.id),
                    ));
                }
            }
            if n.taint_role == TaintRole::Sanitizer
                && (n.source_kind.is_some() || n.sink_kind.is_some())
            {
                return Err(integrity(
                    n.id.as_str(),
                    "sanitizer nodes cannot carry source_kind or sink_kind",
                ));
            }
        }

        let mut edge_index = HashMap::with_capacity(doc.edges.len());
        for (i, e) in doc.edges.iter().enumerate() {
            if edge_index.insert(e.id.0.clone(), i).is_some() {
                return Err(integrity(e.id.as_str(), "duplicate edge id"));
            }
            for end in [&e.from, &e.to] {
                if !node_index.contains_key(end.as_str()) {
                    return Err(integrity(
                        end.as_str(),
                        format!("edge `{}` references an unknown node", e.id),
                    ));
                }
            }
            if e.from == e.to && e.kind != EdgeKind::Assign {
                return Err(integrity(
                    e.id.as_str(),
                    "self-loop edges are only permitted for assign self-updates",
                ));
            }
        }

        for f in &doc.functions {
            let mut seen = HashSet::new();
            for p in &f.parameters {
                let Some(&ni) = node_index.get(p.as_str()) else {
                    return Err(integrity(
                        p.as_str(),
                        format!("parameter of function `{}` is an unknown node", f.id),
                    ));
                };
                let node = &doc.nodes[ni];
                if node.kind != NodeKind::Parameter {
                    return Err(integrity(p.as_str(), "parameter node must have kind=parameter"));
                }
                if node.function_id.as_ref() != Some(&f.id) {
                    return Err(integrity(
                        p.as_str(),
                        format!("parameter node is not owned by function `{}`", f.id),
                    ));
                }
                if !seen.insert(p.as_str()) {
                    return Err(integrity(p.as_str(), "parameter listed twice"));
                }
            }
            if let Some(r) = &f.return_node {
                if !node_index.contains_key(r.as_str()) {
                    return Err(integrity(
                        r.as_str(),
                        format!("return node of function `{}` is unknown", f.id),
                    ));
                }
            }
        }

        for c in &doc.call_edges {
            for fid in [&c.caller, &c.callee] {
                if !function_index.contains_key(fid.as_str()) {
                    return Err(integrity(fid.as_str(), "call edge references an unknown function"));
                }
            }
            let Some(&ni) = node_index.get(c.call_site_node.as_str()) else {
                return Err(integrity(
                    c.call_site_node.as_str(),
                    "call edge references an unknown call-site node",
                ));
            };
            if !matches!(doc.nodes[ni].kind, NodeKind::CallArgument | NodeKind::CallReturn) {
                return Err(integrity(
                    c.call_site_node.as_str(),
                    "call-site node must be a call-argument or call-return",
                ));
            }
        }

        let files: HashSet<&str> = doc.files.iter().map(String::as_str).collect();
        for a in &doc.anchors {
            if !node_index.contains_key(a.node.as_str()) {
                return Err(integrity(a.node.as_str(), "anchor references an unknown node"));
            }
            if !files.contains(a.file.as_str()) {
                return Err(integrity(a.file.as_str(), "anchor file is not in the source manifest"));
            }
            if a.end_line < a.start_line {
                return Err(integrity(a.node.as_str(), "anchor end_line precedes start_line"));
            }
        }

        let mut out_edges = vec![Vec::new(); doc.nodes.len()];
        let mut in_edges = vec![Vec::new(); doc.nodes.len()];
        for (i, e) in doc.edges.iter().enumerate() {
            out_edges[node_index[e.from.as_str()]].push(i);
            in_edges[node_index[e.to.as_str()]].push(i);
        }
        for list in out_edges.iter_mut().chain(in_edges.iter_mut()) {
            list.sort_by(|&a, &b| doc.edges[a].id.cmp(&doc.edges[b].id));
        }

        let mut callers: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, c) in doc.call_edges.iter().enumerate() {
            callers.entry(c.callee.0.clone()).or_default().push(i);
        }
        for list in callers.values_mut() {
            list.sort_by(|&a, &b| doc.call_edges[a].cmp(&doc.call_edges[b]));
        }

        Ok(Self {
            doc,
            node_index,
            edge_index,
            function_index,
            out_edges,
            in_edges,
            callers,
        })
    }

    pub fn document(&self) -> &GraphDocument {
        &self.doc
    }

    pub fn into_document(self) -> GraphDocument {
        self.doc
    }

    pub fn nodes(&self) -> &[ContentNode] {
        &self.doc.nodes
    }

    pub fn edges(&self) -> &[AccessPathEdge] {
        &self.doc.edges
    }

    pub fn functions(&self) -> &[FunctionDecl] {
        &self.doc.functions
    }

    pub fn call_edges(&self) -> &[CallEdge] {
        &self.doc.call_edges
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.doc.anchors
    }

    pub fn files(&self) -> &[String] {
        &self.doc.files
    }

    pub fn node(&self, id: &str) -> Option<&ContentNode> {
        self.node_index.get(id).map(|&i| &self.doc.nodes[i])
    }

    pub fn edge(&self, id: &str) -> Option<&AccessPathEdge> {
        self.edge_index.get(id).map(|&i| &self.doc.edges[i])
    }

    pub fn function(&self, id: &str) -> Option<&FunctionDecl> {
        self.function_index.get(id).map(|&i| &self.doc.functions[i])
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.node_index.contains_key(id)
    }

    /// Outgoing edges of `node`, ordered by edge id.
    pub fn outgoing<'a>(&'a self, node: &str) -> impl Iterator<Item = &'a AccessPathEdge> + 'a {
        let list = self
            .node_index
            .get(node)
            .map(|&i| self.out_edges[i].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&e| &self.doc.edges[e])
    }

    /// Incoming edges of `node`, ordered by edge id.
    pub fn incoming<'a>(&'a self, node: &str) -> impl Iterator<Item = &'a AccessPathEdge> + 'a {
        let list = self
            .node_index
            .get(node)
            .map(|&i| self.in_edges[i].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&e| &self.doc.edges[e])
    }

    /// Call edges whose callee is `function`, ordered by (caller, call site).
    pub fn callers_of<'a>(&'a self, function: &str) -> impl Iterator<Item = &'a CallEdge> + 'a {
        let list = self.callers.get(function).map(Vec::as_slice).unwrap_or(&[]);
        list.iter().map(move |&c| &self.doc.call_edges[c])
    }

    /// Nodes with the given role, in lexicographic id order.
    pub fn nodes_with_role(&self, role: TaintRole) -> Vec<&ContentNode> {
        let mut v: Vec<_> = self.doc.nodes.iter().filter(|n| n.taint_role == role).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub(crate) fn node_count(&self) -> usize {
        self.doc.nodes.len()
    }

    pub(crate) fn node_idx(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub(crate) fn node_at(&self, i: usize) -> &ContentNode {
        &self.doc.nodes[i]
    }

    pub(crate) fn out_edge_indices(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub(crate) fn in_edge_indices(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub(crate) fn edge_at(&self, i: usize) -> &AccessPathEdge {
        &self.doc.edges[i]
    }

    /// Returns a copy of this graph with the given nodes re-labelled.
    ///
    /// Only roles and kind tags change, so indices stay valid. Unknown ids
    /// are ignored.
    pub fn with_roles<I>(&self, updates: I) -> ProgramGraph
    where
        I: IntoIterator<Item = (String, TaintRole, Option<String>)>,
    {
        let mut g = self.clone();
        for (id, role, kind) in updates {
            if let Some(&i) = g.node_index.get(&id) {
                let node = &mut g.doc.nodes[i];
                node.taint_role = role;
                match role {
                    TaintRole::Sink => node.sink_kind = kind,
                    TaintRole::Source => node.source_kind = kind,
                    TaintRole::Sanitizer => {
                        node.sink_kind = None;
                        node.source_kind = None;
                    }
                    TaintRole::None => {}
                }
            }
        }
        g
    }
}
