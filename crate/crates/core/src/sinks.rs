//! Sink candidates and the static sink registry.
//!
//! A candidate binds a textual callable name to content nodes. Binding is
//! exact when a node label equals the name, fuzzy when the name equals the
//! label's trailing dot-separated segments (`DocumentBuilderFactory.newInstance`
//! against `javax.xml.parsers.DocumentBuilderFactory.newInstance`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_model::{NodeId, ProgramGraph, TaintRole};

const BUILTIN_REGISTRY: &str = include_str!("../data/sink_registry.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkOrigin {
    /// Proposed by a PoC agent from retrieved advisory data.
    AdvisoryPoc,
    /// Known dangerous callable, or a sink already marked in the graph.
    StaticRegistry,
    /// Leaf of a backward caller tree promoted to a forward-search target.
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkCandidate {
    pub callable_name: String,
    pub matched_node_ids: Vec<NodeId>,
    pub origin: SinkOrigin,
    pub confidence: Confidence,
    pub sink_kind: String,
    /// For surrogates: the original sink this candidate stands in for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_sink: Option<NodeId>,
    /// For PoC-derived candidates: the advisory that produced them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory: Option<String>,
}

/// Exact and fuzzy label matches for `name`, each sorted by node id.
/// Source and sanitizer nodes never match.
pub fn match_callable(graph: &ProgramGraph, name: &str) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut exact = Vec::new();
    let mut fuzzy = Vec::new();
    if name.is_empty() {
        return (exact, fuzzy);
    }
    for node in graph.nodes() {
        if matches!(node.taint_role, TaintRole::Source | TaintRole::Sanitizer) {
            continue;
        }
        if node.label == name {
            exact.push(node.id.clone());
        } else if is_trailing_segments(&node.label, name) {
            fuzzy.push(node.id.clone());
        }
    }
    exact.sort();
    fuzzy.sort();
    (exact, fuzzy)
}

pub(crate) fn is_trailing_segments(label: &str, name: &str) -> bool {
    label.len() > name.len()
        && label.ends_with(name)
        && label.as_bytes()[label.len() - name.len() - 1] == b'.'
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read sink registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sink registry: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkRegistry {
    pub format_version: String,
    /// sink_kind → fully qualified callables.
    pub sinks: BTreeMap<String, Vec<String>>,
}

impl SinkRegistry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("bundled registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Kind of a registered callable, matching either form.
    pub fn kind_of(&self, name: &str) -> Option<&str> {
        self.sinks.iter().find_map(|(kind, names)| {
            names
                .iter()
                .any(|n| n == name || is_trailing_segments(n, name))
                .then_some(kind.as_str())
        })
    }

    /// Candidates from registry entries that bind to graph nodes, plus one
    /// candidate per node the graph already marks as a sink.
    pub fn candidates(&self, graph: &ProgramGraph) -> Vec<SinkCandidate> {
        let mut out = Vec::new();
        for node in graph.nodes_with_role(TaintRole::Sink) {
            out.push(SinkCandidate {
                callable_name: node.label.clone(),
                matched_node_ids: vec![node.id.clone()],
                origin: SinkOrigin::StaticRegistry,
                confidence: Confidence::Exact,
                sink_kind: node.sink_kind.clone().unwrap_or_else(|| "unknown".into()),
                root_sink: None,
                advisory: None,
            });
        }
        for (kind, names) in &self.sinks {
            for name in names {
                let (exact, fuzzy) = match_callable(graph, name);
                let (matched, confidence) = if !exact.is_empty() {
                    (exact, Confidence::Exact)
                } else if !fuzzy.is_empty() {
                    (fuzzy, Confidence::Fuzzy)
                } else {
                    continue;
                };
                out.push(SinkCandidate {
                    callable_name: name.clone(),
                    matched_node_ids: matched,
                    origin: SinkOrigin::StaticRegistry,
                    confidence,
                    sink_kind: kind.clone(),
                    root_sink: None,
                    advisory: None,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::GraphLoader;

    fn graph() -> ProgramGraph {
        let text = r#"{
            "format_version": "1",
            "functions": [{"id": "f", "name": "f"}],
            "nodes": [
                {"id": "n1", "kind": "call-argument", "function_id": "f", "label": "javax.xml.parsers.DocumentBuilderFactory.newInstance"},
                {"id": "n2", "kind": "call-argument", "function_id": "f", "label": "DocumentBuilderFactory.newInstance"},
                {"id": "n3", "kind": "call-argument", "function_id": "f", "label": "MyDocumentBuilderFactory.newInstance"},
                {"id": "n4", "kind": "call-argument", "function_id": "f", "label": "java.lang.Runtime.exec"},
                {"id": "n5", "kind": "variable", "function_id": "f", "label": "x", "taint_role": "sink", "sink_kind": "sql-exec"}
            ],
            "edges": []
        }"#;
        GraphLoader::default().parse(text).unwrap().graph
    }

    #[test]
    fn exact_and_fuzzy_matching() {
        let (exact, fuzzy) = match_callable(&graph(), "DocumentBuilderFactory.newInstance");
        assert_eq!(exact, vec![NodeId::from("n2")]);
        // n3 shares a suffix but not a segment boundary.
        assert_eq!(fuzzy, vec![NodeId::from("n1")]);
    }

    #[test]
    fn registry_binds_known_callables() {
        let reg = SinkRegistry::builtin();
        let cands = reg.candidates(&graph());
        assert_eq!(cands.len(), 2);
        assert_eq!(cands[0].matched_node_ids, vec![NodeId::from("n5")]);
        assert_eq!(cands[0].sink_kind, "sql-exec");
        assert_eq!(cands[1].callable_name, "java.lang.Runtime.exec");
        assert_eq!(cands[1].confidence, Confidence::Exact);
        assert_eq!(reg.kind_of("Runtime.exec"), Some("command-exec"));
        assert_eq!(reg.kind_of("Foo.bar"), None);
    }
}
