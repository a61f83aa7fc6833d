//! Program-graph data model.
//!
//! A [`ProgramGraph`] is the ingested, language-neutral view of a project:
//! content nodes (variables, parameters, fields, collection elements, call
//! arguments and returns), the access-path edges that move content between
//! them, the functions that own those nodes and the call edges between
//! functions. Graphs are validated on construction and immutable afterwards,
//! so any number of analysis workers may share one by reference.
//!
//! Interprocedural propagation convention: a [`CallEdge`] anchors a call at a
//! `call-argument` (or `call-return`) node owned by the caller. Taint crosses
//! into the callee through `call-pass` edges from that node to the callee's
//! parameter nodes, and back out through `return` edges.

mod flow;
mod graph;
mod load;

pub use flow::{
    validate_flow, DataFlow, FlowOrigin, FlowStep, FlowVerdict, FlowViolation,
    DEFAULT_MAX_FLOW_LENGTH,
};
pub use graph::ProgramGraph;
pub use load::{load_program_graph, GraphError, GraphLoader, LoadedGraph, FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Opaque content-node identifier.
    NodeId
);
string_id!(
    /// Opaque access-path edge identifier.
    EdgeId
);
string_id!(
    /// Opaque function identifier.
    FunctionId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Variable,
    Parameter,
    Field,
    CollectionElement,
    CallArgument,
    CallReturn,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaintRole {
    #[default]
    None,
    Source,
    Sink,
    Sanitizer,
}

/// A variable or container that may hold taint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_id: Option<FunctionId>,
    pub label: String,
    #[serde(default)]
    pub taint_role: TaintRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_kind: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Assign,
    CallPass,
    Return,
    FieldWrite,
    FieldRead,
    CollectionPut,
    CollectionGet,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Assign => "assign",
            EdgeKind::CallPass => "call-pass",
            EdgeKind::Return => "return",
            EdgeKind::FieldWrite => "field-write",
            EdgeKind::FieldRead => "field-read",
            EdgeKind::CollectionPut => "collection-put",
            EdgeKind::CollectionGet => "collection-get",
        }
    }
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

/// How content propagates from one node to another.
///
/// `visible_to_forward = false` models a step that forward static analysis
/// cannot see (reflection, thread hand-off, aliasing).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPathEdge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub visible_to_forward: bool,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub guard_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub id: FunctionId,
    pub name: String,
    #[serde(default)]
    pub parameters: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_node: Option<NodeId>,
    #[serde(default)]
    pub is_entry_point: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: FunctionId,
    pub callee: FunctionId,
    pub call_site_node: NodeId,
}

/// Maps a source region to the content node it denotes. Used to bind
/// externally produced results (SARIF) back onto the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
    pub node: NodeId,
}

/// Serialized form of a program graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub format_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Anchor>,
    pub functions: Vec<FunctionDecl>,
    pub nodes: Vec<ContentNode>,
    pub edges: Vec<AccessPathEdge>,
    #[serde(default)]
    pub call_edges: Vec<CallEdge>,
}
