use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{GraphDocument, ProgramGraph};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read graph {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported graph format_version {0:?} (expected \"1\")")]
    Version(String),
    #[error("unknown field `{path}` in graph document")]
    UnknownField { path: String },
    #[error("integrity error at `{id}`: {reason}")]
    Integrity { id: String, reason: String },
}

impl GraphError {
    /// The concrete id or line this diagnostic points at.
    pub fn locator(&self) -> String {
        match self {
            GraphError::Io { path, .. } => path.display().to_string(),
            GraphError::Parse { line, column, .. } => format!("line {line}:{column}"),
            GraphError::Version(v) => format!("format_version={v}"),
            GraphError::UnknownField { path } => path.clone(),
            GraphError::Integrity { id, .. } => id.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: ProgramGraph,
    /// Unknown fields skipped in lenient mode.
    pub warnings: Vec<String>,
}

/// Reads graph interchange documents.
#[derive(Debug, Clone, Copy)]
pub struct GraphLoader {
    pub strict: bool,
}

impl Default for GraphLoader {
    fn default() -> Self {
        Self { strict: true }
    }
}

impl GraphLoader {
    pub fn lenient() -> Self {
        Self { strict: false }
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<LoadedGraph, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.parse(&text)
    }

    pub fn parse(&self, text: &str) -> Result<LoadedGraph, GraphError> {
        let mut ignored = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let doc: GraphDocument = serde_ignored::deserialize(&mut de, |p| ignored.push(p.to_string()))
            .map_err(|e| GraphError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        de.end().map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if self.strict {
            if let Some(path) = ignored.first() {
                return Err(GraphError::UnknownField { path: path.clone() });
            }
        }
        let graph = ProgramGraph::from_document(doc)?;
        let warnings = ignored
            .into_iter()
            .map(|p| format!("ignored unknown field `{p}`"))
            .collect();
        Ok(LoadedGraph { graph, warnings })
    }
}

/// Loads a graph document in strict mode.
pub fn load_program_graph(path: impl AsRef<Path>) -> Result<ProgramGraph, GraphError> {
    GraphLoader::default().load(path).map(|l| l.graph)
}
