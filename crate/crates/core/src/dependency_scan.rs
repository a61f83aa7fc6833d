//! Manifest parsing and dependency usage lookup.
//!
//! Two manifest shapes are understood: the `<dependencies>` section of a
//! Maven `pom.xml` (with `${...}` resolved from `<properties>` only) and a
//! canonical `deps.json`. Only manifest-declared dependencies are reported.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_model::{NodeId, ProgramGraph};

pub const UNRESOLVED_VERSION: &str = "unresolved";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ecosystem {
    Maven,
    Generic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependencyScope {
    Compile,
    Runtime,
    Test,
    #[default]
    Unknown,
}

impl DependencyScope {
    fn from_maven(s: Option<&str>) -> Self {
        match s.map(str::trim) {
            None | Some("compile") => DependencyScope::Compile,
            Some("runtime") => DependencyScope::Runtime,
            Some("test") => DependencyScope::Test,
            Some(_) => DependencyScope::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependencyRecord {
    pub ecosystem: Ecosystem,
    pub name: String,
    pub version: String,
    pub scope: DependencyScope,
    pub manifest_path: PathBuf,
}

impl DependencyRecord {
    /// Code-namespace prefix used for usage lookup: the groupId of a
    /// `group:artifact` coordinate, or the whole name otherwise.
    pub fn package_prefix(&self) -> &str {
        match self.name.split_once(':') {
            Some((group, _)) => group,
            None => &self.name,
        }
    }

    pub fn version_resolved(&self) -> bool {
        self.version != UNRESOLVED_VERSION
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub dependency: DependencyRecord,
    pub node_ids: Vec<NodeId>,
    pub used: bool,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("unsupported manifest {0} (expected pom.xml or deps.json)")]
    Unsupported(PathBuf),
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path} at {context}: {message}")]
    Malformed {
        path: PathBuf,
        context: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ManifestKind {
    Pom,
    DepsJson,
}

fn manifest_kind(path: &Path) -> Option<ManifestKind> {
    let name = path.file_name()?.to_str()?;
    if name == "pom.xml" || name.ends_with(".pom") {
        Some(ManifestKind::Pom)
    } else if name == "deps.json" || name.ends_with(".deps.json") {
        Some(ManifestKind::DepsJson)
    } else {
        None
    }
}

/// Parses one manifest into dependency records, deduplicated by
/// `(name, version)` and kept in manifest order.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<DependencyRecord>, ManifestError> {
    let path = path.as_ref();
    let kind = manifest_kind(path).ok_or_else(|| ManifestError::Unsupported(path.to_path_buf()))?;
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = match kind {
        ManifestKind::Pom => parse_pom(&text, path)?,
        ManifestKind::DepsJson => parse_deps_json(&text, path)?,
    };
    let mut seen = HashSet::new();
    Ok(records
        .into_iter()
        .filter(|r| seen.insert((r.name.clone(), r.version.clone())))
        .collect())
}

fn malformed(path: &Path, context: impl Into<String>, message: impl Into<String>) -> ManifestError {
    ManifestError::Malformed {
        path: path.to_path_buf(),
        context: context.into(),
        message: message.into(),
    }
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, tag: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == tag)
        .and_then(|c| c.text())
        .map(str::trim)
}

fn interpolate(raw: &str, props: &HashMap<String, String>) -> Option<String> {
    let mut out = String::new();
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}')? + start;
        let key = &rest[start + 2..end];
        out.push_str(props.get(key)?);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Some(out)
}

fn parse_pom(text: &str, path: &Path) -> Result<Vec<DependencyRecord>, ManifestError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        malformed(path, format!("line {}, column {}", pos.row, pos.col), e.to_string())
    })?;
    let project = doc.root_element();
    if project.tag_name().name() != "project" {
        return Err(malformed(path, "root element", "expected <project>"));
    }
    let mut props = HashMap::new();
    if let Some(p) = project
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "properties")
    {
        for prop in p.children().filter(|c| c.is_element()) {
            props.insert(
                prop.tag_name().name().to_string(),
                prop.text().unwrap_or("").trim().to_string(),
            );
        }
    }
    let mut out = Vec::new();
    let Some(deps) = project
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "dependencies")
    else {
        return Ok(out);
    };
    for dep in deps
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "dependency")
    {
        let line = doc.text_pos_at(dep.range().start).row;
        let context = format!("<dependency> at line {line}");
        let group = child_text(dep, "groupId")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed(path, &context, "missing <groupId>"))?;
        let artifact = child_text(dep, "artifactId")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed(path, &context, "missing <artifactId>"))?;
        let group = interpolate(group, &props)
            .ok_or_else(|| malformed(path, &context, "unresolvable property in <groupId>"))?;
        let artifact = interpolate(artifact, &props)
            .ok_or_else(|| malformed(path, &context, "unresolvable property in <artifactId>"))?;
        let version = child_text(dep, "version")
            .filter(|s| !s.is_empty())
            .and_then(|v| interpolate(v, &props))
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| UNRESOLVED_VERSION.to_string());
        out.push(DependencyRecord {
            ecosystem: Ecosystem::Maven,
            name: format!("{group}:{artifact}"),
            version,
            scope: DependencyScope::from_maven(child_text(dep, "scope")),
            manifest_path: path.to_path_buf(),
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DepsJson {
    format_version: String,
    dependencies: Vec<DepsJsonEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DepsJsonEntry {
    ecosystem: Ecosystem,
    name: String,
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    scope: DependencyScope,
}

fn parse_deps_json(text: &str, path: &Path) -> Result<Vec<DependencyRecord>, ManifestError> {
    let doc: DepsJson = serde_json::from_str(text).map_err(|e| {
        malformed(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    if doc.format_version != "1" {
        return Err(malformed(path, "format_version", format!("unsupported {:?}", doc.format_version)));
    }
    doc.dependencies
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.name.trim().is_empty() {
                return Err(malformed(path, format!("dependencies[{i}]"), "empty name"));
            }
            Ok(DependencyRecord {
                ecosystem: d.ecosystem,
                name: d.name,
                version: d
                    .version
                    .filter(|v| !v.trim().is_empty())
                    .unwrap_or_else(|| UNRESOLVED_VERSION.to_string()),
                scope: d.scope,
                manifest_path: path.to_path_buf(),
            })
        })
        .collect()
}

/// Content nodes whose label starts with the dependency's package prefix.
pub fn find_usages(graph: &ProgramGraph, dep: &DependencyRecord) -> UsageRecord {
    let prefix = dep.package_prefix();
    let mut node_ids: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| !prefix.is_empty() && n.label.starts_with(prefix))
        .map(|n| n.id.clone())
        .collect();
    node_ids.sort();
    UsageRecord {
        dependency: dep.clone(),
        used: !node_ids.is_empty(),
        node_ids,
    }
}
