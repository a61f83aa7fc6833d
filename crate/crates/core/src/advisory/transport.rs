//! Retrieval backends: an offline fixture directory and a live HTTP mirror.
//!
//! Both speak the same normalized JSON layout, one document per
//! (source, dependency) named `<source>__<name with ':' as '__'>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdvisorySource, CommunityIssue, Severity};
use crate::dependency_scan::DependencyRecord;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{source_name}: cannot read {path}: {message}")]
    Io {
        source_name: String,
        path: PathBuf,
        message: String,
    },
    #[error("{source_name}: malformed response at line {line}, column {column}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{source_name}: request to {url} failed: {message}")]
    Http {
        source_name: String,
        url: String,
        message: String,
    },
}

/// Authoritative advisory as it appears in a fixture or mirror response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAdvisory {
    pub identifier: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub severity: Option<Severity>,
    #[serde(default)]
    pub cvss_score: Option<f64>,
    #[serde(default)]
    pub affected_versions: String,
    #[serde(default)]
    pub cve_id: Option<String>,
}

/// Community issues for one dependency plus its repository hierarchy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityFeed {
    pub repository: String,
    #[serde(default)]
    pub forks: Vec<String>,
    #[serde(default)]
    pub issues: Vec<CommunityIssue>,
}

pub fn fixture_file_name(source: AdvisorySource, dep: &DependencyRecord) -> String {
    format!("{}__{}.json", source.as_str(), dep.name.replace(':', "__"))
}

/// A retrieval backend. Missing data for a (source, dependency) pair is
/// `Ok(None)`, never an error.
pub trait Transport: Send + Sync {
    fn fetch(&self, source: AdvisorySource, dep: &DependencyRecord) -> Result<Option<String>, TransportError>;

    fn authoritative(
        &self,
        source: AdvisorySource,
        dep: &DependencyRecord,
    ) -> Result<Vec<RawAdvisory>, TransportError> {
        match self.fetch(source, dep)? {
            None => Ok(Vec::new()),
            Some(text) => decode(source, &text),
        }
    }

    fn community(&self, dep: &DependencyRecord) -> Result<Option<CommunityFeed>, TransportError> {
        match self.fetch(AdvisorySource::Community, dep)? {
            None => Ok(None),
            Some(text) => decode(AdvisorySource::Community, &text).map(Some),
        }
    }
}

fn decode<T: for<'de> Deserialize<'de>>(source: AdvisorySource, text: &str) -> Result<T, TransportError> {
    serde_json::from_str(text).map_err(|e| TransportError::Malformed {
        source_name: source.as_str().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Transport for FixtureTransport {
    fn fetch(&self, source: AdvisorySource, dep: &DependencyRecord) -> Result<Option<String>, TransportError> {
        let path = self.dir.join(fixture_file_name(source, dep));
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(TransportError::Io {
                source_name: source.as_str().to_string(),
                path,
                message: e.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveTransportConfig {
    /// Base URL per source name (`nvd`, `osv`, `ghsa`, `snyk`, `community`).
    pub endpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

pub struct LiveTransport {
    config: LiveTransportConfig,
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(config: LiveTransportConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LiveTransport { config, agent }
    }
}

impl Transport for LiveTransport {
    fn fetch(&self, source: AdvisorySource, dep: &DependencyRecord) -> Result<Option<String>, TransportError> {
        let Some(base) = self.config.endpoints.get(source.as_str()) else {
            return Ok(None);
        };
        let url = format!("{}/{}", base.trim_end_matches('/'), fixture_file_name(source, dep));
        let http_err = |message: String| TransportError::Http {
            source_name: source.as_str().to_string(),
            url: url.clone(),
            message,
        };
        let mut req = self.agent.get(&url);
        if let Some(key) = self.config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok()) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.call().map_err(|e| http_err(e.to_string()))?;
        match resp.status().as_u16() {
            404 => Ok(None),
            200..=299 => resp
                .body_mut()
                .read_to_string()
                .map(Some)
                .map_err(|e| http_err(e.to_string())),
            code => Err(http_err(format!("HTTP status {code}"))),
        }
    }
}
