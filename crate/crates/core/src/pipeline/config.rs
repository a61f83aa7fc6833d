//! Pipeline configuration: one JSON document whose paths are relative to
//! the file's directory, overridable field by field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::advisory::{GateWeights, LiveTransportConfig, DEFAULT_GATE_THRESHOLD};
use crate::agent::{Budget, LiveBackendConfig, ReplayMatching};
use crate::code_model::DEFAULT_MAX_FLOW_LENGTH;
use crate::dataflow::DEFAULT_MAX_FLOWS_PER_SINK;
use crate::recursion::DEFAULT_MAX_DEPTH;
use crate::review::ReviewMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field} {value:?}: {reason}")]
    Invalid {
        field: &'static str,
        value: String,
        reason: String,
    },
}

fn invalid(field: &'static str, value: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        value: value.into(),
        reason: reason.into(),
    }
}

/// Serializes through `Display`/`FromStr`.
macro_rules! string_spec {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Where advisories come from: `offline:<dir>` or `live`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetrievalSpec {
    Offline(PathBuf),
    Live,
}

impl fmt::Display for RetrievalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalSpec::Offline(p) => write!(f, "offline:{}", p.display()),
            RetrievalSpec::Live => f.write_str("live"),
        }
    }
}

impl FromStr for RetrievalSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "live" => Ok(RetrievalSpec::Live),
            Some(("offline", p)) if !p.is_empty() => Ok(RetrievalSpec::Offline(p.into())),
            _ => Err(format!("expected `offline:<dir>` or `live`, got {s:?}")),
        }
    }
}
string_spec!(RetrievalSpec);

/// LLM backend: `stub`, `script:<dir>`, `replay:<dir>`, `replay-strict:<dir>` or `live`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmSpec {
    Stub,
    Script(PathBuf),
    Replay(PathBuf, ReplayMatching),
    Live,
}

impl fmt::Display for LlmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmSpec::Stub => f.write_str("stub"),
            LlmSpec::Script(p) => write!(f, "script:{}", p.display()),
            LlmSpec::Replay(p, ReplayMatching::Structure) => write!(f, "replay:{}", p.display()),
            LlmSpec::Replay(p, ReplayMatching::Strict) => write!(f, "replay-strict:{}", p.display()),
            LlmSpec::Live => f.write_str("live"),
        }
    }
}

impl FromStr for LlmSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match (s, s.split_once(':')) {
            ("stub", _) => Ok(LlmSpec::Stub),
            ("live", _) => Ok(LlmSpec::Live),
            (_, Some(("script", p))) if !p.is_empty() => Ok(LlmSpec::Script(p.into())),
            (_, Some(("replay", p))) if !p.is_empty() => Ok(LlmSpec::Replay(p.into(), ReplayMatching::Structure)),
            (_, Some(("replay-strict", p))) if !p.is_empty() => Ok(LlmSpec::Replay(p.into(), ReplayMatching::Strict)),
            _ => Err(format!(
                "expected `stub`, `live`, `script:<dir>`, `replay:<dir>` or `replay-strict:<dir>`, got {s:?}"
            )),
        }
    }
}
string_spec!(LlmSpec);

/// Flow analysis backend: `builtin` or `sarif:<file>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalysisSpec {
    Builtin,
    Sarif(PathBuf),
}

impl fmt::Display for AnalysisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisSpec::Builtin => f.write_str("builtin"),
            AnalysisSpec::Sarif(p) => write!(f, "sarif:{}", p.display()),
        }
    }
}

impl FromStr for AnalysisSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "builtin" => Ok(AnalysisSpec::Builtin),
            Some(("sarif", p)) if !p.is_empty() => Ok(AnalysisSpec::Sarif(p.into())),
            _ => Err(format!("expected `builtin` or `sarif:<file>`, got {s:?}")),
        }
    }
}
string_spec!(AnalysisSpec);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub weights: GateWeights,
    pub threshold: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            weights: GateWeights::default(),
            threshold: DEFAULT_GATE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub repo: PathBuf,
    pub graph: PathBuf,
    pub manifests: Vec<PathBuf>,
    pub retrieval: RetrievalSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub live_retrieval: Option<LiveTransportConfig>,
    pub llm: LlmSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub live_llm: Option<LiveBackendConfig>,
    pub review_mode: ReviewMode,
    pub analysis: AnalysisSpec,
    pub sink_registry: Option<PathBuf>,
    pub gate: GateConfig,
    /// Multiplier on community-finding aggregates of dependencies the code never references.
    pub unused_dependency_weight: f64,
    pub nf: usize,
    pub max_depth: usize,
    pub max_flows_per_sink: usize,
    pub always_recurse: bool,
    pub auto_confirm_forward_flows: bool,
    pub budget: Budget,
    pub workers: usize,
    /// Never part of the config digest or the echoed config.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// Directory relative paths resolve against; set by `load`.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            repo: PathBuf::from("."),
            graph: PathBuf::from("program.graph.json"),
            manifests: Vec::new(),
            retrieval: RetrievalSpec::Offline(PathBuf::from("advisories")),
            live_retrieval: None,
            llm: LlmSpec::Stub,
            live_llm: None,
            review_mode: ReviewMode::Rule,
            analysis: AnalysisSpec::Builtin,
            sink_registry: None,
            gate: GateConfig::default(),
            unused_dependency_weight: 1.0,
            nf: DEFAULT_MAX_FLOW_LENGTH,
            max_depth: DEFAULT_MAX_DEPTH,
            max_flows_per_sink: DEFAULT_MAX_FLOWS_PER_SINK,
            always_recurse: false,
            auto_confirm_forward_flows: true,
            budget: Budget::default(),
            workers: 4,
            out: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        Ok(cfg)
    }

    /// `p` against the config directory unless absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks values and referenced inputs that must exist before running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gate
            .weights
            .validate()
            .map_err(|e| invalid("gate.weights", format!("{:?}", self.gate.weights), e.to_string()))?;
        if !self.gate.threshold.is_finite() {
            return Err(invalid("gate.threshold", self.gate.threshold.to_string(), "must be finite"));
        }
        if !(self.unused_dependency_weight.is_finite() && self.unused_dependency_weight >= 0.0) {
            return Err(invalid(
                "unused_dependency_weight",
                self.unused_dependency_weight.to_string(),
                "must be a non-negative number",
            ));
        }
        if self.nf < 2 {
            return Err(invalid("nf", self.nf.to_string(), "must be at least 2"));
        }
        if self.max_depth < 1 {
            return Err(invalid("max_depth", self.max_depth.to_string(), "must be at least 1"));
        }
        if self.workers < 1 {
            return Err(invalid("workers", self.workers.to_string(), "must be at least 1"));
        }
        if self.max_flows_per_sink < 1 {
            return Err(invalid("max_flows_per_sink", self.max_flows_per_sink.to_string(), "must be at least 1"));
        }
        match &self.retrieval {
            RetrievalSpec::Offline(dir) if !self.resolve(dir).is_dir() => {
                return Err(invalid("retrieval", self.retrieval.to_string(), "fixture directory does not exist"));
            }
            RetrievalSpec::Live if self.live_retrieval.is_none() => {
                return Err(invalid("retrieval", "live", "live_retrieval endpoints are not configured"));
            }
            _ => {}
        }
        match &self.llm {
            LlmSpec::Replay(dir, _) | LlmSpec::Script(dir) if !self.resolve(dir).is_dir() => {
                return Err(invalid("llm", self.llm.to_string(), "directory does not exist"));
            }
            LlmSpec::Live if self.live_llm.is_none() => {
                return Err(invalid("llm", "live", "live_llm endpoint is not configured"));
            }
            _ => {}
        }
        if let AnalysisSpec::Sarif(p) = &self.analysis {
            if !self.resolve(p).is_file() {
                return Err(invalid("analysis", self.analysis.to_string(), "SARIF file does not exist"));
            }
        }
        Ok(())
    }

    /// The effective configuration as echoed into reports.
    pub fn effective(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the echoed configuration (the output directory excluded).
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.effective()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_round_trip() {
        for s in ["stub", "live", "script:a/b", "replay:t", "replay-strict:t"] {
            assert_eq!(s.parse::<LlmSpec>().unwrap().to_string(), s);
        }
        for s in ["offline:fx", "live"] {
            assert_eq!(s.parse::<RetrievalSpec>().unwrap().to_string(), s);
        }
        for s in ["builtin", "sarif:x.sarif"] {
            assert_eq!(s.parse::<AnalysisSpec>().unwrap().to_string(), s);
        }
        assert!("replay:".parse::<LlmSpec>().is_err());
        assert!("online".parse::<RetrievalSpec>().is_err());
    }

    #[test]
    fn load_resolves_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("adv")).unwrap();
        let p = dir.path().join("config.json");
        std::fs::write(&p, r#"{"graph": "g.json", "retrieval": "offline:adv", "nf": 8, "out": "o1"}"#).unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.resolve(&cfg.graph), dir.path().join("g.json"));
        assert_eq!(cfg.nf, 8);
        cfg.validate().unwrap();
        let mut other = cfg.clone();
        other.out = "o2".into();
        assert_eq!(cfg.digest(), other.digest());
        other.nf = 9;
        assert_ne!(cfg.digest(), other.digest());
        assert!(cfg.effective().get("out").is_none());
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("config.json");
        std::fs::write(&p, r#"{"retrieval": "offline:missing"}"#).unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { field: "retrieval", .. })));
        std::fs::write(&p, r#"{"unknown": 1}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(ConfigError::Parse { .. })));
        let mut cfg = PipelineConfig { base_dir: dir.path().into(), retrieval: RetrievalSpec::Offline(".".into()), ..Default::default() };
        cfg.gate.weights.quality = 0.9;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { field: "gate.weights", .. })));
    }
}
