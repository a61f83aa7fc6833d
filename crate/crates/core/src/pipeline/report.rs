//! The vulnerability report and its JSON/markdown export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::{AdvisoryRecord, ScoredFinding};
use crate::agent::UsageSummary;
use crate::code_model::{DataFlow, NodeId};
use crate::dependency_scan::{DependencyRecord, UsageRecord};
use crate::poc::PoCArtifact;
use crate::review::{FinalStatus, Neutralization, ReviewVerdict};
use crate::sinks::{Confidence, SinkCandidate, SinkOrigin};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEntry {
    pub record: DependencyRecord,
    pub usage: UsageRecord,
}

/// A scored community finding and the dependency it was retrieved for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityEntry {
    pub dependency: String,
    #[serde(flatten)]
    pub scored: ScoredFinding,
}

/// A node in the assembled sink set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkEntry {
    pub node: NodeId,
    pub label: String,
    pub callable_name: String,
    pub origin: SinkOrigin,
    pub confidence: Confidence,
    pub sink_kind: String,
    /// Advisories whose PoCs named this sink.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PocEntry {
    pub session: String,
    pub artifact: PoCArtifact,
    pub steps_taken: usize,
    pub budget_exhausted: bool,
    /// Candidates derived from this PoC before sink assembly.
    pub candidates: Vec<SinkCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub sink: NodeId,
    pub sink_origin: SinkOrigin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
    /// PoC sessions that produced the sink.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pocs: Vec<String>,
    /// Surrogate call site the stitched flow was searched towards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<NodeId>,
    pub flow: DataFlow,
    pub verdict: ReviewVerdict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounts {
    pub static_registry: usize,
    pub advisory_poc: usize,
    pub surrogate: usize,
}

impl OriginCounts {
    fn bump(&mut self, origin: SinkOrigin) {
        match origin {
            SinkOrigin::StaticRegistry => self.static_registry += 1,
            SinkOrigin::AdvisoryPoc => self.advisory_poc += 1,
            SinkOrigin::Surrogate => self.surrogate += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub confirmed: usize,
    pub refuted: usize,
    pub needs_human: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub dependencies: usize,
    pub advisories: usize,
    pub community_passed: usize,
    pub pocs: usize,
    /// Candidate sinks in the assembled sink set.
    pub sinks_total: usize,
    pub sinks_by_origin: OriginCounts,
    /// Sinks with at least one confirmed or needs-human finding.
    pub sinks_with_vulnerabilities: usize,
    pub surrogates: usize,
    pub flows_total: usize,
    pub forward_flows: usize,
    pub stitched_flows: usize,
    pub findings_by_status: StatusCounts,
    /// Confirmed plus needs-human findings.
    pub vulnerabilities: usize,
    pub vulnerabilities_by_origin: OriginCounts,
    pub confirmed_by_origin: OriginCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityReport {
    pub report_version: String,
    pub tool: ToolInfo,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub summary: Summary,
    pub token_usage: UsageSummary,
    pub dependencies: Vec<DependencyEntry>,
    pub advisories: Vec<AdvisoryRecord>,
    pub community: Vec<CommunityEntry>,
    pub pocs: Vec<PocEntry>,
    pub sinks: Vec<SinkEntry>,
    pub surrogates: Vec<SinkCandidate>,
    pub findings: Vec<Finding>,
    pub stage_errors: Vec<StageError>,
    pub warnings: Vec<String>,
}

pub fn is_vulnerability(status: FinalStatus) -> bool {
    matches!(status, FinalStatus::Confirmed | FinalStatus::NeedsHuman)
}

impl Summary {
    pub fn compute(r: &VulnerabilityReport) -> Summary {
        let mut sinks_by_origin = OriginCounts::default();
        for s in &r.sinks {
            sinks_by_origin.bump(s.origin);
        }
        let mut by_status = StatusCounts::default();
        let mut vuln_origin = OriginCounts::default();
        let mut confirmed_origin = OriginCounts::default();
        let mut vulnerable_sinks = std::collections::BTreeSet::new();
        let mut stitched = 0;
        for f in &r.findings {
            if f.flow.origin == crate::code_model::FlowOrigin::Stitched {
                stitched += 1;
            }
            match f.verdict.final_status {
                FinalStatus::Confirmed => {
                    by_status.confirmed += 1;
                    confirmed_origin.bump(f.sink_origin);
                }
                FinalStatus::Refuted => by_status.refuted += 1,
                FinalStatus::NeedsHuman => by_status.needs_human += 1,
            }
            if is_vulnerability(f.verdict.final_status) {
                vuln_origin.bump(f.sink_origin);
                vulnerable_sinks.insert(&f.sink);
            }
        }
        Summary {
            dependencies: r.dependencies.len(),
            advisories: r.advisories.len(),
            community_passed: r.community.iter().filter(|c| c.scored.passed_gate).count(),
            pocs: r.pocs.len(),
            sinks_total: r.sinks.len(),
            sinks_by_origin,
            sinks_with_vulnerabilities: vulnerable_sinks.len(),
            surrogates: r.surrogates.len(),
            flows_total: r.findings.len(),
            forward_flows: r.findings.len() - stitched,
            stitched_flows: stitched,
            findings_by_status: by_status,
            vulnerabilities: by_status.confirmed + by_status.needs_human,
            vulnerabilities_by_origin: vuln_origin,
            confirmed_by_origin: confirmed_origin,
        }
    }
}

impl VulnerabilityReport {
    pub fn has_confirmed(&self) -> bool {
        self.summary.findings_by_status.confirmed > 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn write_file(path: PathBuf, contents: &str) -> Result<(), ExportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ExportError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(&path, contents).map_err(|source| ExportError::Io { path, source })
}

/// Writes `report.json`, `report.md` and one JSON file per PoC artifact.
pub fn export_report(report: &VulnerabilityReport, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let json = dir.join("report.json");
    let md = dir.join("report.md");
    write_file(json.clone(), &report.to_json())?;
    write_file(md.clone(), &render_markdown(report))?;
    let mut written = vec![json, md];
    for p in &report.pocs {
        let path = dir.join("pocs").join(format!("{}.json", p.session));
        let mut text = serde_json::to_string_pretty(&p.artifact).expect("artifact serializes");
        text.push('\n');
        write_file(path.clone(), &text)?;
        written.push(path);
    }
    Ok(written)
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn status_str(s: FinalStatus) -> &'static str {
    match s {
        FinalStatus::Confirmed => "confirmed",
        FinalStatus::Refuted => "refuted",
        FinalStatus::NeedsHuman => "needs-human",
    }
}

fn origin_str(o: SinkOrigin) -> &'static str {
    match o {
        SinkOrigin::StaticRegistry => "static_registry",
        SinkOrigin::AdvisoryPoc => "advisory_poc",
        SinkOrigin::Surrogate => "surrogate",
    }
}

fn neutralization_str(n: Neutralization) -> &'static str {
    match n {
        Neutralization::None => "none",
        Neutralization::Validation => "validation",
        Neutralization::Sanitization => "sanitization",
        Neutralization::Encoding => "encoding",
        Neutralization::TypeCast => "type-cast",
    }
}

/// Human-readable summary with one section per finding, in report order.
pub fn render_markdown(r: &VulnerabilityReport) -> String {
    let s = &r.summary;
    let mut out = String::new();
    let _ = writeln!(out, "# Vulnerability report\n");
    let _ = writeln!(out, "Tool: {} {}  ", r.tool.name, r.tool.version);
    let _ = writeln!(out, "Config digest: `{}`\n", r.config_digest);
    let _ = writeln!(out, "## Summary\n");
    let _ = writeln!(out, "| Metric | Value |\n|---|---|");
    let flows = format!("{} ({} / {})", s.flows_total, s.forward_flows, s.stitched_flows);
    let vulns = format!(
        "{} ({} / {})",
        s.vulnerabilities, s.vulnerabilities_by_origin.static_registry, s.vulnerabilities_by_origin.advisory_poc
    );
    let rows: [(&str, String); 14] = [
        ("Dependencies", s.dependencies.to_string()),
        ("Advisories", s.advisories.to_string()),
        ("Community findings passing the gate", s.community_passed.to_string()),
        ("PoC artifacts", s.pocs.to_string()),
        ("Candidate sinks", s.sinks_total.to_string()),
        ("Sinks from static registry", s.sinks_by_origin.static_registry.to_string()),
        ("Sinks from advisory PoCs", s.sinks_by_origin.advisory_poc.to_string()),
        ("Surrogate sinks", s.surrogates.to_string()),
        ("Sinks with vulnerabilities", s.sinks_with_vulnerabilities.to_string()),
        ("Flows (forward / stitched)", flows),
        ("Confirmed", s.findings_by_status.confirmed.to_string()),
        ("Needs human review", s.findings_by_status.needs_human.to_string()),
        ("Refuted", s.findings_by_status.refuted.to_string()),
        ("Vulnerabilities (static / advisory)", vulns),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "| {k} | {v} |");
    }
    let u = &r.token_usage;
    let _ = writeln!(out, "\n## Token usage\n");
    let _ = writeln!(out, "| Stage | Prompt | Completion | Total |\n|---|---|---|---|");
    for (name, t) in [("poc", u.poc), ("review", u.review), ("total", u.total)] {
        let _ = writeln!(out, "| {name} | {} | {} | {} |", t.prompt, t.completion, t.total());
    }
    let _ = writeln!(out, "\n## Findings\n");
    if r.findings.is_empty() {
        let _ = writeln!(out, "No findings.");
    }
    let labels: BTreeMap<&NodeId, &SinkEntry> = r.sinks.iter().map(|e| (&e.node, e)).collect();
    for (i, f) in r.findings.iter().enumerate() {
        let label = labels.get(&f.sink).map_or(f.sink.as_str(), |e| e.label.as_str());
        let _ = writeln!(out, "### Finding {}: `{}` ({})\n", i + 1, label, status_str(f.verdict.final_status));
        let _ = writeln!(out, "- Flow: `{}` ({:?}, {} triples)", f.id, f.flow.origin, f.flow.len());
        let _ = writeln!(out, "- Sink: `{}` (origin {})", f.sink, origin_str(f.sink_origin));
        if let Some(sur) = &f.surrogate {
            let _ = writeln!(out, "- Surrogate: `{sur}`");
        }
        if !f.advisories.is_empty() {
            let _ = writeln!(out, "- Advisories: {}", f.advisories.join(", "));
        }
        let _ = writeln!(out, "- Reachable: {}", f.verdict.reachable);
        for c in &f.verdict.interrupting_constructs {
            let _ = writeln!(
                out,
                "- Interrupting construct at hop {}: `{}` on `{}`{}",
                c.position,
                c.tag,
                c.edge,
                if c.fatal { " (fatal)" } else { "" }
            );
        }
        if let Some(fb) = &f.verdict.fallback {
            let _ = writeln!(out, "- Review fell back to rule mode: {}", cell(fb));
        }
        let _ = writeln!(out, "\n| Hop | Path | Entry | Neutralization | Justification |\n|---|---|---|---|---|");
        for h in &f.verdict.hops {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                h.position,
                cell(&h.content_and_path),
                cell(&h.entry_description),
                neutralization_str(h.neutralization),
                cell(&h.justification)
            );
        }
        let _ = writeln!(out);
    }
    if !r.stage_errors.is_empty() {
        let _ = writeln!(out, "## Stage errors\n");
        for e in &r.stage_errors {
            let _ = writeln!(out, "- {} / {}: {}", e.stage, e.subject, cell(&e.message));
        }
        let _ = writeln!(out);
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(out, "## Warnings\n");
        for w in &r.warnings {
            let _ = writeln!(out, "- {}", cell(w));
        }
    }
    out
}
