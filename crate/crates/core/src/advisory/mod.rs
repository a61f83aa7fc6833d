//! Advisory retrieval: authoritative databases queried in parallel and
//! merged deterministically, plus hierarchical community issue collection
//! and scoring.

mod scoring;
mod transport;
mod version;

pub use scoring::{
    credibility_for_comments, credibility_score, gate_finding, gate_scores, quality_breakdown, quality_score,
    relevance_score, GateWeights, QualityBreakdown, ScoredFinding, ScoringConfig, ScoringError,
    CREDIBILITY_BASE, CREDIBILITY_CAP, CREDIBILITY_PER_COMMENT, DEFAULT_GATE_THRESHOLD,
};
pub use transport::{
    fixture_file_name, CommunityFeed, FixtureTransport, LiveTransport, LiveTransportConfig, RawAdvisory,
    Transport, TransportError,
};
pub use version::{compare_versions, version_in_range};

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependency_scan::DependencyRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdvisorySource {
    #[serde(rename = "NVD")]
    Nvd,
    #[serde(rename = "OSV")]
    Osv,
    #[serde(rename = "GHSA")]
    Ghsa,
    #[serde(rename = "Snyk")]
    Snyk,
    #[serde(rename = "community")]
    Community,
}

impl AdvisorySource {
    pub const AUTHORITATIVE: [AdvisorySource; 4] =
        [AdvisorySource::Nvd, AdvisorySource::Osv, AdvisorySource::Ghsa, AdvisorySource::Snyk];

    /// Lowercase tag used in fixture file names and endpoint configuration.
    pub fn as_str(self) -> &'static str {
        match self {
            AdvisorySource::Nvd => "nvd",
            AdvisorySource::Osv => "osv",
            AdvisorySource::Ghsa => "ghsa",
            AdvisorySource::Snyk => "snyk",
            AdvisorySource::Community => "community",
        }
    }
}

/// Ordered from least to most severe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    #[default]
    Unknown,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn from_cvss(score: f64) -> Severity {
        if !score.is_finite() || score < 0.0 {
            Severity::Unknown
        } else if score >= 9.0 {
            Severity::Critical
        } else if score >= 7.0 {
            Severity::High
        } else if score >= 4.0 {
            Severity::Medium
        } else {
            Severity::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdvisoryRecord {
    pub source: AdvisorySource,
    pub identifier: String,
    pub description: String,
    pub severity: Severity,
    pub affected_versions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_id: Option<String>,
    pub dependency: String,
}

impl AdvisoryRecord {
    fn from_raw(source: AdvisorySource, raw: RawAdvisory, dep: &DependencyRecord) -> AdvisoryRecord {
        let severity = match (raw.cvss_score, raw.severity) {
            (Some(score), _) => Severity::from_cvss(score),
            (None, Some(s)) => s,
            (None, None) => Severity::Unknown,
        };
        AdvisoryRecord {
            source,
            identifier: raw.identifier.trim().to_string(),
            description: raw.description,
            severity,
            affected_versions: raw.affected_versions,
            cve_id: raw.cve_id.filter(|c| !c.trim().is_empty()),
            dependency: dep.name.clone(),
        }
    }

    /// Total order used for the final listing: severity descending, then
    /// identifier, then the remaining fields so ties never depend on input
    /// order.
    fn listing_cmp(&self, other: &Self) -> Ordering {
        (Reverse(self.severity), &self.identifier, self.source, &self.description, &self.affected_versions, &self.cve_id)
            .cmp(&(
                Reverse(other.severity),
                &other.identifier,
                other.source,
                &other.description,
                &other.affected_versions,
                &other.cve_id,
            ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommunityIssue {
    pub title: String,
    pub body: String,
    pub comment_count: u64,
    pub cve_linked: bool,
    pub repo: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retrieved<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Default for Retrieved<T> {
    fn default() -> Self {
        Retrieved {
            items: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Merges per-source responses into the deduplicated, sorted listing. Among
/// records sharing an identifier the most severe wins, then the earlier
/// source in NVD, OSV, GHSA, Snyk order.
pub fn merge_authoritative(records: impl IntoIterator<Item = AdvisoryRecord>) -> Vec<AdvisoryRecord> {
    let mut best: BTreeMap<String, AdvisoryRecord> = BTreeMap::new();
    for rec in records {
        if rec.identifier.is_empty() {
            continue;
        }
        match best.get(&rec.identifier) {
            Some(cur) if dedup_key(cur) <= dedup_key(&rec) => {}
            _ => {
                best.insert(rec.identifier.clone(), rec);
            }
        }
    }
    let mut out: Vec<AdvisoryRecord> = best.into_values().collect();
    out.sort_by(AdvisoryRecord::listing_cmp);
    out
}

fn dedup_key(r: &AdvisoryRecord) -> (Reverse<Severity>, AdvisorySource, &str, &str, &Option<String>) {
    (Reverse(r.severity), r.source, &r.description, &r.affected_versions, &r.cve_id)
}

/// Queries the four authoritative sources concurrently. Per-source failures
/// become warnings; records whose range excludes a resolved dependency
/// version are dropped.
pub fn query_authoritative(dep: &DependencyRecord, transport: &dyn Transport) -> Retrieved<AdvisoryRecord> {
    let responses: Vec<(AdvisorySource, Result<Vec<RawAdvisory>, TransportError>)> = AdvisorySource::AUTHORITATIVE
        .par_iter()
        .map(|&s| (s, transport.authoritative(s, dep)))
        .collect();
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for (source, resp) in responses {
        match resp {
            Err(e) => warnings.push(e.to_string()),
            Ok(raws) => {
                for raw in raws {
                    let rec = AdvisoryRecord::from_raw(source, raw, dep);
                    if rec.identifier.is_empty() {
                        warnings.push(format!("{}: advisory with empty identifier skipped", source.as_str()));
                        continue;
                    }
                    if dep.version_resolved() {
                        match version_in_range(&dep.version, &rec.affected_versions) {
                            Ok(true) => {}
                            Ok(false) => continue,
                            Err(_) => warnings.push(format!(
                                "{}: {} has unparsable range {:?}; kept",
                                source.as_str(),
                                rec.identifier,
                                rec.affected_versions
                            )),
                        }
                    }
                    records.push(rec);
                }
            }
        }
    }
    Retrieved {
        items: merge_authoritative(records),
        warnings,
    }
}

/// Orders community issues: primary repository before forks (in the feed's
/// fork order), CVE/GHSA-linked before unlinked, then by URL.
pub fn order_community(feed: &CommunityFeed) -> Retrieved<CommunityIssue> {
    let mut warnings = Vec::new();
    let rank_of = |repo: &str| -> Option<usize> {
        if repo == feed.repository {
            Some(0)
        } else {
            feed.forks.iter().position(|f| f == repo).map(|i| i + 1)
        }
    };
    let mut ranked: Vec<(usize, &CommunityIssue)> = Vec::new();
    for issue in &feed.issues {
        match rank_of(&issue.repo) {
            Some(r) => ranked.push((r, issue)),
            None => warnings.push(format!(
                "community: issue {} from unrelated repository {} dropped",
                issue.url, issue.repo
            )),
        }
    }
    ranked.sort_by(|(ra, a), (rb, b)| {
        (ra, !a.cve_linked, &a.url, &a.title, &a.body).cmp(&(rb, !b.cve_linked, &b.url, &b.title, &b.body))
    });
    let mut items: Vec<CommunityIssue> = ranked.into_iter().map(|(_, i)| i.clone()).collect();
    items.dedup();
    Retrieved { items, warnings }
}

pub fn query_community(dep: &DependencyRecord, transport: &dyn Transport) -> Retrieved<CommunityIssue> {
    match transport.community(dep) {
        Ok(None) => Retrieved::default(),
        Ok(Some(feed)) => order_community(&feed),
        Err(e) => Retrieved {
            items: Vec::new(),
            warnings: vec![e.to_string()],
        },
    }
}
