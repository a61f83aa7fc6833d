//! Relevance, credibility and quality scores for community-reported issues,
//! and the weighted gate that admits them to PoC generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CommunityIssue;

pub const RELEVANCE_BASE: f64 = 0.5;
pub const SPECULATIVE_BONUS: f64 = 0.4;
pub const SECURITY_TERM_BONUS: f64 = 0.1;
pub const CVE_LINKED_PENALTY: f64 = 0.1;
pub const CREDIBILITY_BASE: f64 = 0.3;
pub const CREDIBILITY_PER_COMMENT: f64 = 0.05;
pub const CREDIBILITY_CAP: f64 = 0.3;
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Keyword sets and lexicons. Entries may be multi-word phrases; matching is
/// case-insensitive over whole words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub speculative_keywords: Vec<String>,
    pub security_terms: Vec<String>,
    pub depth_lexicon: Vec<String>,
    pub impact_lexicon: Vec<String>,
    pub solution_lexicon: Vec<String>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            speculative_keywords: words(&["potential", "early"]),
            security_terms: words(&["vulnerability"]),
            depth_lexicon: words(&[
                "stack trace",
                "stacktrace",
                "traceback",
                "payload",
                "sink",
                "injection",
                "deserialization",
                "gadget",
                "taint",
                "xxe",
                "external entity",
                "exploit",
                "proof of concept",
                "poc",
            ]),
            impact_lexicon: words(&[
                "rce",
                "remote code execution",
                "arbitrary code execution",
                "xss",
                "cross site scripting",
                "data loss",
                "denial of service",
                "information disclosure",
                "privilege escalation",
                "arbitrary file read",
                "arbitrary file write",
                "ssrf",
            ]),
            solution_lexicon: words(&[
                "fix",
                "fixed",
                "fixes",
                "patch",
                "patched",
                "workaround",
                "mitigation",
                "upgrade to",
                "pull request",
            ]),
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(tokens: &[String], phrase: &str) -> bool {
    let p = tokenize(phrase);
    !p.is_empty() && tokens.windows(p.len()).any(|w| w == p.as_slice())
}

fn count_matches(tokens: &[String], lexicon: &[String]) -> usize {
    lexicon.iter().filter(|p| contains_phrase(tokens, p)).count()
}

fn description(issue: &CommunityIssue) -> String {
    format!("{}\n{}", issue.title, issue.body)
}

/// α_r: base 0.5, +0.4 on any speculative keyword, +0.1 on any explicit
/// security term, −0.1 when already linked to a CVE, clamped to [0, 1].
pub fn relevance_score(issue: &CommunityIssue, config: &ScoringConfig) -> f64 {
    let tokens = tokenize(&description(issue));
    let mut score = RELEVANCE_BASE;
    if count_matches(&tokens, &config.speculative_keywords) > 0 {
        score += SPECULATIVE_BONUS;
    }
    if count_matches(&tokens, &config.security_terms) > 0 {
        score += SECURITY_TERM_BONUS;
    }
    if issue.cve_linked {
        score -= CVE_LINKED_PENALTY;
    }
    score.clamp(0.0, 1.0)
}

/// α_c = 0.3 + min(N_c × 0.05, 0.3).
pub fn credibility_score(issue: &CommunityIssue) -> f64 {
    credibility_for_comments(issue.comment_count)
}

pub fn credibility_for_comments(comment_count: u64) -> f64 {
    CREDIBILITY_BASE + (comment_count as f64 * CREDIBILITY_PER_COMMENT).min(CREDIBILITY_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBreakdown {
    pub len_bucket: f64,
    pub depth: f64,
    pub impact: f64,
    pub code_example: f64,
    pub solution: f64,
}

impl QualityBreakdown {
    pub fn total(&self) -> f64 {
        0.2 * (self.len_bucket + self.depth + self.impact + self.code_example + self.solution)
    }
}

fn has_code_example(body: &str) -> bool {
    if body.contains("```") {
        return true;
    }
    body.lines()
        .any(|l| (l.starts_with("    ") || l.starts_with('\t')) && !l.trim().is_empty())
}

pub fn quality_breakdown(issue: &CommunityIssue, config: &ScoringConfig) -> QualityBreakdown {
    let body = &issue.body;
    let tokens = tokenize(body);
    let chars = body.chars().count();
    let len_bucket = if chars < 100 {
        0.0
    } else if chars < 500 {
        0.5
    } else {
        1.0
    };
    let depth = match count_matches(&tokens, &config.depth_lexicon) {
        0 => 0.0,
        1 => 0.5,
        _ => 1.0,
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    QualityBreakdown {
        len_bucket,
        depth,
        impact: flag(count_matches(&tokens, &config.impact_lexicon) > 0),
        code_example: flag(has_code_example(body)),
        solution: flag(count_matches(&tokens, &config.solution_lexicon) > 0),
    }
}

/// α_q: five rubric components over the issue body, 0.2 each.
pub fn quality_score(issue: &CommunityIssue, config: &ScoringConfig) -> f64 {
    quality_breakdown(issue, config).total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub relevance: f64,
    pub credibility: f64,
    pub quality: f64,
}

impl Default for GateWeights {
    fn default() -> Self {
        GateWeights {
            relevance: 1.0 / 3.0,
            credibility: 1.0 / 3.0,
            quality: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("invalid gate weights ({relevance}, {credibility}, {quality}): must be non-negative and sum to 1")]
    InvalidWeights {
        relevance: f64,
        credibility: f64,
        quality: f64,
    },
    #[error("invalid gate threshold {0}")]
    InvalidThreshold(f64),
}

impl GateWeights {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let parts = [self.relevance, self.credibility, self.quality];
        let ok = parts.iter().all(|w| w.is_finite() && *w >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_TOLERANCE;
        if ok {
            Ok(())
        } else {
            Err(ScoringError::InvalidWeights {
                relevance: self.relevance,
                credibility: self.credibility,
                quality: self.quality,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFinding {
    pub issue: CommunityIssue,
    pub relevance: f64,
    pub credibility: f64,
    pub quality: f64,
    pub aggregate: f64,
    pub passed_gate: bool,
}

/// Weighted aggregate of the three scores and the threshold decision.
pub fn gate_scores(
    scores: (f64, f64, f64),
    weights: &GateWeights,
    threshold: f64,
) -> Result<(f64, bool), ScoringError> {
    weights.validate()?;
    if !threshold.is_finite() {
        return Err(ScoringError::InvalidThreshold(threshold));
    }
    let (r, c, q) = scores;
    let aggregate = weights.relevance * r + weights.credibility * c + weights.quality * q;
    Ok((aggregate, aggregate >= threshold))
}

pub fn gate_finding(
    issue: &CommunityIssue,
    weights: &GateWeights,
    threshold: f64,
    config: &ScoringConfig,
) -> Result<ScoredFinding, ScoringError> {
    let relevance = relevance_score(issue, config);
    let credibility = credibility_score(issue);
    let quality = quality_score(issue, config);
    let (aggregate, passed_gate) = gate_scores((relevance, credibility, quality), weights, threshold)?;
    Ok(ScoredFinding {
        issue: issue.clone(),
        relevance,
        credibility,
        quality,
        aggregate,
        passed_gate,
    })
}
