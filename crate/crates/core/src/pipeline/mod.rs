//! End-to-end orchestration: dependencies, advisories, PoCs, sink assembly,
//! forward search, recursion, review and report export.

mod config;
mod report;

pub use config::{AnalysisSpec, ConfigError, GateConfig, LlmSpec, PipelineConfig, RetrievalSpec};
pub use report::{
    export_report, is_vulnerability, CommunityEntry, render_markdown, DependencyEntry, ExportError, Finding, OriginCounts,
    PocEntry, SinkEntry, StageError, StatusCounts, Summary, ToolInfo, VulnerabilityReport, REPORT_VERSION,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::advisory::{
    gate_finding, query_authoritative, query_community, AdvisoryRecord, AdvisorySource, FixtureTransport,
    LiveTransport, ScoredFinding, ScoringConfig, Severity, Transport,
};
use crate::agent::{
    meter_tokens, LiveBackend, LlmBackend, ReplayBackend, ScriptBackend, Stage, StubBackend, Transcript,
};
use crate::code_model::{
    load_program_graph, validate_flow, DataFlow, FlowOrigin, GraphError, NodeId, ProgramGraph, TaintRole,
};
use crate::dataflow::{forward_search, import_sarif, FlowQuery, SarifError, SourceSelector};
use crate::dependency_scan::{find_usages, parse_manifest, DependencyRecord, ManifestError};
use crate::poc::{derive_sink_candidates, generate_poc, poc_session, PocContext};
use crate::recursion::{recover_flows, RecursionConfig};
use crate::review::{review_llm, review_rule, review_session, ReviewMode, ReviewPolicy, ReviewVerdict};
use crate::sinks::{RegistryError, SinkCandidate, SinkOrigin, SinkRegistry};

const CODE_EXCERPT_LIMIT: usize = 10;

/// Errors that stop the pipeline before a report can be produced.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sarif(#[from] SarifError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTranscript {
    pub session: String,
    pub stage: Stage,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: VulnerabilityReport,
    /// Every agent transcript, sorted by session name.
    pub transcripts: Vec<SessionTranscript>,
}

impl PipelineOutput {
    /// 1 when a confirmed finding exists, else 0.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.report.has_confirmed())
    }
}

fn stage_error(stage: &str, subject: impl Into<String>, message: impl ToString) -> StageError {
    StageError {
        stage: stage.to_string(),
        subject: subject.into(),
        message: message.to_string(),
    }
}

fn make_backend(config: &PipelineConfig) -> Box<dyn LlmBackend> {
    match &config.llm {
        LlmSpec::Stub => Box::new(StubBackend::empty_final()),
        LlmSpec::Script(dir) => Box::new(ScriptBackend::new(config.resolve(dir))),
        LlmSpec::Replay(dir, matching) => Box::new(ReplayBackend::new(config.resolve(dir), *matching)),
        LlmSpec::Live => Box::new(LiveBackend::new(config.live_llm.clone().expect("validated"))),
    }
}

fn make_transport(config: &PipelineConfig) -> Box<dyn Transport> {
    match &config.retrieval {
        RetrievalSpec::Offline(dir) => Box::new(FixtureTransport::new(config.resolve(dir))),
        RetrievalSpec::Live => Box::new(LiveTransport::new(config.live_retrieval.clone().expect("validated"))),
    }
}

/// Dependencies from every manifest, deduplicated by (name, version) in
/// manifest order. Manifest paths are kept as configured.
pub fn scan_dependencies(config: &PipelineConfig, graph: &ProgramGraph) -> Result<Vec<DependencyEntry>, ManifestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in &config.manifests {
        for mut record in parse_manifest(config.resolve(m))? {
            record.manifest_path = m.clone();
            if seen.insert((record.name.clone(), record.version.clone())) {
                let usage = find_usages(graph, &record);
                out.push(DependencyEntry { record, usage });
            }
        }
    }
    Ok(out)
}

pub struct RetrievalOutcome {
    pub advisories: Vec<AdvisoryRecord>,
    pub community: Vec<CommunityEntry>,
    pub warnings: Vec<String>,
}

/// Authoritative and community retrieval for every dependency, with
/// community findings scored and gated.
pub fn retrieve_advisories(
    config: &PipelineConfig,
    deps: &[DependencyEntry],
    transport: &dyn Transport,
) -> RetrievalOutcome {
    let scoring = ScoringConfig::default();
    let per_dep: Vec<_> = deps
        .par_iter()
        .map(|d| (query_authoritative(&d.record, transport), query_community(&d.record, transport)))
        .collect();
    let mut out = RetrievalOutcome {
        advisories: Vec::new(),
        community: Vec::new(),
        warnings: Vec::new(),
    };
    for (dep, (auth, comm)) in deps.iter().zip(per_dep) {
        out.advisories.extend(auth.items);
        out.warnings.extend(auth.warnings);
        out.warnings.extend(comm.warnings);
        for issue in &comm.items {
            let mut scored =
                gate_finding(issue, &config.gate.weights, config.gate.threshold, &scoring).expect("validated gate");
            if !dep.usage.used {
                scored.aggregate *= config.unused_dependency_weight;
                scored.passed_gate = scored.aggregate >= config.gate.threshold;
            }
            out.community.push(CommunityEntry {
                dependency: dep.record.name.clone(),
                scored,
            });
        }
    }
    out
}

fn community_advisory(f: &ScoredFinding, dependency: &str) -> AdvisoryRecord {
    AdvisoryRecord {
        source: AdvisorySource::Community,
        identifier: f.issue.url.clone(),
        description: format!("{}\n{}", f.issue.title, f.issue.body),
        severity: Severity::Unknown,
        affected_versions: String::new(),
        cve_id: None,
        dependency: dependency.to_string(),
    }
}

/// Static registry candidates first, then PoC candidates; a node named by
/// both keeps the static origin.
fn assemble_sinks(
    graph: &ProgramGraph,
    static_candidates: &[SinkCandidate],
    poc_candidates: &[SinkCandidate],
) -> BTreeMap<NodeId, SinkEntry> {
    let mut sinks: BTreeMap<NodeId, SinkEntry> = BTreeMap::new();
    for c in static_candidates.iter().chain(poc_candidates) {
        for id in &c.matched_node_ids {
            let Some(node) = graph.node(id.as_str()) else { continue };
            if matches!(node.taint_role, TaintRole::Source | TaintRole::Sanitizer) {
                continue;
            }
            let entry = sinks.entry(id.clone()).or_insert_with(|| SinkEntry {
                node: id.clone(),
                label: node.label.clone(),
                callable_name: c.callable_name.clone(),
                origin: c.origin,
                confidence: c.confidence,
                sink_kind: c.sink_kind.clone(),
                advisories: Vec::new(),
            });
            if let Some(a) = &c.advisory {
                if !entry.advisories.contains(a) {
                    entry.advisories.push(a.clone());
                    entry.advisories.sort();
                }
            }
        }
    }
    sinks
}

struct CandidateFlow {
    sink: NodeId,
    surrogate: Option<NodeId>,
    flow: DataFlow,
}

/// Runs the whole pipeline. Only configuration and primary-input failures
/// are errors; everything else is recorded in the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let graph = load_program_graph(config.resolve(&config.graph))?;
    let registry = match &config.sink_registry {
        Some(p) => SinkRegistry::load(config.resolve(p))?,
        None => SinkRegistry::builtin(),
    };
    let deps = scan_dependencies(config, &graph)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    pool.install(|| run_stages(config, graph, registry, deps))
}

fn run_stages(
    config: &PipelineConfig,
    graph: ProgramGraph,
    registry: SinkRegistry,
    deps: Vec<DependencyEntry>,
) -> Result<PipelineOutput, PipelineError> {
    let mut stage_errors = Vec::new();
    let transport = make_transport(config);
    let retrieval = retrieve_advisories(config, &deps, transport.as_ref());
    let mut warnings = retrieval.warnings.clone();

    // PoC generation for every authoritative advisory and every community
    // finding that passed the gate.
    let mut gated: Vec<AdvisoryRecord> = retrieval.advisories.clone();
    gated.extend(
        retrieval
            .community
            .iter()
            .filter(|c| c.scored.passed_gate)
            .map(|c| community_advisory(&c.scored, &c.dependency)),
    );
    let mut seen = HashSet::new();
    gated.retain(|a| seen.insert(poc_session(a)));
    gated.sort_by(|a, b| a.identifier.cmp(&b.identifier));

    let backend = make_backend(config);
    let runs: Vec<_> = gated
        .par_iter()
        .map(|adv| {
            let usage = deps.iter().find(|d| d.record.name == adv.dependency).map(|d| d.usage.clone());
            let code_excerpts = usage
                .iter()
                .flat_map(|u| u.node_ids.iter())
                .filter_map(|id| graph.node(id.as_str()))
                .take(CODE_EXCERPT_LIMIT)
                .map(|n| n.label.clone())
                .collect();
            let ctx = PocContext { usage, code_excerpts };
            (adv, generate_poc(adv, &ctx, &graph, backend.as_ref(), config.budget))
        })
        .collect();
    let mut transcripts = Vec::new();
    let mut pocs = Vec::new();
    let mut poc_candidates = Vec::new();
    for (adv, run) in runs {
        let session = poc_session(adv);
        match run {
            Ok(run) => {
                let candidates = derive_sink_candidates(&run.artifact, &graph, &registry);
                poc_candidates.extend(candidates.iter().cloned());
                pocs.push(PocEntry {
                    session: session.clone(),
                    artifact: run.artifact,
                    steps_taken: run.outcome.steps_taken,
                    budget_exhausted: run.outcome.budget_exhausted,
                    candidates,
                });
                transcripts.push(SessionTranscript {
                    session,
                    stage: Stage::Poc,
                    transcript: run.outcome.transcript,
                });
            }
            Err(e) => {
                stage_errors.push(stage_error("poc", &adv.identifier, &e));
                transcripts.push(SessionTranscript {
                    session,
                    stage: Stage::Poc,
                    transcript: e.partial,
                });
            }
        }
    }

    // Sink set.
    let static_candidates = registry.candidates(&graph);
    let sinks = assemble_sinks(&graph, &static_candidates, &poc_candidates);
    let marked = graph.with_roles(
        sinks
            .values()
            .filter(|s| graph.node(s.node.as_str()).map(|n| n.taint_role) != Some(TaintRole::Sink))
            .map(|s| (s.node.to_string(), TaintRole::Sink, Some(s.sink_kind.clone()))),
    );
    let mut sinks = sinks;

    // Forward flows.
    let mut candidates: Vec<CandidateFlow> = Vec::new();
    match &config.analysis {
        AnalysisSpec::Builtin => {
            let query = FlowQuery {
                sources: SourceSelector::all(),
                sinks: sinks.keys().cloned().collect(),
                max_length: config.nf,
                max_flows_per_sink: config.max_flows_per_sink,
                respect_visibility: true,
            };
            match forward_search(&marked, &query) {
                Ok(flows) => candidates.extend(flows.into_iter().map(|f| CandidateFlow {
                    sink: f.sink().expect("non-empty flow").clone(),
                    surrogate: None,
                    flow: f,
                })),
                Err(e) => stage_errors.push(stage_error("dataflow", "forward_search", e)),
            }
        }
        AnalysisSpec::Sarif(p) => match import_sarif(config.resolve(p), &marked, config.nf) {
            Ok(import) => {
                for d in &import.diagnostics {
                    warnings.push(format!(
                        "sarif: run {} result {} code flow {} thread flow {} skipped: {:?}",
                        d.run, d.result, d.code_flow, d.thread_flow, d.skip
                    ));
                }
                for f in import.flows {
                    let sink = f.sink().expect("non-empty flow").clone();
                    sinks.entry(sink.clone()).or_insert_with(|| {
                        let label = marked.node(sink.as_str()).map(|n| n.label.clone()).unwrap_or_default();
                        SinkEntry {
                            node: sink.clone(),
                            callable_name: label.clone(),
                            label,
                            origin: SinkOrigin::StaticRegistry,
                            confidence: crate::sinks::Confidence::Exact,
                            sink_kind: "external".to_string(),
                            advisories: Vec::new(),
                        }
                    });
                    candidates.push(CandidateFlow { sink, surrogate: None, flow: f });
                }
            }
            Err(e) => stage_errors.push(stage_error("dataflow", p.display().to_string(), e)),
        },
    }

    // Recursion for sinks the forward stage could not reach.
    let reached: BTreeSet<NodeId> = candidates.iter().map(|c| c.sink.clone()).collect();
    let to_recurse: Vec<NodeId> = sinks
        .keys()
        .filter(|s| config.always_recurse || !reached.contains(*s))
        .cloned()
        .collect();
    let rec_cfg = RecursionConfig {
        sources: SourceSelector::all(),
        max_depth: config.max_depth,
        max_length: config.nf,
        max_flows_per_sink: config.max_flows_per_sink,
    };
    let recursions: Vec<_> = to_recurse
        .par_iter()
        .map(|s| (s, recover_flows(&marked, s, &rec_cfg)))
        .collect();
    let mut surrogates = Vec::new();
    for (sink, outcome) in recursions {
        match outcome {
            Ok(o) => {
                // A sink without callers is its own surrogate; what recursion
                // finds for it is a plain forward path.
                surrogates.extend(o.surrogates.into_iter().filter(|c| !c.matched_node_ids.contains(sink)));
                for d in o.diagnostics {
                    warnings.push(format!("recursion: sink {sink} surrogate {}: {}", d.surrogate, d.detail));
                }
                candidates.extend(o.stitched.into_iter().map(|s| {
                    let mut flow = s.combined;
                    let surrogate = if s.surrogate == s.root_sink {
                        flow.origin = FlowOrigin::Forward;
                        None
                    } else {
                        Some(s.surrogate)
                    };
                    CandidateFlow {
                        sink: s.root_sink,
                        surrogate,
                        flow,
                    }
                }));
            }
            Err(e) => stage_errors.push(stage_error("recursion", sink.as_str(), e)),
        }
    }

    // Every flow must satisfy the flow model before review.
    let mut seen_flows = HashSet::new();
    candidates.retain(|c| {
        let verdict = validate_flow(&c.flow, &marked);
        if !verdict.accepted {
            stage_errors.push(stage_error("validate", c.flow.id(), format!("{:?}", verdict.violations)));
            return false;
        }
        seen_flows.insert(c.flow.id())
    });
    candidates.sort_by(|a, b| {
        (&a.sink, a.flow.origin == FlowOrigin::Stitched, a.flow.edge_ids())
            .cmp(&(&b.sink, b.flow.origin == FlowOrigin::Stitched, b.flow.edge_ids()))
    });

    // Review.
    let policy = ReviewPolicy {
        auto_confirm_forward_flows: config.auto_confirm_forward_flows,
        ..ReviewPolicy::default()
    };
    let reviews: Vec<(ReviewVerdict, Option<Transcript>)> = candidates
        .par_iter()
        .map(|c| match config.review_mode {
            ReviewMode::Rule => (review_rule(&c.flow, &marked, &policy), None),
            ReviewMode::Llm => {
                let r = review_llm(&c.flow, &marked, &policy, backend.as_ref(), config.budget);
                (r.verdict, r.outcome.map(|o| o.transcript))
            }
        })
        .collect();
    let mut findings = Vec::new();
    for (c, (verdict, transcript)) in candidates.into_iter().zip(reviews) {
        if let Some(t) = transcript {
            transcripts.push(SessionTranscript {
                session: review_session(&c.flow),
                stage: Stage::Review,
                transcript: t,
            });
        }
        if let Some(fb) = &verdict.fallback {
            warnings.push(format!("review: flow {} fell back to rule mode: {fb}", c.flow.id()));
        }
        let entry = &sinks[&c.sink];
        let pocs_for_sink: Vec<String> = pocs
            .iter()
            .filter(|p| p.candidates.iter().any(|k| k.matched_node_ids.contains(&c.sink)))
            .map(|p| p.session.clone())
            .collect();
        findings.push(Finding {
            id: c.flow.id(),
            sink: c.sink.clone(),
            sink_origin: entry.origin,
            advisories: entry.advisories.clone(),
            pocs: pocs_for_sink,
            surrogate: c.surrogate,
            flow: c.flow,
            verdict,
        });
    }

    transcripts.sort_by(|a, b| a.session.cmp(&b.session));
    let token_usage = meter_tokens(transcripts.iter().map(|t| (t.stage, &t.transcript)));
    let mut report = VulnerabilityReport {
        report_version: REPORT_VERSION.to_string(),
        tool: ToolInfo::current(),
        config_digest: config.digest(),
        config: config.effective(),
        summary: Summary::default(),
        token_usage,
        dependencies: deps,
        advisories: retrieval.advisories,
        community: retrieval.community,
        pocs,
        sinks: sinks.into_values().collect(),
        surrogates,
        findings,
        stage_errors,
        warnings,
    };
    report.summary = Summary::compute(&report);
    Ok(PipelineOutput { report, transcripts })
}

/// Writes the report files and every transcript under `dir/transcripts`.
pub fn write_outputs(output: &PipelineOutput, dir: &Path) -> Result<(), ExportError> {
    for sub in ["transcripts", "pocs"] {
        let p = dir.join(sub);
        if p.is_dir() {
            std::fs::remove_dir_all(&p).map_err(|source| ExportError::Io { path: p.clone(), source })?;
        }
    }
    export_report(&output.report, dir)?;
    for t in &output.transcripts {
        let tdir = dir.join("transcripts");
        std::fs::create_dir_all(&tdir).map_err(|source| ExportError::Io { path: tdir.clone(), source })?;
        let path = tdir.join(format!("{}.jsonl", t.session));
        t.transcript
            .save(&path)
            .map_err(|e| ExportError::Io { path, source: std::io::Error::other(e.to_string()) })?;
    }
    Ok(())
}

/// Dependency records only (the `deps` subcommand).
pub fn dependency_records(entries: &[DependencyEntry]) -> Vec<&DependencyRecord> {
    entries.iter().map(|e| &e.record).collect()
}
