use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sinktrace::agent::{ReplayMatching, Transcript};
use sinktrace::code_model::{load_program_graph, NodeId};
use sinktrace::dataflow::{forward_search, FlowQuery, SourceSelector};
use sinktrace::pipeline::{
    dependency_records, retrieve_advisories, run_pipeline, scan_dependencies, write_outputs, AnalysisSpec,
    LlmSpec, PipelineConfig, PipelineError, RetrievalSpec,
};
use sinktrace::recursion::{recover_flows, RecursionConfig};
use sinktrace::review::ReviewMode;

const EXIT_FATAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "sinktrace", version, about = "Dependency-aware taint analysis with advisory-guided sinks")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Program graph file.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Dependency manifest; repeat for several. Replaces the configured list.
    #[arg(long = "manifest", global = true)]
    manifests: Vec<PathBuf>,
    /// Offline advisory fixture directory.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// LLM backend: stub, script:<dir>, replay:<dir>, replay-strict:<dir> or live.
    #[arg(long, global = true)]
    llm: Option<LlmSpec>,
    /// Flow analysis backend: builtin or sarif:<file>.
    #[arg(long, global = true)]
    backend: Option<AnalysisSpec>,
    /// Review mode: rule or llm.
    #[arg(long, global = true, value_parser = parse_review_mode)]
    review_mode: Option<ReviewMode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Maximum flow length in triples, exclusive.
    #[arg(long, global = true)]
    nf: Option<usize>,
    /// Maximum backward caller-tree depth.
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    #[arg(long, global = true)]
    gate_threshold: Option<f64>,
    /// Confirm forward flows with no interrupting construct; pass `=false` to send them to human review.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    auto_confirm_forward_flows: Option<bool>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write the report.
    Scan,
    /// List dependencies and their usage in the program graph.
    Deps,
    /// Retrieve and score advisories for every dependency.
    Advisories,
    /// Forward search and recursion for explicit sinks.
    Flows {
        /// Sink node id; repeat for several.
        #[arg(long = "sink", required = true)]
        sinks: Vec<String>,
    },
    /// Re-run the pipeline against recorded transcripts and require identical turns.
    ReplayVerify,
}

fn parse_review_mode(s: &str) -> Result<ReviewMode, String> {
    match s {
        "rule" => Ok(ReviewMode::Rule),
        "llm" => Ok(ReviewMode::Llm),
        _ => Err(format!("unknown review mode {s:?}, expected rule or llm")),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("cannot resolve {}", p.display()))
}

fn absolute_spec_llm(spec: LlmSpec) -> Result<LlmSpec> {
    Ok(match spec {
        LlmSpec::Script(p) => LlmSpec::Script(absolute(&p)?),
        LlmSpec::Replay(p, m) => LlmSpec::Replay(absolute(&p)?, m),
        other => other,
    })
}

/// Loads the configuration file, if any, then applies command-line
/// overrides. Override paths are relative to the working directory.
fn build_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig {
            base_dir: std::env::current_dir()?,
            ..PipelineConfig::default()
        },
    };
    if let Some(g) = &o.graph {
        cfg.graph = absolute(g)?;
    }
    if !o.manifests.is_empty() {
        cfg.manifests = o.manifests.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
    }
    if let Some(f) = &o.fixtures {
        cfg.retrieval = RetrievalSpec::Offline(absolute(f)?);
    }
    if let Some(l) = &o.llm {
        cfg.llm = absolute_spec_llm(l.clone())?;
    }
    if let Some(b) = &o.backend {
        cfg.analysis = match b {
            AnalysisSpec::Sarif(p) => AnalysisSpec::Sarif(absolute(p)?),
            other => other.clone(),
        };
    }
    if let Some(m) = o.review_mode {
        cfg.review_mode = m;
    }
    match &o.out {
        Some(p) => cfg.out = absolute(p)?,
        None => cfg.out = cfg.resolve(&cfg.out),
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    if let Some(n) = o.nf {
        cfg.nf = n;
    }
    if let Some(d) = o.max_depth {
        cfg.max_depth = d;
    }
    if let Some(t) = o.gate_threshold {
        cfg.gate.threshold = t;
    }
    if let Some(a) = o.auto_confirm_forward_flows {
        cfg.auto_confirm_forward_flows = a;
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_scan(cfg: &PipelineConfig) -> Result<u8> {
    let output = run_pipeline(cfg)?;
    write_outputs(&output, &cfg.out)?;
    let s = &output.report.summary;
    println!(
        "sinks {} flows {} (forward {}, stitched {}) confirmed {} needs-human {} refuted {} stage-errors {}",
        s.sinks_total,
        s.flows_total,
        s.forward_flows,
        s.stitched_flows,
        s.findings_by_status.confirmed,
        s.findings_by_status.needs_human,
        s.findings_by_status.refuted,
        output.report.stage_errors.len()
    );
    println!("report written to {}", cfg.out.join("report.json").display());
    Ok(output.exit_code() as u8)
}

fn cmd_deps(cfg: &PipelineConfig) -> Result<u8> {
    let graph_path = cfg.resolve(&cfg.graph);
    if graph_path.is_file() {
        let graph = load_program_graph(&graph_path)?;
        print_json(&scan_dependencies(cfg, &graph)?)?;
    } else {
        let graph = sinktrace::code_model::ProgramGraph::from_document(Default::default())?;
        let entries = scan_dependencies(cfg, &graph)?;
        print_json(&dependency_records(&entries))?;
    }
    Ok(0)
}

fn cmd_advisories(cfg: &PipelineConfig) -> Result<u8> {
    if let RetrievalSpec::Offline(dir) = &cfg.retrieval {
        if !cfg.resolve(dir).is_dir() {
            bail!("advisory fixture directory {} does not exist", cfg.resolve(dir).display());
        }
    }
    let graph = load_program_graph(cfg.resolve(&cfg.graph))?;
    let deps = scan_dependencies(cfg, &graph)?;
    let transport: Box<dyn sinktrace::advisory::Transport> = match &cfg.retrieval {
        RetrievalSpec::Offline(dir) => Box::new(sinktrace::advisory::FixtureTransport::new(cfg.resolve(dir))),
        RetrievalSpec::Live => Box::new(sinktrace::advisory::LiveTransport::new(
            cfg.live_retrieval.clone().context("live retrieval needs live_retrieval in the config")?,
        )),
    };
    let r = retrieve_advisories(cfg, &deps, transport.as_ref());
    print_json(&json!({
        "advisories": r.advisories,
        "community": r.community,
        "warnings": r.warnings,
    }))?;
    Ok(0)
}

fn cmd_flows(cfg: &PipelineConfig, sinks: &[String]) -> Result<u8> {
    let graph = load_program_graph(cfg.resolve(&cfg.graph))?;
    let sinks: Vec<NodeId> = sinks.iter().map(|s| NodeId::from(s.as_str())).collect();
    for s in &sinks {
        if graph.node(s.as_str()).is_none() {
            bail!("sink {s} is not a node of the graph");
        }
    }
    let query = FlowQuery {
        sources: SourceSelector::all(),
        sinks: sinks.clone(),
        max_length: cfg.nf,
        max_flows_per_sink: cfg.max_flows_per_sink,
        respect_visibility: true,
    };
    let forward = forward_search(&graph, &query)?;
    let rec_cfg = RecursionConfig {
        sources: SourceSelector::all(),
        max_depth: cfg.max_depth,
        max_length: cfg.nf,
        max_flows_per_sink: cfg.max_flows_per_sink,
    };
    let mut recursion = BTreeMap::new();
    for s in &sinks {
        if forward.iter().any(|f| f.sink() == Some(s)) {
            continue;
        }
        let o = recover_flows(&graph, s, &rec_cfg)?;
        recursion.insert(
            s.to_string(),
            json!({
                "surrogates": o.surrogates,
                "stitched": o.stitched.iter().map(|f| &f.combined).collect::<Vec<_>>(),
                "diagnostics": o.diagnostics.iter().map(|d| json!({"surrogate": d.surrogate, "detail": d.detail})).collect::<Vec<_>>(),
            }),
        );
    }
    print_json(&json!({ "forward": forward, "recursion": recursion }))?;
    Ok(0)
}

/// Strict replay of every recorded session; the transcripts produced must
/// equal the recorded files line for line.
fn cmd_replay_verify(cfg: &PipelineConfig) -> Result<u8> {
    let LlmSpec::Replay(configured, _) = &cfg.llm else {
        bail!("replay-verify needs a replay backend, got {}", cfg.llm);
    };
    let dir = cfg.resolve(configured);
    let mut strict = cfg.clone();
    strict.llm = LlmSpec::Replay(configured.clone(), ReplayMatching::Strict);
    let output = run_pipeline(&strict)?;
    let mut recorded = BTreeMap::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let session = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            recorded.insert(session, Transcript::load(&path)?);
        }
    }
    let mut ok = true;
    for t in &output.transcripts {
        let verdict = match recorded.remove(&t.session) {
            Some(r) if r.to_jsonl() == t.transcript.to_jsonl() => "identical",
            Some(_) => "diverged",
            None => "unrecorded",
        };
        ok &= verdict == "identical";
        println!("{verdict} {}", t.session);
    }
    for session in recorded.keys() {
        ok = false;
        println!("unused {session}");
    }
    for e in &output.report.stage_errors {
        ok = false;
        println!("stage-error {} {}: {}", e.stage, e.subject, e.message);
    }
    Ok(u8::from(!ok))
}

fn run(cli: &Cli) -> Result<u8> {
    let cfg = build_config(&cli.overrides)?;
    match &cli.command {
        Command::Scan => cmd_scan(&cfg),
        Command::Deps => cmd_deps(&cfg),
        Command::Advisories => cmd_advisories(&cfg),
        Command::Flows { sinks } => cmd_flows(&cfg, sinks),
        Command::ReplayVerify => cmd_replay_verify(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let kind = if e.downcast_ref::<PipelineError>().is_some() { "fatal" } else { "error" };
            eprintln!("sinktrace: {kind}: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
