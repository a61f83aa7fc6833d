//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use sinktrace::advisory::{credibility_for_comments, relevance_score, CommunityIssue, ScoringConfig};
use sinktrace::code_model::{validate_flow, DataFlow, ProgramGraph, TaintRole};
use sinktrace::dataflow::{forward_search, FlowQuery};
use sinktrace::recursion::{recover_flows, RecursionConfig};
use sinktrace::review::{review_rule, FinalStatus, ReviewPolicy};
use sinktrace::synth::{
    control_fixture, hidden_edge_fixture, patched_sink_new_paths_fixture, random_graph, reflective_parser_fixture,
    RandomGraphParams, SHAPES,
};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn repo(name: &str) -> PathBuf {
    root().join("fixtures/repos").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Scoring exactness.

fn issue(body: &str, comments: u64, cve_linked: bool) -> CommunityIssue {
    CommunityIssue {
        title: String::new(),
        body: body.into(),
        comment_count: comments,
        cve_linked,
        repo: "o/r".into(),
        url: "https://example.invalid/1".into(),
    }
}

fn scoring_exactness() -> Outcome {
    // Credibility in exact hundredths: 30 + min(5 N_c, 30).
    let mut worst = 0.0f64;
    for n in 0u64..=200 {
        let expected = (30 + (5 * n).min(30)) as f64 / 100.0;
        let got = credibility_for_comments(n);
        worst = worst.max((got - expected).abs());
        ensure((got - expected).abs() <= 1e-12, || format!("alpha_c({n}) = {got}, expected {expected}"))?;
        if n > 0 {
            let prev = credibility_for_comments(n - 1);
            ensure(got >= prev, || format!("alpha_c not monotone at {n}"))?;
        }
        ensure(got <= 0.6 + 1e-12, || format!("alpha_c({n}) = {got} exceeds the cap"))?;
    }
    let cfg = ScoringConfig::default();
    let table = [
        ("potential vulnerability in XML parser", false, 1.0),
        ("crash when loading file", true, 0.4),
        ("", false, 0.5),
    ];
    for (body, linked, expected) in table {
        let got = relevance_score(&issue(body, 0, linked), &cfg);
        ensure(got == expected, || format!("alpha_r({body:?}, cve_linked={linked}) = {got}, expected {expected}"))?;
    }
    Ok(format!("alpha_c over N_c 0..=200 max error {worst:e}; alpha_r 1.0/0.4/0.5 exact"))
}

// Flow-model invariants.

fn check_flows(flows: &[DataFlow], graph: &ProgramGraph, nf: usize, what: &str) -> Result<(), String> {
    for f in flows {
        let v = validate_flow(f, graph);
        ensure(v.accepted, || format!("{what}: flow {} rejected: {:?}", f.id(), v.violations))?;
        ensure(!f.triples.is_empty() && f.len() < nf, || format!("{what}: flow {} has length {}", f.id(), f.len()))?;
        for w in f.triples.windows(2) {
            ensure(w[0].to == w[1].from, || format!("{what}: flow {} is discontinuous", f.id()))?;
        }
    }
    Ok(())
}

fn sinks_of(graph: &ProgramGraph) -> Vec<sinktrace::code_model::NodeId> {
    graph.nodes_with_role(TaintRole::Sink).into_iter().map(|n| n.id.clone()).collect()
}

fn flow_model_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let params = RandomGraphParams::small();
    let mut total = 0usize;
    let graphs = 1000;
    for i in 0..graphs {
        let g = random_graph(&mut rng, &params);
        ensure(g.nodes().len() <= 50, || format!("graph {i} has {} nodes", g.nodes().len()))?;
        let nf = rng.gen_range(2..=12);
        let sinks = sinks_of(&g);
        if sinks.is_empty() {
            continue;
        }
        let q = FlowQuery::new(sinks.clone()).with_max_length(nf);
        let fwd = forward_search(&g, &q).map_err(|e| e.to_string())?;
        check_flows(&fwd, &g, nf, &format!("graph {i} forward"))?;
        let hidden = forward_search(&g, &q.clone().ignoring_visibility()).map_err(|e| e.to_string())?;
        check_flows(&hidden, &g, nf, &format!("graph {i} visibility-off"))?;
        total += fwd.len() + hidden.len();
        let cfg = RecursionConfig {
            max_length: nf,
            ..RecursionConfig::default()
        };
        for s in &sinks {
            let o = recover_flows(&g, s, &cfg).map_err(|e| e.to_string())?;
            let stitched: Vec<DataFlow> = o.stitched.into_iter().map(|s| s.combined).collect();
            check_flows(&stitched, &g, nf, &format!("graph {i} stitched"))?;
            total += stitched.len();
        }
    }
    Ok(format!("{graphs} graphs of <= 50 nodes, {total} flows validated"))
}

// Forward-engine oracle equivalence.

type Triples = Vec<(String, String, String)>;

/// Every simple path from a source to `sink` with fewer than `nf` triples,
/// over usable edges, touching no sanitizer.
fn brute_force(graph: &ProgramGraph, sink: &str, nf: usize, visible_only: bool) -> BTreeSet<Triples> {
    let doc = graph.clone().into_document();
    let role: HashMap<&str, TaintRole> = doc.nodes.iter().map(|n| (n.id.as_str(), n.taint_role)).collect();
    let mut adj: HashMap<&str, Vec<(&str, &str)>> = HashMap::new();
    for e in &doc.edges {
        if !visible_only || e.visible_to_forward {
            adj.entry(e.from.as_str()).or_default().push((e.id.as_str(), e.to.as_str()));
        }
    }
    fn dfs<'a>(
        v: &'a str,
        sink: &str,
        nf: usize,
        adj: &HashMap<&'a str, Vec<(&'a str, &'a str)>>,
        role: &HashMap<&str, TaintRole>,
        on_path: &mut BTreeSet<&'a str>,
        path: &mut Triples,
        out: &mut BTreeSet<Triples>,
    ) {
        for &(e, w) in adj.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            if on_path.contains(w) || role[w] == TaintRole::Sanitizer || path.len() + 1 >= nf {
                continue;
            }
            path.push((v.to_string(), e.to_string(), w.to_string()));
            if w == sink {
                out.insert(path.clone());
            } else {
                on_path.insert(w);
                dfs(w, sink, nf, adj, role, on_path, path, out);
                on_path.remove(w);
            }
            path.pop();
        }
    }
    let mut out = BTreeSet::new();
    if role.get(sink) == Some(&TaintRole::Sanitizer) {
        return out;
    }
    for n in &doc.nodes {
        if n.taint_role != TaintRole::Source || n.id.as_str() == sink {
            continue;
        }
        let mut on_path = BTreeSet::from([n.id.as_str()]);
        dfs(n.id.as_str(), sink, nf, &adj, &role, &mut on_path, &mut Vec::new(), &mut out);
    }
    out
}

fn as_triples(f: &DataFlow) -> Triples {
    f.triples.iter().map(|t| (t.from.to_string(), t.edge.to_string(), t.to.to_string())).collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let params = RandomGraphParams::large();
    let graphs = 200;
    let mut compared = 0usize;
    for i in 0..graphs {
        let g = random_graph(&mut rng, &params);
        ensure(g.nodes().len() <= 200 && g.edges().len() <= 600, || format!("graph {i} exceeds the size bound"))?;
        // Keep exhaustive enumeration tractable on dense graphs.
        let degree = g.edges().len() as f64 / g.nodes().len() as f64 + 1.0;
        let mut nf = rng.gen_range(2..=7);
        while nf > 2 && degree.powi(nf as i32 - 1) > 5_000.0 {
            nf -= 1;
        }
        for visible_only in [true, false] {
            for sink in sinks_of(&g) {
                let mut q = FlowQuery::new(vec![sink.clone()]).uncapped().with_max_length(nf);
                if !visible_only {
                    q = q.ignoring_visibility();
                }
                let got: BTreeSet<Triples> = forward_search(&g, &q)
                    .map_err(|e| e.to_string())?
                    .iter()
                    .map(as_triples)
                    .collect();
                let want = brute_force(&g, sink.as_str(), nf, visible_only);
                ensure(got == want, || {
                    format!(
                        "graph {i} sink {sink} nf {nf} visible_only {visible_only}: engine {} flows, oracle {}",
                        got.len(),
                        want.len()
                    )
                })?;
                compared += want.len();
            }
        }
    }
    Ok(format!("{graphs} graphs of <= 200 nodes / 600 edges, {compared} flows equal to brute force"))
}

// Re3 recovery.

fn re3_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut fixtures = vec![reflective_parser_fixture(), patched_sink_new_paths_fixture()];
    for i in 0..3 {
        for shape in SHAPES {
            fixtures.push(hidden_edge_fixture(&mut rng, shape, i));
        }
    }
    let policy = ReviewPolicy::default();
    let cfg = RecursionConfig::default();
    let mut recovered = 0usize;
    for fx in &fixtures {
        let sink = &fx.root_sink;
        let forward = forward_search(&fx.graph, &FlowQuery::new(vec![sink.clone()])).map_err(|e| e.to_string())?;
        ensure(forward.is_empty(), || format!("{}: forward search found {} flows", fx.name, forward.len()))?;
        let oracle: BTreeSet<_> = forward_search(&fx.graph, &FlowQuery::new(vec![sink.clone()]).uncapped().ignoring_visibility())
            .map_err(|e| e.to_string())?
            .iter()
            .map(|f| (f.source().cloned().unwrap(), f.sink().cloned().unwrap()))
            .collect();
        ensure(oracle == fx.planted, || format!("{}: oracle {oracle:?} differs from planted {:?}", fx.name, fx.planted))?;
        let o = recover_flows(&fx.graph, sink, &cfg).map_err(|e| e.to_string())?;
        let got: BTreeSet<_> = o
            .stitched
            .iter()
            .map(|s| (s.combined.source().cloned().unwrap(), s.root_sink.clone()))
            .collect();
        ensure(got == oracle, || format!("{}: recovered {got:?}, oracle {oracle:?}", fx.name))?;
        for s in &o.stitched {
            let v = review_rule(&s.combined, &fx.graph, &policy);
            ensure(v.final_status == FinalStatus::NeedsHuman, || {
                format!("{}: stitched flow {} reviewed as {:?}", fx.name, s.combined.id(), v.final_status)
            })?;
        }
        recovered += got.len();
    }
    let controls = 50;
    for i in 0..controls {
        let fx = control_fixture(&mut rng, i);
        let o = recover_flows(&fx.graph, &fx.root_sink, &cfg).map_err(|e| e.to_string())?;
        ensure(o.stitched.is_empty(), || format!("{}: {} false stitches", fx.name, o.stitched.len()))?;
    }
    Ok(format!(
        "{} hidden-edge fixtures, {recovered} planted flows recovered as needs-human; 0 false stitches on {controls} controls",
        fixtures.len()
    ))
}

// Pipeline checks through the binary.

struct ScanRun {
    code: i32,
    out: tempfile::TempDir,
    elapsed: Duration,
}

fn scan(repo_name: &str, extra: &[&str]) -> Result<ScanRun, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_sinktrace"))
        .arg("--config")
        .arg(repo(repo_name).join("config.json"))
        .arg("--out")
        .arg(out.path())
        .args(extra)
        .arg("scan")
        .output()
        .map_err(|e| e.to_string())?;
    let code = status.status.code().ok_or("scan killed by a signal")?;
    Ok(ScanRun {
        code,
        out,
        elapsed: start.elapsed(),
    })
}

fn read_json(p: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn manifest(repo_name: &str) -> Result<Value, String> {
    read_json(&repo(repo_name).join("manifest.json"))
}

fn end_to_end_determinism() -> Outcome {
    let mut details = Vec::new();
    for name in ["datagear_mini", "publiccms_mini"] {
        let mut bytes = Vec::new();
        let mut slowest = Duration::ZERO;
        for _ in 0..3 {
            let run = scan(name, &[])?;
            ensure(run.elapsed < Duration::from_secs(60), || format!("{name}: run took {:?}", run.elapsed))?;
            slowest = slowest.max(run.elapsed);
            bytes.push(std::fs::read(run.out.path().join("report.json")).map_err(|e| e.to_string())?);
        }
        ensure(bytes.windows(2).all(|w| w[0] == w[1]), || format!("{name}: report.json differs between runs"))?;
        let report: Value = serde_json::from_slice(&bytes[0]).map_err(|e| e.to_string())?;
        let m = manifest(name)?;
        let summary = &report["summary"];
        for (k, v) in m["summary"].as_object().unwrap() {
            ensure(&summary[k] == v, || format!("{name}: summary.{k} = {}, manifest {v}", summary[k]))?;
        }
        let mut by_origin = BTreeMap::<String, u64>::new();
        for origin in m["sinks"].as_object().unwrap().values() {
            *by_origin.entry(origin.as_str().unwrap().to_string()).or_default() += 1;
        }
        for origin in ["static_registry", "advisory_poc"] {
            let want = by_origin.get(origin).copied().unwrap_or(0);
            ensure(summary["sinks_by_origin"][origin] == want, || {
                format!("{name}: {origin} sinks {}, manifest {want}", summary["sinks_by_origin"][origin])
            })?;
        }
        details.push(format!(
            "{name}: {} advisory sink(s), {} flow(s) ({} stitched), max {:.2}s",
            summary["sinks_by_origin"]["advisory_poc"],
            summary["flows_total"],
            summary["stitched_flows"],
            slowest.as_secs_f64()
        ));
    }
    Ok(format!("3 byte-identical runs each; {}", details.join("; ")))
}

fn sum_tokens(dir: &Path) -> Result<Value, String> {
    let out = Command::new("python3")
        .arg(root().join("scripts/sum_tokens.py"))
        .arg(dir)
        .output()
        .map_err(|e| format!("python3: {e}"))?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn token_conservation() -> Outcome {
    let mut checked = Vec::new();
    for name in ["datagear_mini", "publiccms_mini", "origin_mini"] {
        let run = scan(name, &[])?;
        let report = read_json(&run.out.path().join("report.json"))?;
        let usage = &report["token_usage"];
        for k in ["prompt", "completion"] {
            let sum = usage["poc"][k].as_u64().unwrap() + usage["review"][k].as_u64().unwrap();
            ensure(usage["total"][k].as_u64() == Some(sum), || format!("{name}: total.{k} != poc.{k} + review.{k}"))?;
        }
        let emitted = sum_tokens(&run.out.path().join("transcripts"))?;
        let recorded = sum_tokens(&repo(name).join("transcripts"))?;
        for stage in ["poc", "review", "total"] {
            for k in ["prompt", "completion"] {
                let metered = &usage[stage][k];
                ensure(metered == &emitted[stage][k] && metered == &recorded[stage][k], || {
                    format!(
                        "{name}: {stage}.{k} metered {metered}, emitted transcripts {}, recorded transcripts {}",
                        emitted[stage][k], recorded[stage][k]
                    )
                })?;
            }
        }
        let total = usage["total"]["prompt"].as_u64().unwrap() + usage["total"]["completion"].as_u64().unwrap();
        checked.push(format!("{name} {total}"));
    }
    Ok(format!("metered totals equal script sums ({})", checked.join(", ")))
}

fn origin_semantics() -> Outcome {
    let mut details = Vec::new();
    for name in ["origin_mini", "datagear_mini", "publiccms_mini", "clean_mini"] {
        let run = scan(name, &[])?;
        let report = read_json(&run.out.path().join("report.json"))?;
        let m = manifest(name)?;
        let labels = m["sinks"].as_object().unwrap();
        for s in report["sinks"].as_array().unwrap() {
            let node = s["node"].as_str().unwrap();
            ensure(labels.get(node) == Some(&s["origin"]), || {
                format!("{name}: sink {node} origin {}, label {:?}", s["origin"], labels.get(node))
            })?;
        }
        ensure(report["sinks"].as_array().unwrap().len() == labels.len(), || format!("{name}: sink count differs"))?;
        let mut want_vuln = BTreeMap::<&str, u64>::new();
        let mut want_confirmed = BTreeMap::<&str, u64>::new();
        let mut expected: Vec<(String, String, String)> = Vec::new();
        for f in m["findings"].as_array().unwrap() {
            let origin = labels[f["sink"].as_str().unwrap()].as_str().unwrap();
            let status = f["status"].as_str().unwrap();
            if status != "refuted" {
                *want_vuln.entry(origin).or_default() += 1;
            }
            if status == "confirmed" {
                *want_confirmed.entry(origin).or_default() += 1;
            }
            expected.push((f["sink"].as_str().unwrap().into(), f["source"].as_str().unwrap().into(), status.into()));
        }
        let mut got: Vec<(String, String, String)> = report["findings"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| {
                (
                    f["sink"].as_str().unwrap().into(),
                    f["flow"]["triples"][0]["from"].as_str().unwrap().into(),
                    f["verdict"]["final_status"].as_str().unwrap().into(),
                )
            })
            .collect();
        expected.sort();
        got.sort();
        ensure(got == expected, || format!("{name}: findings {got:?}, manifest {expected:?}"))?;
        let summary = &report["summary"];
        for origin in ["static_registry", "advisory_poc"] {
            let v = want_vuln.get(origin).copied().unwrap_or(0);
            let c = want_confirmed.get(origin).copied().unwrap_or(0);
            ensure(summary["vulnerabilities_by_origin"][origin] == v, || {
                format!("{name}: {origin} vulnerabilities {}, labels give {v}", summary["vulnerabilities_by_origin"][origin])
            })?;
            ensure(summary["confirmed_by_origin"][origin] == c, || {
                format!("{name}: {origin} confirmed {}, labels give {c}", summary["confirmed_by_origin"][origin])
            })?;
        }
        details.push(format!(
            "{name} {}/{}",
            summary["vulnerabilities_by_origin"]["static_registry"], summary["vulnerabilities_by_origin"]["advisory_poc"]
        ));
    }
    Ok(format!("static/advisory vulnerability split matches labels: {}", details.join(", ")))
}

fn exit_codes() -> Outcome {
    let clean = scan("clean_mini", &[])?;
    let confirmed = scan("datagear_mini", &[])?;
    let missing = scan("clean_mini", &["--graph", "/nonexistent/program.graph.json"])?;
    let got = (clean.code, confirmed.code, missing.code);
    ensure(got == (0, 1, 2), || format!("exit codes {got:?}, expected (0, 1, 2)"))?;
    ensure(!missing.out.path().join("report.json").exists(), || "fatal run wrote a report".into())?;
    Ok("clean repo 0, confirmed finding 1, missing graph 2".into())
}

fn main() {
    let criteria = [
        Criterion { name: "scoring-exactness", limit: Some(Duration::from_secs(1)), check: scoring_exactness },
        Criterion { name: "flow-model-invariants", limit: Some(Duration::from_secs(30)), check: flow_model_invariants },
        Criterion { name: "forward-oracle-equivalence", limit: Some(Duration::from_secs(300)), check: oracle_equivalence },
        Criterion { name: "re3-recovery", limit: None, check: re3_recovery },
        Criterion { name: "end-to-end-determinism", limit: None, check: end_to_end_determinism },
        Criterion { name: "token-conservation", limit: None, check: token_conservation },
        Criterion { name: "origin-partition", limit: None, check: origin_semantics },
        Criterion { name: "exit-code-contract", limit: None, check: exit_codes },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("{tag} {:<27} {detail} [{:.2}s]", c.name, elapsed.as_secs_f64());
        failed += usize::from(result.is_err());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
