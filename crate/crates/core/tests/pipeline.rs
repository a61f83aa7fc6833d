use std::path::{Path, PathBuf};

use sinktrace::advisory::{
    quality_breakdown, quality_score, query_authoritative, CommunityIssue, FixtureTransport, ScoringConfig,
};
use sinktrace::code_model::{load_program_graph, FlowOrigin};
use sinktrace::dataflow::{import_sarif, SkipReason};
use sinktrace::dependency_scan::{parse_manifest, DependencyRecord, DependencyScope, Ecosystem};
use sinktrace::pipeline::{
    export_report, render_markdown, run_pipeline, write_outputs, PipelineConfig, PipelineOutput, VulnerabilityReport,
};
use sinktrace::review::FinalStatus;
use sinktrace::sinks::SinkOrigin;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn config(repo: &str) -> PipelineConfig {
    PipelineConfig::load(fixtures().join("repos").join(repo).join("config.json")).unwrap()
}

fn run(repo: &str) -> PipelineOutput {
    run_pipeline(&config(repo)).unwrap()
}

#[test]
fn patched_sink_reached_by_two_new_paths() {
    let out = run("datagear_mini");
    let r = &out.report;
    assert_eq!(r.sinks.len(), 1);
    assert_eq!(r.sinks[0].origin, SinkOrigin::AdvisoryPoc);
    assert_eq!(r.sinks[0].advisories, vec!["CVE-2024-37759".to_string()]);
    assert_eq!(r.findings.len(), 2);
    let sources: Vec<_> = r.findings.iter().map(|f| f.flow.source().unwrap().as_str()).collect();
    assert_eq!(sources, vec!["a_param", "b_param"]);
    assert!(r.findings.iter().all(|f| f.verdict.final_status == FinalStatus::Confirmed));
    assert!(r.findings.iter().all(|f| f.pocs == vec!["poc_cve_2024_37759".to_string()]));
    assert!(r.stage_errors.is_empty() && r.warnings.is_empty());
    assert_eq!(out.exit_code(), 1);
}

#[test]
fn reflective_dispatch_recovered_by_recursion() {
    let out = run("publiccms_mini");
    let r = &out.report;
    assert_eq!(r.summary.forward_flows, 0);
    assert_eq!(r.findings.len(), 1);
    let f = &r.findings[0];
    assert_eq!(f.flow.origin, FlowOrigin::Stitched);
    assert_eq!(f.sink.as_str(), "p_sink");
    assert_eq!(f.surrogate.as_ref().unwrap().as_str(), "u_call");
    assert_eq!(f.verdict.final_status, FinalStatus::NeedsHuman);
    let surrogate_labels: Vec<_> = r.surrogates.iter().map(|s| s.callable_name.as_str()).collect();
    assert!(surrogate_labels.iter().all(|l| l.ends_with("DocToHtmlUtils.excelToHtml")));
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn summary_counts_equal_collection_lengths() {
    for repo in ["datagear_mini", "publiccms_mini", "origin_mini", "clean_mini"] {
        let r = run(repo).report;
        let s = &r.summary;
        assert_eq!(s.dependencies, r.dependencies.len(), "{repo}");
        assert_eq!(s.advisories, r.advisories.len(), "{repo}");
        assert_eq!(s.pocs, r.pocs.len(), "{repo}");
        assert_eq!(s.sinks_total, r.sinks.len(), "{repo}");
        assert_eq!(s.surrogates, r.surrogates.len(), "{repo}");
        assert_eq!(s.flows_total, r.findings.len(), "{repo}");
        assert_eq!(s.forward_flows + s.stitched_flows, s.flows_total, "{repo}");
        let o = s.sinks_by_origin;
        assert_eq!(o.static_registry + o.advisory_poc + o.surrogate, s.sinks_total, "{repo}");
        let st = s.findings_by_status;
        assert_eq!(st.confirmed + st.refuted + st.needs_human, s.flows_total, "{repo}");
        let v = s.vulnerabilities_by_origin;
        assert_eq!(v.static_registry + v.advisory_poc + v.surrogate, s.vulnerabilities, "{repo}");
    }
}

#[test]
fn clean_repo_has_all_zero_summary() {
    let out = run("clean_mini");
    assert_eq!(out.report.summary, Default::default());
    assert!(out.transcripts.is_empty());
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn report_json_round_trips_and_export_is_byte_stable() {
    let out = run("origin_mini");
    let json = out.report.to_json();
    assert_eq!(VulnerabilityReport::from_json(&json).unwrap(), out.report);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export_report(&out.report, a.path()).unwrap();
    export_report(&out.report, b.path()).unwrap();
    for f in ["report.json", "report.md", "pocs/poc_cve_2022_42889.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn markdown_has_one_section_per_finding_in_sink_order() {
    let r = run("origin_mini").report;
    let md = render_markdown(&r);
    let headings: Vec<&str> = md.lines().filter(|l| l.starts_with("### Finding ")).collect();
    assert_eq!(headings.len(), 3);
    let labels: Vec<&str> = ["java.sql.Statement.executeQuery", "org.apache.commons.text.StringSubstitutor.replace", "java.lang.Runtime.exec"].to_vec();
    for (h, l) in headings.iter().zip(labels) {
        assert!(h.contains(l), "{h}");
    }
    let sinks: Vec<_> = r.findings.iter().map(|f| f.sink.as_str()).collect();
    assert_eq!(sinks, vec!["q_sink", "r_sink", "x_sink"]);
}

#[test]
fn markdown_hop_rows_match_flow_lengths() {
    let r = run("datagear_mini").report;
    let md = render_markdown(&r);
    let sections: Vec<&str> = md.split("### Finding ").skip(1).collect();
    assert_eq!(sections.len(), r.findings.len());
    for (section, f) in sections.iter().zip(&r.findings) {
        let rows = section
            .lines()
            .filter(|l| l.starts_with("| ") && l.split('|').nth(1).is_some_and(|c| c.trim().parse::<usize>().is_ok()))
            .count();
        assert_eq!(rows, f.flow.triples.len(), "{}", f.id);
    }
}

#[test]
fn outputs_include_every_transcript() {
    let out = run("datagear_mini");
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("transcripts"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let sessions: Vec<String> = out.transcripts.iter().map(|t| format!("{}.jsonl", t.session)).collect();
    assert_eq!(names, sessions);
}

#[test]
fn config_digest_ignores_output_directory() {
    let mut a = config("origin_mini");
    a.out = "/tmp/one".into();
    let mut b = config("origin_mini");
    b.out = "/tmp/two".into();
    assert_eq!(run_pipeline(&a).unwrap().report.to_json(), run_pipeline(&b).unwrap().report.to_json());
}

#[test]
fn forward_flows_wait_for_a_human_when_auto_confirm_is_off() {
    let mut cfg = config("origin_mini");
    cfg.auto_confirm_forward_flows = false;
    let r = run_pipeline(&cfg).unwrap().report;
    let statuses: Vec<_> = r.findings.iter().map(|f| f.verdict.final_status).collect();
    assert_eq!(statuses, vec![FinalStatus::Refuted, FinalStatus::NeedsHuman, FinalStatus::NeedsHuman]);
    assert!(!r.has_confirmed());
}

#[test]
fn malformed_advisory_feed_is_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("repos/origin_mini");
    for f in ["program.graph.json", "pom.xml"] {
        std::fs::copy(src.join(f), tmp.path().join(f)).unwrap();
    }
    std::fs::create_dir(tmp.path().join("advisories")).unwrap();
    std::fs::write(tmp.path().join("advisories/nvd__org.apache.commons__commons-text.json"), "{ not json").unwrap();
    std::fs::write(
        tmp.path().join("config.json"),
        r#"{"manifests": ["pom.xml"], "retrieval": "offline:advisories", "llm": "stub"}"#,
    )
    .unwrap();
    let r = run_pipeline(&PipelineConfig::load(tmp.path().join("config.json")).unwrap()).unwrap().report;
    assert!(r.warnings.iter().any(|w| w.contains("nvd")), "{:?}", r.warnings);
    assert_eq!(r.summary.sinks_by_origin.static_registry, 2);
}

#[test]
fn missing_graph_is_fatal() {
    let mut cfg = config("clean_mini");
    cfg.graph = "missing.graph.json".into();
    assert!(run_pipeline(&cfg).is_err());
}

#[test]
fn poi_fixture_yields_the_xxe_cve() {
    let dep = DependencyRecord {
        ecosystem: Ecosystem::Maven,
        name: "org.apache.poi:poi-ooxml".into(),
        version: "5.2.3".into(),
        scope: DependencyScope::Compile,
        manifest_path: "pom.xml".into(),
    };
    let t = FixtureTransport::new(fixtures().join("repos/publiccms_mini/advisories"));
    let got = query_authoritative(&dep, &t);
    assert!(got.warnings.is_empty());
    assert_eq!(got.items.len(), 1);
    assert_eq!(got.items[0].cve_id.as_deref(), Some("CVE-2025-31672"));
    let missing = DependencyRecord { name: "org.example:absent".into(), ..dep };
    assert!(query_authoritative(&missing, &t).items.is_empty());
}

#[test]
fn prose_issue_scores_length_and_impact_only() {
    let text = std::fs::read_to_string(fixtures().join("issues/issue_prose.json")).unwrap();
    let issue: CommunityIssue = serde_json::from_str(&text).unwrap();
    assert!(issue.body.len() >= 500 && !issue.body.contains("```"));
    let cfg = ScoringConfig::default();
    let b = quality_breakdown(&issue, &cfg);
    assert_eq!((b.len_bucket, b.depth, b.impact, b.code_example, b.solution), (1.0, 0.0, 1.0, 0.0, 0.0));
    assert!((quality_score(&issue, &cfg) - 0.4).abs() < 1e-12);
}

#[test]
fn pom_properties_resolve() {
    let deps = parse_manifest(fixtures().join("repos/datagear_mini/pom.xml")).unwrap();
    let names: Vec<_> = deps.iter().map(|d| (d.name.as_str(), d.version.as_str(), d.scope)).collect();
    assert_eq!(
        names,
        vec![
            ("org.datagear:datagear-management", "4.6.0", DependencyScope::Compile),
            ("junit:junit", "4.13.2", DependencyScope::Test),
        ]
    );
}

#[test]
fn sarif_fixture_binds_through_anchors() {
    let repo = fixtures().join("repos/origin_mini");
    let g = load_program_graph(repo.join("program.graph.json")).unwrap();
    let import = import_sarif(repo.join("external.sarif"), &g, 64).unwrap();
    assert_eq!(import.flows.len(), 1);
    assert_eq!(import.flows[0].len(), 2);
    assert_eq!(import.flows[0].sink().unwrap().as_str(), "x_sink");
    assert_eq!(import.diagnostics.len(), 1);
    assert!(matches!(import.diagnostics[0].skip, SkipReason::UnanchoredRegion { line: 99, .. }));
}
