//! Synthetic program graphs for property tests and recovery benchmarks.
//!
//! `random_graph` produces unstructured graphs for engine invariants.
//! `hidden_edge_fixture` builds call chains where every source-to-sink path
//! crosses at least one call-pass edge invisible to forward search, and
//! `control_fixture` builds the same shapes with every chain broken so no
//! source reaches the sink even with visibility ignored.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::code_model::{
    AccessPathEdge, CallEdge, ContentNode, EdgeKind, FunctionDecl, GraphDocument, GraphError,
    NodeId, NodeKind, ProgramGraph, TaintRole, FORMAT_VERSION,
};

/// Incremental graph document construction.
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    doc: GraphDocument,
    next_edge: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            doc: GraphDocument {
                format_version: FORMAT_VERSION.to_string(),
                ..Default::default()
            },
            next_edge: 0,
        }
    }

    pub fn function(&mut self, id: &str, name: &str, entry: bool) -> &mut Self {
        self.doc.functions.push(FunctionDecl {
            id: id.into(),
            name: name.into(),
            parameters: Vec::new(),
            return_node: None,
            is_entry_point: entry,
        });
        self
    }

    pub fn node(&mut self, id: &str, kind: NodeKind, function: &str, label: &str, role: TaintRole) -> &mut Self {
        let (source_kind, sink_kind) = match role {
            TaintRole::Source => (Some("http-param".to_string()), None),
            TaintRole::Sink => (None, Some("xml-parse".to_string())),
            _ => (None, None),
        };
        self.doc.nodes.push(ContentNode {
            id: id.into(),
            kind,
            function_id: Some(function.into()),
            label: label.into(),
            taint_role: role,
            source_kind,
            sink_kind,
        });
        if kind == NodeKind::Parameter {
            if let Some(f) = self.doc.functions.iter_mut().find(|f| f.id.as_str() == function) {
                f.parameters.push(id.into());
            }
        }
        self
    }

    /// Adds an edge with a generated id (`e0001`, `e0002`, ...).
    pub fn edge(&mut self, from: &str, to: &str, kind: EdgeKind, visible: bool) -> &mut Self {
        self.next_edge += 1;
        let id = format!("e{:04}", self.next_edge);
        self.edge_with_id(&id, from, to, kind, visible, &[])
    }

    pub fn edge_with_id(
        &mut self,
        id: &str,
        from: &str,
        to: &str,
        kind: EdgeKind,
        visible: bool,
        tags: &[&str],
    ) -> &mut Self {
        self.doc.edges.push(AccessPathEdge {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            kind,
            visible_to_forward: visible,
            guard_tags: tags.iter().map(|t| t.to_string()).collect(),
        });
        self
    }

    pub fn call(&mut self, caller: &str, callee: &str, site: &str) -> &mut Self {
        self.doc.call_edges.push(CallEdge {
            caller: caller.into(),
            callee: callee.into(),
            call_site_node: site.into(),
        });
        self
    }

    pub fn document(&self) -> &GraphDocument {
        &self.doc
    }

    pub fn build(&self) -> Result<ProgramGraph, GraphError> {
        ProgramGraph::from_document(self.doc.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGraphParams {
    pub max_nodes: usize,
    pub max_edges: usize,
    pub max_functions: usize,
    pub hidden_ratio: f64,
    pub source_ratio: f64,
    pub sink_ratio: f64,
    pub sanitizer_ratio: f64,
}

impl RandomGraphParams {
    pub fn small() -> Self {
        RandomGraphParams {
            max_nodes: 50,
            max_edges: 150,
            max_functions: 5,
            hidden_ratio: 0.2,
            source_ratio: 0.1,
            sink_ratio: 0.1,
            sanitizer_ratio: 0.05,
        }
    }

    pub fn large() -> Self {
        RandomGraphParams {
            max_nodes: 200,
            max_edges: 600,
            max_functions: 12,
            ..Self::small()
        }
    }
}

const KINDS: [NodeKind; 6] = [
    NodeKind::Variable,
    NodeKind::Parameter,
    NodeKind::Field,
    NodeKind::CollectionElement,
    NodeKind::CallArgument,
    NodeKind::CallReturn,
];

const EDGE_KINDS: [EdgeKind; 7] = [
    EdgeKind::Assign,
    EdgeKind::CallPass,
    EdgeKind::Return,
    EdgeKind::FieldWrite,
    EdgeKind::FieldRead,
    EdgeKind::CollectionPut,
    EdgeKind::CollectionGet,
];

const TAGS: [&str; 5] = ["validated", "guarded", "caught", "encoded", "sanitized"];

/// Unstructured graph with random roles, visibility, guard tags, parallel
/// edges, assign self-loops and call edges.
pub fn random_graph<R: Rng>(rng: &mut R, params: &RandomGraphParams) -> ProgramGraph {
    let n = rng.gen_range(2..=params.max_nodes.max(2));
    let m = rng.gen_range(1..=params.max_edges.max(1));
    let nf = rng.gen_range(1..=params.max_functions.max(1));
    let mut b = GraphBuilder::new();
    for f in 0..nf {
        b.function(&format!("f{f}"), &format!("pkg.Type{f}.method"), rng.gen_bool(0.3));
    }
    let mut sites: Vec<Vec<String>> = vec![Vec::new(); nf];
    for i in 0..n {
        let kind = *KINDS.choose(rng).expect("non-empty");
        let f = rng.gen_range(0..nf);
        let x: f64 = rng.gen();
        let role = if x < params.source_ratio {
            TaintRole::Source
        } else if x < params.source_ratio + params.sink_ratio {
            TaintRole::Sink
        } else if x < params.source_ratio + params.sink_ratio + params.sanitizer_ratio {
            TaintRole::Sanitizer
        } else {
            TaintRole::None
        };
        let id = format!("n{i:03}");
        b.node(&id, kind, &format!("f{f}"), &format!("pkg.Type{f}.v{i}"), role);
        if matches!(kind, NodeKind::CallArgument | NodeKind::CallReturn) {
            sites[f].push(id);
        }
    }
    for j in 0..m {
        let from = rng.gen_range(0..n);
        let to = if rng.gen_bool(0.05) { from } else { rng.gen_range(0..n) };
        let kind = if from == to {
            EdgeKind::Assign
        } else {
            *EDGE_KINDS.choose(rng).expect("non-empty")
        };
        let tags: Vec<&str> = if rng.gen_bool(0.15) {
            vec![*TAGS.choose(rng).expect("non-empty")]
        } else {
            Vec::new()
        };
        b.edge_with_id(
            &format!("e{j:04}"),
            &format!("n{from:03}"),
            &format!("n{to:03}"),
            kind,
            !rng.gen_bool(params.hidden_ratio),
            &tags,
        );
    }
    for (caller, callable) in sites.iter().enumerate() {
        for site in callable {
            if rng.gen_bool(0.5) {
                let callee = rng.gen_range(0..nf);
                b.call(&format!("f{caller}"), &format!("f{callee}"), site);
            }
        }
    }
    b.build().expect("generated graph is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureShape {
    /// One entry function, a chain of callees, one hidden call boundary or more.
    Chain,
    /// Several entry functions with sources calling into a shared chain.
    MultiSource,
    /// An older caller reaches the sink only through a sanitizer; newer
    /// callers bypass it through a hidden call boundary.
    FixedCveNewPath,
    /// Extra callers without taint reaching their call sites.
    DecoyCallers,
}

pub const SHAPES: [FixtureShape; 4] = [
    FixtureShape::Chain,
    FixtureShape::MultiSource,
    FixtureShape::FixedCveNewPath,
    FixtureShape::DecoyCallers,
];

#[derive(Debug, Clone)]
pub struct HiddenEdgeFixture {
    pub name: String,
    pub graph: ProgramGraph,
    pub root_sink: NodeId,
    /// Planted (source, sink) pairs; empty for controls.
    pub planted: BTreeSet<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Break {
    None,
    Sanitizer,
    MissingLink,
    NoSource,
}

struct ChainGen<'r, R: Rng> {
    rng: &'r mut R,
    b: GraphBuilder,
    counter: usize,
}

impl<R: Rng> ChainGen<'_, R> {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{:03}", self.counter)
    }

    /// Intraprocedural segment `from → … → to` through 0-3 fresh variables,
    /// with optional dead-end side branches. A non-`None` break sanitizes or
    /// drops one link of the segment.
    fn segment(&mut self, function: &str, from: &str, to: &str, brk: Break) {
        let hops = self.rng.gen_range(0..=3);
        let mut prev = from.to_string();
        let broken_at = if brk == Break::None { usize::MAX } else { self.rng.gen_range(0..=hops) };
        for h in 0..=hops {
            let next = if h == hops {
                to.to_string()
            } else {
                let v = self.fresh("v");
                self.b.node(&v, NodeKind::Variable, function, &format!("tmp{}", self.counter), TaintRole::None);
                if self.rng.gen_bool(0.3) {
                    let d = self.fresh("d");
                    self.b.node(&d, NodeKind::Variable, function, "unused", TaintRole::None);
                    self.b.edge(&v, &d, EdgeKind::Assign, true);
                }
                v
            };
            if h == broken_at {
                match brk {
                    Break::Sanitizer => {
                        let s = self.fresh("z");
                        self.b.node(&s, NodeKind::Variable, function, "Encoder.escape", TaintRole::Sanitizer);
                        self.b.edge(&prev, &s, EdgeKind::Assign, true);
                        self.b.edge(&s, &next, EdgeKind::Assign, true);
                    }
                    // Link dropped: `prev` and `next` are left disconnected.
                    _ => {}
                }
            } else {
                let kind = *[EdgeKind::Assign, EdgeKind::FieldWrite, EdgeKind::CollectionPut]
                    .choose(self.rng)
                    .expect("non-empty");
                self.b.edge(&prev, &next, kind, true);
            }
            prev = next;
        }
    }
}

fn chain_fixture<R: Rng>(rng: &mut R, shape: FixtureShape, brk: Break, name: String) -> HiddenEdgeFixture {
    let depth = rng.gen_range(2..=5usize);
    let entries = match shape {
        FixtureShape::MultiSource => rng.gen_range(2..=3usize),
        _ => 1,
    };
    let mut g = ChainGen {
        rng,
        b: GraphBuilder::new(),
        counter: 0,
    };
    // Callee levels F1..Fdepth; level `depth` holds the sink.
    let hidden_level = g.rng.gen_range(1..=depth);
    // Level whose intraprocedural segment a control breaks (shared by all entries).
    let break_level = match shape {
        FixtureShape::FixedCveNewPath => depth,
        _ => g.rng.gen_range(1..=depth),
    };
    for lvl in 1..=depth {
        let f = format!("F{lvl}");
        g.b.function(&f, &format!("com.acme.Level{lvl}.handle"), false);
        g.b.node(&format!("p{lvl}"), NodeKind::Parameter, &f, "input", TaintRole::None);
    }
    let sink = "sink".to_string();
    g.b.node(
        &sink,
        NodeKind::CallArgument,
        &format!("F{depth}"),
        "javax.xml.parsers.DocumentBuilderFactory.newInstance",
        TaintRole::Sink,
    );
    for lvl in 1..=depth {
        let f = format!("F{lvl}");
        let from = format!("p{lvl}");
        let to = if lvl == depth {
            sink.clone()
        } else {
            let site = format!("s{lvl}");
            g.b.node(
                &site,
                NodeKind::CallArgument,
                &f,
                &format!("com.acme.Level{}.handle", lvl + 1),
                TaintRole::None,
            );
            site
        };
        let seg_break = if lvl == break_level && matches!(brk, Break::Sanitizer | Break::MissingLink) {
            brk
        } else {
            Break::None
        };
        g.segment(&f, &from, &to, seg_break);
        if lvl < depth {
            let visible = lvl + 1 != hidden_level && g.rng.gen_bool(0.7);
            g.b.edge(&to, &format!("p{}", lvl + 1), EdgeKind::CallPass, visible);
            g.b.call(&f, &format!("F{}", lvl + 1), &to);
        }
    }
    let mut planted = BTreeSet::new();
    let mut add_entry = |g: &mut ChainGen<R>, idx: usize, target_lvl: usize, visible: bool, sanitized: bool| {
        let f = format!("E{idx}");
        g.b.function(&f, &format!("com.acme.web.Controller{idx}.upload"), true);
        let src = format!("src{idx}");
        let role = if brk == Break::NoSource { TaintRole::None } else { TaintRole::Source };
        g.b.node(&src, NodeKind::Parameter, &f, "file", role);
        let site = format!("es{idx}");
        g.b.node(
            &site,
            NodeKind::CallArgument,
            &f,
            &format!("com.acme.Level{target_lvl}.handle"),
            TaintRole::None,
        );
        let seg_break = if sanitized { Break::Sanitizer } else { Break::None };
        g.segment(&f, &src, &site, seg_break);
        g.b.edge(&site, &format!("p{target_lvl}"), EdgeKind::CallPass, visible);
        g.b.call(&f, &format!("F{target_lvl}"), &site);
        if role == TaintRole::Source && !sanitized && brk == Break::None {
            planted.insert((NodeId::from(src), NodeId::from(sink.clone())));
        }
    };
    // Level-1 entries; the F1 boundary is hidden when `hidden_level` is 1.
    for idx in 0..entries {
        add_entry(&mut g, idx, 1, hidden_level != 1, false);
    }
    match shape {
        FixtureShape::FixedCveNewPath => {
            // Old caller straight into the sink's function, sanitized after the fix.
            add_entry(&mut g, entries, depth, true, true);
            // New path bypassing the fixed caller through a hidden boundary.
            add_entry(&mut g, entries + 1, depth, false, false);
        }
        FixtureShape::DecoyCallers => {
            for k in 0..g.rng.gen_range(1..=3usize) {
                let f = format!("D{k}");
                let lvl = g.rng.gen_range(1..=depth);
                g.b.function(&f, &format!("com.acme.web.Preview{k}.render"), true);
                let c = format!("dc{k}");
                g.b.node(&c, NodeKind::Variable, &f, "\"template\"", TaintRole::None);
                let site = format!("ds{k}");
                g.b.node(&site, NodeKind::CallArgument, &f, &format!("com.acme.Level{lvl}.handle"), TaintRole::None);
                g.b.edge(&c, &site, EdgeKind::Assign, true);
                // A source that never reaches the call site.
                let s = format!("dsrc{k}");
                g.b.node(&s, NodeKind::Parameter, &f, "query", TaintRole::Source);
                let dead = format!("dd{k}");
                g.b.node(&dead, NodeKind::Variable, &f, "logLine", TaintRole::None);
                g.b.edge(&s, &dead, EdgeKind::Assign, true);
                let visible = g.rng.gen_bool(0.5);
                g.b.edge(&site, &format!("p{lvl}"), EdgeKind::CallPass, visible);
                g.b.call(&f, &format!("F{lvl}"), &site);
            }
        }
        _ => {}
    }
    let graph = g.b.build().expect("fixture graph is well formed");
    HiddenEdgeFixture {
        name,
        graph,
        root_sink: NodeId::from(sink),
        planted,
    }
}

/// A fixture with planted flows that forward search cannot see.
pub fn hidden_edge_fixture<R: Rng>(rng: &mut R, shape: FixtureShape, index: usize) -> HiddenEdgeFixture {
    chain_fixture(rng, shape, Break::None, format!("{shape:?}-{index}").to_lowercase())
}

/// Same shapes with the shared chain broken (sanitizer, dropped link) or no
/// source at all. Every call-pass edge stays in place.
pub fn control_fixture<R: Rng>(rng: &mut R, index: usize) -> HiddenEdgeFixture {
    let shape = *SHAPES.choose(rng).expect("non-empty");
    let brk = *[Break::Sanitizer, Break::MissingLink, Break::NoSource]
        .choose(rng)
        .expect("non-empty");
    let mut f = chain_fixture(rng, shape, brk, format!("control-{index}"));
    if brk == Break::NoSource {
        // Decoy callers carry their own (unconnected) sources; strip them too.
        let mut doc = f.graph.into_document();
        for n in &mut doc.nodes {
            if n.taint_role == TaintRole::Source {
                n.taint_role = TaintRole::None;
                n.source_kind = None;
            }
        }
        f.graph = ProgramGraph::from_document(doc).expect("still well formed");
    }
    f.planted.clear();
    f
}

/// The reflective upload-to-XML-parser chain: a workbook upload reaches a
/// conversion utility, which hands the stream to a sheet parser through a
/// reflective call forward analysis cannot follow.
pub fn reflective_parser_fixture() -> HiddenEdgeFixture {
    let mut b = GraphBuilder::new();
    b.function("upload", "com.publiccms.controller.admin.sys.CmsFileAdminController.upload", true)
        .function("preview", "com.publiccms.controller.admin.cms.CmsTemplateController.preview", true)
        .function("excelToHtml", "com.publiccms.common.tools.DocToHtmlUtils.excelToHtml", false)
        .function("parseSheet", "com.publiccms.common.tools.XmlSheetParser.parseSheet", false);
    b.node("u_file", NodeKind::Parameter, "upload", "file", TaintRole::Source)
        .node("u_stream", NodeKind::Variable, "upload", "inputStream", TaintRole::None)
        .node("u_call", NodeKind::CallArgument, "upload", "com.publiccms.common.tools.DocToHtmlUtils.excelToHtml", TaintRole::None)
        .node("v_tpl", NodeKind::Variable, "preview", "templatePath", TaintRole::None)
        .node("v_call", NodeKind::CallArgument, "preview", "com.publiccms.common.tools.DocToHtmlUtils.excelToHtml", TaintRole::None)
        .node("x_in", NodeKind::Parameter, "excelToHtml", "input", TaintRole::None)
        .node("x_pkg", NodeKind::Variable, "excelToHtml", "OPCPackage.open", TaintRole::None)
        .node("x_call", NodeKind::CallArgument, "excelToHtml", "com.publiccms.common.tools.XmlSheetParser.parseSheet", TaintRole::None)
        .node("p_in", NodeKind::Parameter, "parseSheet", "sheetStream", TaintRole::None)
        .node("p_sink", NodeKind::CallArgument, "parseSheet", "DocumentBuilderFactory.newInstance", TaintRole::Sink);
    b.edge("u_file", "u_stream", EdgeKind::Assign, true)
        .edge("u_stream", "u_call", EdgeKind::Assign, true)
        .edge("u_call", "x_in", EdgeKind::CallPass, true)
        .edge("v_tpl", "v_call", EdgeKind::Assign, true)
        .edge("v_call", "x_in", EdgeKind::CallPass, true)
        .edge("x_in", "x_pkg", EdgeKind::Assign, true)
        .edge("x_pkg", "x_call", EdgeKind::Assign, true)
        .edge("x_call", "p_in", EdgeKind::CallPass, false)
        .edge("p_in", "p_sink", EdgeKind::Assign, true);
    b.call("upload", "excelToHtml", "u_call")
        .call("preview", "excelToHtml", "v_call")
        .call("excelToHtml", "parseSheet", "x_call");
    HiddenEdgeFixture {
        name: "reflective-parser".into(),
        graph: b.build().expect("fixture graph is well formed"),
        root_sink: "p_sink".into(),
        planted: BTreeSet::from([(NodeId::from("u_file"), NodeId::from("p_sink"))]),
    }
}

/// A patched expression evaluator: the original controller sanitizes
/// before calling it, two newer controllers reach it through a hidden
/// dispatch and skip the sanitizer.
pub fn patched_sink_new_paths_fixture() -> HiddenEdgeFixture {
    let mut b = GraphBuilder::new();
    let eval = "org.datagear.management.util.ConversionSqlParamValueMapper.evaluateVariableExpression";
    b.function("old", "org.datagear.web.controller.DataSetController.preview", true)
        .function("newA", "org.datagear.web.controller.DashboardController.showData", true)
        .function("newB", "org.datagear.web.controller.ChartController.chartData", true)
        .function("mapper", "org.datagear.management.util.ConversionSqlParamValueMapper.map", false);
    b.node("o_param", NodeKind::Parameter, "old", "paramValues", TaintRole::Source)
        .node("o_clean", NodeKind::Variable, "old", "SqlParamValueEscaper.escape", TaintRole::Sanitizer)
        .node("o_call", NodeKind::CallArgument, "old", "ConversionSqlParamValueMapper.map", TaintRole::None)
        .node("a_param", NodeKind::Parameter, "newA", "dashboardParams", TaintRole::Source)
        .node("a_call", NodeKind::CallArgument, "newA", "ConversionSqlParamValueMapper.map", TaintRole::None)
        .node("b_param", NodeKind::Parameter, "newB", "chartParams", TaintRole::Source)
        .node("b_map", NodeKind::CollectionElement, "newB", "paramMap[value]", TaintRole::None)
        .node("b_call", NodeKind::CallArgument, "newB", "ConversionSqlParamValueMapper.map", TaintRole::None)
        .node("m_in", NodeKind::Parameter, "mapper", "value", TaintRole::None)
        .node("m_expr", NodeKind::Variable, "mapper", "expression", TaintRole::None)
        .node("m_sink", NodeKind::CallArgument, "mapper", eval, TaintRole::Sink);
    b.edge("o_param", "o_clean", EdgeKind::Assign, true)
        .edge("o_clean", "o_call", EdgeKind::Assign, true)
        .edge("o_call", "m_in", EdgeKind::CallPass, true)
        .edge("a_param", "a_call", EdgeKind::Assign, true)
        .edge("a_call", "m_in", EdgeKind::CallPass, false)
        .edge("b_param", "b_map", EdgeKind::CollectionPut, true)
        .edge("b_map", "b_call", EdgeKind::CollectionGet, true)
        .edge("b_call", "m_in", EdgeKind::CallPass, false)
        .edge("m_in", "m_expr", EdgeKind::Assign, true)
        .edge("m_expr", "m_sink", EdgeKind::Assign, true);
    b.call("old", "mapper", "o_call")
        .call("newA", "mapper", "a_call")
        .call("newB", "mapper", "b_call");
    HiddenEdgeFixture {
        name: "patched-sink-new-paths".into(),
        graph: b.build().expect("fixture graph is well formed"),
        root_sink: "m_sink".into(),
        planted: BTreeSet::from([
            (NodeId::from("a_param"), NodeId::from("m_sink")),
            (NodeId::from("b_param"), NodeId::from("m_sink")),
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{forward_search, FlowQuery};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs(graph: &ProgramGraph, sink: &NodeId, respect: bool) -> BTreeSet<(NodeId, NodeId)> {
        let mut q = FlowQuery::new(vec![sink.clone()]).uncapped();
        q.respect_visibility = respect;
        forward_search(graph, &q)
            .unwrap()
            .iter()
            .map(|f| (f.source().unwrap().clone(), f.sink().unwrap().clone()))
            .collect()
    }

    #[test]
    fn random_graphs_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = random_graph(&mut rng, &RandomGraphParams::large());
            assert!(g.nodes().len() <= 200);
            assert!(g.edges().len() <= 600);
        }
    }

    #[test]
    fn planted_flows_are_hidden_and_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fixtures: Vec<_> = (0..20)
            .map(|i| hidden_edge_fixture(&mut rng, SHAPES[i % SHAPES.len()], i))
            .collect();
        fixtures.push(reflective_parser_fixture());
        fixtures.push(patched_sink_new_paths_fixture());
        for f in &fixtures {
            assert!(pairs(&f.graph, &f.root_sink, true).is_empty(), "{} visible flow", f.name);
            assert_eq!(pairs(&f.graph, &f.root_sink, false), f.planted, "{}", f.name);
            assert!(!f.planted.is_empty());
        }
    }

    #[test]
    fn controls_have_no_flows_and_keep_call_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..50 {
            let f = control_fixture(&mut rng, i);
            assert!(pairs(&f.graph, &f.root_sink, false).is_empty(), "{}", f.name);
            for call in f.graph.call_edges() {
                assert!(
                    f.graph.outgoing(call.call_site_node.as_str()).any(|e| e.kind == EdgeKind::CallPass),
                    "{}: call site {} lost its call-pass edge",
                    f.name,
                    call.call_site_node
                );
            }
        }
    }

    #[test]
    fn recursion_recovers_planted_and_ignores_controls() {
        use crate::recursion::{recover_flows, RecursionConfig};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = RecursionConfig::default();
        let mut fixtures: Vec<_> = (0..12)
            .map(|i| hidden_edge_fixture(&mut rng, SHAPES[i % SHAPES.len()], i))
            .collect();
        fixtures.push(reflective_parser_fixture());
        fixtures.push(patched_sink_new_paths_fixture());
        for f in &fixtures {
            let out = recover_flows(&f.graph, &f.root_sink, &cfg).unwrap();
            let got: BTreeSet<_> = out
                .stitched
                .iter()
                .map(|s| (s.combined.source().unwrap().clone(), s.root_sink.clone()))
                .collect();
            assert_eq!(got, f.planted, "{}: {:?}", f.name, out.diagnostics);
        }
        for i in 0..50 {
            let f = control_fixture(&mut rng, i);
            let out = recover_flows(&f.graph, &f.root_sink, &cfg).unwrap();
            assert!(out.stitched.is_empty(), "{}", f.name);
        }
    }
}
