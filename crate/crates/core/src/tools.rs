//! Tool registry and the simulated web the tools run against.
//!
//! Every node of the knowledge graph renders to one page. Search ranks pages
//! by how many distinct query tokens they contain, which keeps rankings
//! exhaustively checkable on small corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::graph::{KnowledgeGraph, NodeId, Scalar};
use crate::text::{humanize, token_spans, tokens};

pub const TRUNCATION_MARKER: &str = "\n[... truncated]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DispatchError {
    #[error("unknown tool \"{0}\"")]
    UnknownTool(String),
    #[error("tool \"{tool}\": invalid argument \"{arg}\": {reason}")]
    InvalidArg { tool: String, arg: String, reason: String },
    #[error("tool \"{tool}\" failed: {message}")]
    ToolFailure { tool: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Text,
    Integer,
    Number,
    Boolean,
}

impl ScalarKind {
    fn admits(self, v: &Scalar) -> bool {
        matches!(
            (self, v),
            (ScalarKind::Text, Scalar::Text(_))
                | (ScalarKind::Integer, Scalar::Int(_))
                | (ScalarKind::Number, Scalar::Int(_) | Scalar::Float(_))
                | (ScalarKind::Boolean, Scalar::Bool(_))
        )
    }

    fn as_str(self) -> &'static str {
        match self {
            ScalarKind::Text => "text",
            ScalarKind::Integer => "integer",
            ScalarKind::Number => "number",
            ScalarKind::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ScalarKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub args: Vec<ArgSpec>,
}

impl ToolDescriptor {
    fn new(name: &str, description: &str, args: &[(&str, ScalarKind, bool)]) -> Self {
        ToolDescriptor {
            name: name.to_string(),
            description: description.to_string(),
            args: args
                .iter()
                .map(|(n, k, r)| ArgSpec { name: n.to_string(), kind: *k, required: *r })
                .collect(),
        }
    }

    pub fn validate(&self, args: &BTreeMap<String, Scalar>) -> Result<(), DispatchError> {
        let bad = |arg: &str, reason: String| DispatchError::InvalidArg {
            tool: self.name.clone(),
            arg: arg.to_string(),
            reason,
        };
        for spec in &self.args {
            match args.get(&spec.name) {
                None if spec.required => return Err(bad(&spec.name, "missing required argument".into())),
                Some(v) if !spec.kind.admits(v) => {
                    return Err(bad(&spec.name, format!("expected {}", spec.kind.as_str())))
                }
                _ => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.args.iter().any(|s| &s.name == *k)) {
            return Err(bad(extra, "not declared by the tool".into()));
        }
        Ok(())
    }
}

/// An action: a tool name plus arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, Scalar>,
}

impl ToolCall {
    pub fn new(tool: &str) -> Self {
        ToolCall { tool: tool.to_string(), args: BTreeMap::new() }
    }

    pub fn arg(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.args.insert(name.to_string(), value.into());
        self
    }

    fn text(&self, name: &str) -> Option<&str> {
        match self.args.get(name) {
            Some(Scalar::Text(s)) => Some(s),
            _ => None,
        }
    }

    fn int(&self, name: &str) -> Option<i64> {
        match self.args.get(name) {
            Some(Scalar::Int(i)) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub title: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub content: String,
    #[serde(default)]
    pub truncated: bool,
    /// Characters charged against the context budget: the length of
    /// `content` as delivered.
    pub cost_chars: usize,
    /// Structured result entries for search-style tools.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hits: Vec<SearchHit>,
}

impl Observation {
    /// Wraps text, truncating to `cap` characters including the marker.
    pub fn text(content: String, cap: usize) -> Self {
        let len = content.chars().count();
        if len <= cap {
            return Observation { cost_chars: len, content, truncated: false, hits: Vec::new() };
        }
        let marker_len = TRUNCATION_MARKER.chars().count();
        let keep = cap.saturating_sub(marker_len);
        let mut s: String = content.chars().take(keep).collect();
        s.push_str(TRUNCATION_MARKER);
        let cost = s.chars().count();
        Observation { content: s, truncated: true, cost_chars: cost, hits: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub snippet_chars: usize,
    pub observation_cap: usize,
    pub default_top_n: usize,
    /// Entity kinds indexed by the scholar search tool.
    pub scholar_kinds: Vec<String>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            snippet_chars: 160,
            observation_cap: 4096,
            default_top_n: 10,
            scholar_kinds: vec!["work".into()],
        }
    }
}

/// One rendered document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub doc_id: NodeId,
    pub title: String,
    pub kind: String,
    pub body: Vec<String>,
}

impl Page {
    /// Title line followed by one body sentence per line.
    pub fn text(&self) -> String {
        let mut s = self.title.clone();
        for line in &self.body {
            s.push('\n');
            s.push_str(line);
        }
        s
    }
}

/// Deterministic stand-in for the web: pages, an inverted index and the
/// archived edge qualifiers.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pages: Vec<Page>,
    position: HashMap<NodeId, usize>,
    index: BTreeMap<String, Vec<usize>>,
    title_tokens: Vec<HashSet<String>>,
    archive: Vec<Vec<String>>,
}

/// Renders one page per node: one sentence per attribute, then one per
/// incident edge.
pub fn render_corpus(graph: &KnowledgeGraph) -> SimWorld {
    let mut pages = Vec::with_capacity(graph.node_count());
    let mut archive = Vec::with_capacity(graph.node_count());
    for (i, node) in graph.nodes().iter().enumerate() {
        let mut body: Vec<String> = node
            .attributes
            .iter()
            .map(|(k, v)| format!("The {} of {} is {}.", humanize(k), node.label, v))
            .collect();
        let mut records = Vec::new();
        for inc in graph.incidences(i) {
            let e = graph.edge_at(inc.edge);
            let (s, d) = graph.edge_ends(inc.edge);
            let sentence =
                format!("{} {} {}.", graph.node_at(s).label, humanize(&e.relation), graph.node_at(d).label);
            if !e.qualifiers.is_empty() {
                let q: Vec<String> = e.qualifiers.iter().map(|(k, v)| format!("{k}={v}")).collect();
                records.push(format!("{} [{}]", sentence.trim_end_matches('.'), q.join(", ")));
            }
            body.push(sentence);
        }
        pages.push(Page {
            doc_id: node.id.clone(),
            title: node.label.clone(),
            kind: node.entity_kind.clone(),
            body,
        });
        archive.push(records);
    }
    SimWorld::from_pages(pages, archive)
}

impl SimWorld {
    /// Builds a world from pages directly. Pages are ordered by doc id.
    pub fn from_pages(mut pages: Vec<Page>, mut archive: Vec<Vec<String>>) -> Self {
        archive.resize(pages.len(), Vec::new());
        let mut paired: Vec<(Page, Vec<String>)> = pages.drain(..).zip(archive).collect();
        paired.sort_by(|a, b| a.0.doc_id.cmp(&b.0.doc_id));
        let (pages, archive): (Vec<Page>, Vec<Vec<String>>) = paired.into_iter().unzip();
        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut title_tokens = Vec::with_capacity(pages.len());
        let mut position = HashMap::with_capacity(pages.len());
        for (i, p) in pages.iter().enumerate() {
            position.insert(p.doc_id.clone(), i);
            let toks: BTreeSet<String> = tokens(&p.text()).into_iter().collect();
            for t in toks {
                index.entry(t).or_default().push(i);
            }
            title_tokens.push(tokens(&p.title).into_iter().collect());
        }
        SimWorld { pages, position, index, title_tokens, archive }
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn page(&self, doc: &str) -> Option<&Page> {
        self.position.get(doc).map(|&i| &self.pages[i])
    }

    /// Posting list of a case-folded token.
    pub fn postings(&self, token: &str) -> &[usize] {
        self.index.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn token_count(&self) -> usize {
        self.index.len()
    }

    /// Ranked `(page position, overlap)` pairs: distinct query tokens present,
    /// then title overlap, then doc id. Only pages with overlap >= 1 appear.
    pub fn rank(&self, query: &str, filter: Option<&dyn Fn(&Page) -> bool>) -> Vec<(usize, usize)> {
        let q: BTreeSet<String> = tokens(query).into_iter().collect();
        let mut score: HashMap<usize, usize> = HashMap::new();
        for t in &q {
            for &doc in self.postings(t) {
                *score.entry(doc).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(usize, usize, usize)> = score
            .into_iter()
            .filter(|(doc, _)| filter.is_none_or(|f| f(&self.pages[*doc])))
            .map(|(doc, s)| (doc, s, q.iter().filter(|t| self.title_tokens[doc].contains(*t)).count()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
        ranked.into_iter().map(|(d, s, _)| (d, s)).collect()
    }

    fn snippet(&self, doc: usize, query_tokens: &HashSet<String>, width: usize) -> String {
        let body = self.pages[doc].body.join(" ");
        let chars: Vec<char> = body.chars().collect();
        let hit = token_spans(&body).into_iter().find(|(_, t)| query_tokens.contains(t)).map(|(p, _)| p);
        let center = hit.unwrap_or(0);
        let mut start = if hit.is_some() { center.saturating_sub(width / 2) } else { 0 };
        let end = (start + width).min(chars.len());
        if end - start < width {
            start = end.saturating_sub(width);
        }
        chars[start..end].iter().collect()
    }
}

fn render_hits(query: &str, hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return format!("No results for \"{query}\".");
    }
    let mut s = format!("Search results for \"{query}\":");
    for (i, h) in hits.iter().enumerate() {
        let _ = write!(s, "\n[{}] {} | {}\n    {}", i + 1, h.doc_id, h.title, h.snippet);
    }
    s
}

/// Re-renders a search observation from its hits, keeping the query header.
pub(crate) fn rerender_search(obs: &Observation, cap: usize) -> Observation {
    let header = obs.content.lines().next().unwrap_or("");
    let query = header
        .split_once('"')
        .and_then(|(_, rest)| rest.rsplit_once('"'))
        .map(|(q, _)| q.to_string())
        .unwrap_or_default();
    let mut out = Observation::text(render_hits(&query, &obs.hits), cap);
    out.hits = obs.hits.clone();
    out
}

fn search_with(
    world: &SimWorld,
    query: &str,
    top_n: usize,
    cfg: &ObservationConfig,
    filter: Option<&dyn Fn(&Page) -> bool>,
) -> Observation {
    let qt: HashSet<String> = tokens(query).into_iter().collect();
    let hits: Vec<SearchHit> = world
        .rank(query, filter)
        .into_iter()
        .take(top_n)
        .map(|(doc, _)| SearchHit {
            doc_id: world.pages[doc].doc_id.to_string(),
            title: world.pages[doc].title.clone(),
            snippet: world.snippet(doc, &qt, cfg.snippet_chars),
        })
        .collect();
    let mut obs = Observation::text(render_hits(query, &hits), cfg.observation_cap);
    obs.hits = hits;
    obs
}

/// Ranked keyword search. An empty query yields an empty result list.
pub fn tool_search(world: &SimWorld, query: &str, top_n: usize, cfg: &ObservationConfig) -> Observation {
    search_with(world, query, top_n.max(1), cfg, None)
}

/// Full page text, truncated to the observation cap.
pub fn tool_open(world: &SimWorld, doc: &str, cfg: &ObservationConfig) -> Observation {
    match world.page(doc) {
        Some(p) => Observation::text(p.text(), cfg.observation_cap),
        None => Observation::text(format!("Document \"{doc}\" not found."), cfg.observation_cap),
    }
}

/// Lines of a page containing `pattern` (case-folded), with 1-based line numbers.
pub fn tool_find(
    world: &SimWorld,
    doc: &str,
    pattern: &str,
    cfg: &ObservationConfig,
) -> Result<Observation, String> {
    let page = world.page(doc).ok_or_else(|| format!("unknown document \"{doc}\""))?;
    if pattern.is_empty() {
        return Err("pattern must be nonempty".into());
    }
    let needle = pattern.to_lowercase();
    let text = page.text();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| l.to_lowercase().contains(&needle))
        .map(|(i, l)| format!("L{}: {}", i + 1, l))
        .collect();
    let content = if lines.is_empty() {
        format!("No lines in {doc} contain \"{pattern}\".")
    } else {
        format!("Matches for \"{pattern}\" in {doc}:\n{}", lines.join("\n"))
    };
    Ok(Observation::text(content, cfg.observation_cap))
}

/// Archived qualifier records of the edges around a document.
pub fn tool_archive(world: &SimWorld, doc: &str, cfg: &ObservationConfig) -> Result<Observation, String> {
    let &i = world.position.get(doc).ok_or_else(|| format!("unknown document \"{doc}\""))?;
    let records = &world.archive[i];
    let content = if records.is_empty() {
        format!("No archived records for {doc}.")
    } else {
        format!("Archived records for {doc}:\n{}", records.join("\n"))
    };
    Ok(Observation::text(content, cfg.observation_cap))
}

/// Evaluates `+ - * /` with parentheses and unary minus.
pub fn evaluate_arithmetic(expr: &str) -> Result<f64, String> {
    struct Parser<'a> {
        s: &'a [u8],
        i: usize,
    }
    impl Parser<'_> {
        fn ws(&mut self) {
            while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
                self.i += 1;
            }
        }
        fn peek(&mut self) -> Option<u8> {
            self.ws();
            self.s.get(self.i).copied()
        }
        fn expr(&mut self) -> Result<f64, String> {
            let mut v = self.term()?;
            while let Some(op @ (b'+' | b'-')) = self.peek() {
                self.i += 1;
                let r = self.term()?;
                v = if op == b'+' { v + r } else { v - r };
            }
            Ok(v)
        }
        fn term(&mut self) -> Result<f64, String> {
            let mut v = self.factor()?;
            while let Some(op @ (b'*' | b'/')) = self.peek() {
                self.i += 1;
                let r = self.factor()?;
                if op == b'/' && r == 0.0 {
                    return Err("division by zero".into());
                }
                v = if op == b'*' { v * r } else { v / r };
            }
            Ok(v)
        }
        fn factor(&mut self) -> Result<f64, String> {
            match self.peek() {
                Some(b'-') => {
                    self.i += 1;
                    Ok(-self.factor()?)
                }
                Some(b'(') => {
                    self.i += 1;
                    let v = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err("expected ')'".into());
                    }
                    self.i += 1;
                    Ok(v)
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => {
                    let start = self.i;
                    while self.i < self.s.len() && (self.s[self.i].is_ascii_digit() || self.s[self.i] == b'.') {
                        self.i += 1;
                    }
                    let lit = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
                    lit.parse().map_err(|_| format!("bad number \"{lit}\""))
                }
                Some(c) => Err(format!("unexpected '{}'", c as char)),
                None => Err("unexpected end of expression".into()),
            }
        }
    }
    let mut p = Parser { s: expr.as_bytes(), i: 0 };
    let v = p.expr()?;
    if p.peek().is_some() {
        return Err(format!("trailing input at offset {}", p.i));
    }
    Ok(v)
}

/// A callable tool.
pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;
    /// Runs the tool on already-validated arguments.
    fn invoke(&self, call: &ToolCall) -> Result<Observation, String>;
    /// Search-style tools get link masking applied when it is installed.
    fn is_search(&self) -> bool {
        false
    }
}

enum SimKind {
    Search,
    Open,
    Find,
    ScholarSearch,
    Calculator,
    Archive,
}

/// A tool backed by the simulated world.
pub struct SimTool {
    kind: SimKind,
    descriptor: ToolDescriptor,
    world: Arc<SimWorld>,
    cfg: Arc<ObservationConfig>,
}

impl Tool for SimTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn is_search(&self) -> bool {
        matches!(self.kind, SimKind::Search | SimKind::ScholarSearch)
    }

    fn invoke(&self, call: &ToolCall) -> Result<Observation, String> {
        let cfg = self.cfg.as_ref();
        let top_n = || call.int("top_n").map_or(cfg.default_top_n, |n| n.max(1) as usize);
        match self.kind {
            SimKind::Search => Ok(tool_search(&self.world, call.text("query").unwrap_or(""), top_n(), cfg)),
            SimKind::ScholarSearch => {
                let kinds = &cfg.scholar_kinds;
                let filter = |p: &Page| kinds.iter().any(|k| k == &p.kind);
                Ok(search_with(&self.world, call.text("query").unwrap_or(""), top_n(), cfg, Some(&filter)))
            }
            SimKind::Open => Ok(tool_open(&self.world, call.text("doc").unwrap_or(""), cfg)),
            SimKind::Find => {
                tool_find(&self.world, call.text("doc").unwrap_or(""), call.text("pattern").unwrap_or(""), cfg)
            }
            SimKind::Archive => tool_archive(&self.world, call.text("doc").unwrap_or(""), cfg),
            SimKind::Calculator => {
                let expr = call.text("expression").unwrap_or("");
                let v = evaluate_arithmetic(expr)?;
                Ok(Observation::text(format!("{expr} = {v}"), cfg.observation_cap))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolProfile {
    /// search, open, find
    V1,
    /// V1 plus scholar_search, calculator and archive_lookup
    #[default]
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub tool: String,
    pub latency: Duration,
    pub cost_chars: usize,
    pub ok: bool,
}

/// Named tools in registration order plus an append-only call log.
pub struct ToolRegistry {
    tools: Vec<Box<dyn Tool>>,
    mask_patterns: Vec<String>,
    observation_cap: usize,
    log: Mutex<Vec<CallRecord>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.names()).finish()
    }
}

impl ToolRegistry {
    pub fn new(observation_cap: usize) -> Self {
        ToolRegistry { tools: Vec::new(), mask_patterns: Vec::new(), observation_cap, log: Mutex::new(Vec::new()) }
    }

    /// Registers a tool; names must be unique.
    pub fn register(&mut self, tool: Box<dyn Tool>) -> Result<(), DispatchError> {
        let name = &tool.descriptor().name;
        if self.get(name).is_some() {
            return Err(DispatchError::InvalidArg {
                tool: name.clone(),
                arg: "name".into(),
                reason: "a tool with this name is already registered".into(),
            });
        }
        self.tools.push(tool);
        Ok(())
    }

    /// Simulated-web registry for a profile.
    pub fn simulated(world: Arc<SimWorld>, profile: ToolProfile, cfg: ObservationConfig) -> Self {
        use ScalarKind::{Integer, Text};
        let cfg = Arc::new(cfg);
        let mut specs = vec![
            (
                SimKind::Search,
                ToolDescriptor::new(
                    "search",
                    "Keyword search over the web corpus; returns ranked results with snippets.",
                    &[("query", Text, true), ("top_n", Integer, false)],
                ),
            ),
            (
                SimKind::Open,
                ToolDescriptor::new("open", "Open a document by id and read its full text.", &[("doc", Text, true)]),
            ),
            (
                SimKind::Find,
                ToolDescriptor::new(
                    "find",
                    "List the lines of a document containing a pattern (case-insensitive).",
                    &[("doc", Text, true), ("pattern", Text, true)],
                ),
            ),
        ];
        if profile == ToolProfile::V2 {
            specs.push((
                SimKind::ScholarSearch,
                ToolDescriptor::new(
                    "scholar_search",
                    "Keyword search restricted to scholarly works.",
                    &[("query", Text, true), ("top_n", Integer, false)],
                ),
            ));
            specs.push((
                SimKind::Calculator,
                ToolDescriptor::new(
                    "calculator",
                    "Evaluate an arithmetic expression with + - * / and parentheses.",
                    &[("expression", Text, true)],
                ),
            ));
            specs.push((
                SimKind::Archive,
                ToolDescriptor::new(
                    "archive_lookup",
                    "Look up archived qualifier records (dates, roles) for a document's relations.",
                    &[("doc", Text, true)],
                ),
            ));
        }
        let mut reg = ToolRegistry::new(cfg.observation_cap);
        for (kind, descriptor) in specs {
            reg.register(Box::new(SimTool { kind, descriptor, world: Arc::clone(&world), cfg: Arc::clone(&cfg) }))
                .expect("built-in names are unique");
        }
        reg
    }

    /// Installs link masking on every search-style tool.
    pub fn set_mask_patterns(&mut self, patterns: Vec<String>) {
        self.mask_patterns = patterns;
    }

    pub fn get(&self, name: &str) -> Option<&dyn Tool> {
        self.tools.iter().find(|t| t.descriptor().name == name).map(|b| b.as_ref())
    }

    pub fn observation_cap(&self) -> usize {
        self.observation_cap
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.descriptor().name.clone()).collect()
    }

    pub fn descriptors(&self) -> Vec<&ToolDescriptor> {
        self.tools.iter().map(|t| t.descriptor()).collect()
    }

    /// Prompt block listing every tool in registration order.
    pub fn schema_block(&self) -> String {
        let mut s = String::new();
        for d in self.descriptors() {
            let args: Vec<String> = d
                .args
                .iter()
                .map(|a| format!("{}{}: {}", a.name, if a.required { "" } else { "?" }, a.kind.as_str()))
                .collect();
            let _ = writeln!(s, "- {}({}): {}", d.name, args.join(", "), d.description);
        }
        s
    }

    /// Validates and runs a call, recording it in the call log.
    pub fn dispatch(&self, call: &ToolCall) -> Result<Observation, DispatchError> {
        let tool = self.get(&call.tool).ok_or_else(|| DispatchError::UnknownTool(call.tool.clone()))?;
        tool.descriptor().validate(&call.args)?;
        let started = Instant::now();
        let result = tool.invoke(call);
        let latency = started.elapsed();
        let result = result
            .map(|obs| {
                if tool.is_search() && !self.mask_patterns.is_empty() {
                    crate::eval::mask_links_capped(&obs, &self.mask_patterns, self.observation_cap)
                } else {
                    obs
                }
            })
            .map_err(|message| DispatchError::ToolFailure { tool: call.tool.clone(), message });
        let record = CallRecord {
            tool: call.tool.clone(),
            latency,
            cost_chars: result.as_ref().map_or(0, |o| o.cost_chars),
            ok: result.is_ok(),
        };
        self.log.lock().expect("call log poisoned").push(record);
        result
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }
}

/// Settings for the HTTP-backed adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveConfig {
    /// Search endpoint; `{query}` and `{top_n}` are substituted, URL-encoded.
    pub search_url: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig { search_url: "http://127.0.0.1:8080/search?q={query}&n={top_n}".into(), timeout_ms: 20_000, retries: 2 }
    }
}

fn url_encode(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

/// HTTP adapters implementing the `search` and `open` descriptors against a
/// live search backend returning `[{"url", "title", "snippet"}]`.
pub struct LiveTool {
    search: bool,
    descriptor: ToolDescriptor,
    cfg: LiveConfig,
    cap: usize,
}

impl LiveTool {
    pub fn search(cfg: LiveConfig, cap: usize) -> Self {
        let descriptor = ToolDescriptor::new(
            "search",
            "Web search; returns ranked results with snippets.",
            &[("query", ScalarKind::Text, true), ("top_n", ScalarKind::Integer, false)],
        );
        LiveTool { search: true, descriptor, cfg, cap }
    }

    pub fn open(cfg: LiveConfig, cap: usize) -> Self {
        let descriptor =
            ToolDescriptor::new("open", "Fetch a web page by URL and read its text.", &[("doc", ScalarKind::Text, true)]);
        LiveTool { search: false, descriptor, cfg, cap }
    }

    fn get(&self, url: &str) -> Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.cfg.timeout_ms)))
            .build()
            .into();
        let mut last = String::new();
        for _ in 0..=self.cfg.retries {
            match agent.get(url).call() {
                Ok(mut r) => return r.body_mut().read_to_string().map_err(|e| e.to_string()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(last)
    }
}

impl Tool for LiveTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn is_search(&self) -> bool {
        self.search
    }

    fn invoke(&self, call: &ToolCall) -> Result<Observation, String> {
        if !self.search {
            let body = self.get(call.text("doc").unwrap_or(""))?;
            return Ok(Observation::text(body, self.cap));
        }
        let query = call.text("query").unwrap_or("");
        let top_n = call.int("top_n").unwrap_or(10).max(1);
        let url = self.cfg.search_url.replace("{query}", &url_encode(query)).replace("{top_n}", &top_n.to_string());
        let body = self.get(&url)?;
        let raw: Vec<serde_json::Value> = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        let field = |v: &serde_json::Value, k: &str| v.get(k).and_then(|x| x.as_str()).unwrap_or("").to_string();
        let hits: Vec<SearchHit> = raw
            .iter()
            .take(top_n as usize)
            .map(|v| SearchHit { doc_id: field(v, "url"), title: field(v, "title"), snippet: field(v, "snippet") })
            .collect();
        let mut obs = Observation::text(render_hits(query, &hits), self.cap);
        obs.hits = hits;
        Ok(obs)
    }
}
