//! Knowledge graph storage, the line-delimited graph file format, a seeded
//! random graph generator and budgeted subgraph expansion.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge references unknown node \"{missing}\"")]
    DanglingEdge { missing: NodeId },
    #[error("duplicate node id \"{0}\"")]
    DuplicateNode(NodeId),
    #[error("duplicate edge ({src}, {relation}, {dst})")]
    DuplicateEdge { src: NodeId, relation: String, dst: NodeId },
    #[error("node \"{0}\" has an empty label")]
    EmptyLabel(NodeId),
    #[error("node id must be nonempty")]
    EmptyId,
    #[error("edge ({src}, {dst}) has an empty relation")]
    EmptyRelation { src: NodeId, dst: NodeId },
    #[error("unknown node \"{0}\"")]
    UnknownNode(NodeId),
    #[error("expansion budget must be at least 1")]
    ZeroBudget,
    #[error("infeasible graph spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stable node identifier. Ordering is lexicographic and is used for every
/// deterministic tie-break in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Attribute or qualifier value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Text(s)
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Float(x)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    #[serde(default)]
    pub entity_kind: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub description: String,
    /// Alternative labels accepted as equal to `label` when judging answers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Fields not understood by this crate, preserved on round-trip.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Node {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Node {
            id: NodeId(id.into()),
            label: label.into(),
            entity_kind: String::new(),
            attributes: BTreeMap::new(),
            description: String::new(),
            aliases: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_kind(mut self, kind: &str) -> Self {
        self.entity_kind = kind.to_string();
        self
    }

    pub fn with_attr(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.attributes.insert(name.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: String,
    #[serde(default)]
    pub qualifiers: BTreeMap<String, Scalar>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Edge {
    pub fn new(src: &str, relation: &str, dst: &str) -> Self {
        Edge {
            src: NodeId::from(src),
            dst: NodeId::from(dst),
            relation: relation.to_string(),
            qualifiers: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_qualifier(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.qualifiers.insert(name.to_string(), value.into());
        self
    }

    fn sort_key(&self) -> (&NodeId, &str, &NodeId) {
        (&self.src, &self.relation, &self.dst)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum GraphRecord {
    Node(Node),
    Edge(Edge),
}

/// One traversal step out of a node, in either edge direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub edge: usize,
    pub other: usize,
    /// True when the edge points from `other` to the current node.
    pub inverse: bool,
}

/// Immutable knowledge graph. Nodes are kept sorted by id and edges by
/// `(src, relation, dst)`, so indices are stable and ordered.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    edges: Vec<Edge>,
    ends: Vec<(usize, usize)>,
    incidences: Vec<Vec<Incidence>>,
    neighbors: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Validates and indexes a graph.
    pub fn new(mut nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self, GraphError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0.is_empty() {
                return Err(GraphError::EmptyId);
            }
            if n.label.trim().is_empty() {
                return Err(GraphError::EmptyLabel(n.id.clone()));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        edges.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut ends = Vec::with_capacity(edges.len());
        let mut incidences = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            if e.relation.is_empty() {
                return Err(GraphError::EmptyRelation { src: e.src.clone(), dst: e.dst.clone() });
            }
            if ei > 0 && edges[ei - 1].sort_key() == e.sort_key() {
                return Err(GraphError::DuplicateEdge {
                    src: e.src.clone(),
                    relation: e.relation.clone(),
                    dst: e.dst.clone(),
                });
            }
            let s = *index.get(&e.src).ok_or_else(|| GraphError::DanglingEdge { missing: e.src.clone() })?;
            let d = *index.get(&e.dst).ok_or_else(|| GraphError::DanglingEdge { missing: e.dst.clone() })?;
            ends.push((s, d));
            incidences[s].push(Incidence { edge: ei, other: d, inverse: false });
            incidences[d].push(Incidence { edge: ei, other: s, inverse: true });
        }
        let neighbors = incidences
            .iter()
            .map(|inc| {
                let set: BTreeSet<usize> = inc.iter().map(|i| i.other).collect();
                set.into_iter().collect()
            })
            .collect();
        Ok(KnowledgeGraph { nodes, index, edges, ends, incidences, neighbors })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn node_at(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn edge_at(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    /// `(src index, dst index)` of an edge.
    pub fn edge_ends(&self, idx: usize) -> (usize, usize) {
        self.ends[idx]
    }

    /// Incident edges of a node in both directions, ordered by edge index.
    pub fn incidences(&self, idx: usize) -> &[Incidence] {
        &self.incidences[idx]
    }

    /// Distinct undirected neighbours, ascending by id.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.neighbors[idx]
    }

    fn require(&self, id: &NodeId) -> Result<usize, GraphError> {
        self.index_of(id.as_str()).ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    /// Size of the weakly-connected component containing `idx`.
    pub fn component_size(&self, idx: usize) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![idx];
        seen[idx] = true;
        let mut count = 0;
        while let Some(u) = stack.pop() {
            count += 1;
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        count
    }

    /// Parses the line-delimited graph format.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, GraphError> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: GraphRecord = serde_json::from_str(&line)
                .map_err(|e| GraphError::Parse { line: i + 1, message: e.to_string() })?;
            match record {
                GraphRecord::Node(n) => nodes.push(n),
                GraphRecord::Edge(e) => edges.push(e),
            }
        }
        Self::new(nodes, edges)
    }

    /// Writes nodes by id then edges by `(src, relation, dst)`, one record per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        for n in &self.nodes {
            serde_json::to_writer(&mut w, &RecordRef::Node(n)).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        for e in &self.edges {
            serde_json::to_writer(&mut w, &RecordRef::Edge(e)).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RecordRef<'a> {
    Node(&'a Node),
    Edge(&'a Edge),
}

/// Loads a graph file from disk.
pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph, GraphError> {
    let f = std::fs::File::open(path.as_ref())?;
    let g = KnowledgeGraph::from_reader(f)?;
    log::info!("loaded graph: {} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(g)
}

/// Parameters of the random fixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphGenSpec {
    pub nodes: usize,
    pub mean_degree: f64,
    pub attributes_per_node: usize,
    pub connected: bool,
    /// Probability that a node carries an alias.
    pub alias_rate: f64,
}

impl Default for GraphGenSpec {
    fn default() -> Self {
        GraphGenSpec { nodes: 200, mean_degree: 3.0, attributes_per_node: 3, connected: true, alias_rate: 0.2 }
    }
}

const KINDS: &[&str] = &["person", "place", "work", "organization"];

const RELATIONS: &[&str] = &[
    "authored",
    "located_in",
    "member_of",
    "founded_by",
    "published_in",
    "influenced",
    "studied_at",
    "part_of",
    "collaborated_with",
    "headquartered_in",
    "named_after",
    "funded_by",
];

const SYLLABLES: &[&str] = &[
    "ka", "ro", "mi", "tel", "dun", "var", "so", "bel", "qui", "zan", "lo", "rin", "fe", "mor", "ta", "vik", "ul",
    "sen", "dra", "po", "nix", "ga", "lem", "shu",
];

const COLORS: &[&str] = &[
    "crimson", "teal", "amber", "indigo", "ochre", "violet", "silver", "jade", "umber", "coral", "cobalt", "saffron",
];

const GENRES: &[&str] = &[
    "baroque", "folk", "noir", "pastoral", "satire", "epic", "chamber", "gothic", "minimalist", "surreal",
];

const ATTRIBUTES: &[&str] = &["founded", "population", "elevation", "code", "color", "rating", "genre", "award_count"];

fn gen_attribute(name: &str, rng: &mut ChaCha8Rng) -> Scalar {
    match name {
        "founded" => Scalar::Int(rng.gen_range(1000..=2024)),
        "population" => Scalar::Int(rng.gen_range(1_000..=9_999_999)),
        "elevation" => Scalar::Int(rng.gen_range(1..=8848)),
        "code" => {
            let letters: String = (0..3).map(|_| (b'A' + rng.gen_range(0..26u8)) as char).collect();
            Scalar::Text(format!("{letters}{:02}", rng.gen_range(0..100)))
        }
        "color" => Scalar::Text(COLORS[rng.gen_range(0..COLORS.len())].to_string()),
        "rating" => Scalar::Float(f64::from(rng.gen_range(0..=100u32)) / 10.0),
        "genre" => Scalar::Text(GENRES[rng.gen_range(0..GENRES.len())].to_string()),
        _ => Scalar::Int(rng.gen_range(0..=50)),
    }
}

fn gen_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w: String = (0..syllables).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
    if let Some(first) = w.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    w
}

/// Generates a deterministic random graph for fixtures. Labels are two-word
/// names whose token sets are unique across the graph.
pub fn generate_random_graph(spec: &GraphGenSpec, seed: u64) -> Result<KnowledgeGraph, GraphError> {
    let n = spec.nodes;
    if n == 0 {
        return Err(GraphError::Infeasible("node count must be at least 1".into()));
    }
    if spec.mean_degree.is_nan() || spec.mean_degree < 0.0 || spec.mean_degree > (n - 1) as f64 {
        return Err(GraphError::Infeasible(format!(
            "mean degree {} is outside [0, {}]",
            spec.mean_degree,
            n - 1
        )));
    }
    if spec.attributes_per_node > ATTRIBUTES.len() {
        return Err(GraphError::Infeasible(format!(
            "at most {} attributes per node are available",
            ATTRIBUTES.len()
        )));
    }
    let max_pairs = n * (n - 1) / 2;
    let mut target = ((n as f64) * spec.mean_degree / 2.0).round() as usize;
    if spec.connected {
        target = target.max(n - 1);
    }
    let target = target.min(max_pairs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (n.saturating_sub(1)).to_string().len().max(4);
    let mut used_names: HashSet<(String, String)> = HashSet::new();
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let (first, last) = loop {
            let a = gen_word(&mut rng, 2);
            let syl = rng.gen_range(2..=3);
            let b = gen_word(&mut rng, syl);
            let (x, y) = (a.to_lowercase(), b.to_lowercase());
            if x == y {
                continue;
            }
            let key = if x < y { (x, y) } else { (y, x) };
            if used_names.insert(key) {
                break (a, b);
            }
        };
        let kind = KINDS[rng.gen_range(0..KINDS.len())];
        let label = format!("{first} {last}");
        let mut node = Node::new(format!("n{i:0width$}"), label.clone()).with_kind(kind);
        node.description = format!("A {kind} known as {label}.");
        let mut names: Vec<&str> = ATTRIBUTES.to_vec();
        names.shuffle(&mut rng);
        for name in names.into_iter().take(spec.attributes_per_node) {
            let v = gen_attribute(name, &mut rng);
            node.attributes.insert(name.to_string(), v);
        }
        if rng.gen_bool(spec.alias_rate.clamp(0.0, 1.0)) {
            node.aliases.push(format!("{}. {last}", &first[..1]));
        }
        nodes.push(node);
    }

    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut edges = Vec::with_capacity(target);
    let mut push_edge = |u: usize, v: usize, rng: &mut ChaCha8Rng, edges: &mut Vec<Edge>| {
        let key = (u.min(v), u.max(v));
        if u == v || !pairs.insert(key) {
            return false;
        }
        let rel = RELATIONS[rng.gen_range(0..RELATIONS.len())];
        let (s, d) = if rng.gen_bool(0.5) { (u, v) } else { (v, u) };
        let mut e = Edge::new(nodes[s].id.as_str(), rel, nodes[d].id.as_str());
        if rng.gen_bool(0.3) {
            e.qualifiers.insert("since".into(), Scalar::Int(rng.gen_range(1800..=2024)));
        }
        edges.push(e);
        true
    };
    if spec.connected && n > 1 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for i in 1..n {
            let j = rng.gen_range(0..i);
            push_edge(order[i], order[j], &mut rng, &mut edges);
        }
    }
    if target > edges.len() {
        if target * 2 > max_pairs {
            let mut free: Vec<(usize, usize)> =
                (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
            free.shuffle(&mut rng);
            for (u, v) in free {
                if edges.len() >= target {
                    break;
                }
                push_edge(u, v, &mut rng, &mut edges);
            }
        } else {
            while edges.len() < target {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                push_edge(u, v, &mut rng, &mut edges);
            }
        }
    }
    KnowledgeGraph::new(nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionStrategy {
    /// Breadth-first over undirected neighbours, ties by node id.
    #[default]
    FrontierBfs,
    /// Uniform draw from the current frontier at every step.
    RandomFrontier,
}

/// Evidence neighbourhood around a seed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub seed: NodeId,
    /// Selected nodes in selection order; the seed comes first.
    pub node_ids: Vec<NodeId>,
    pub edges: Vec<Edge>,
    pub budget_used: usize,
}

impl Subgraph {
    pub fn contains(&self, id: &str) -> bool {
        self.node_ids.iter().any(|n| n.as_str() == id)
    }
}

/// Grows a connected node set of at most `budget` nodes around `seed`.
///
/// Edges are traversed in both directions. The result has exactly
/// `min(budget, component size)` nodes. `FrontierBfs` ignores `rng_seed` and
/// visits in a fixed order, so a larger budget always yields a superset.
pub fn expand(
    graph: &KnowledgeGraph,
    seed: &NodeId,
    budget: usize,
    strategy: ExpansionStrategy,
    rng_seed: u64,
) -> Result<Subgraph, GraphError> {
    if budget == 0 {
        return Err(GraphError::ZeroBudget);
    }
    let start = graph.require(seed)?;
    let mut chosen = vec![false; graph.node_count()];
    let mut order = vec![start];
    chosen[start] = true;
    match strategy {
        ExpansionStrategy::FrontierBfs => {
            let mut queue = VecDeque::from([start]);
            'outer: while let Some(u) = queue.pop_front() {
                for &v in graph.neighbors(u) {
                    if order.len() >= budget {
                        break 'outer;
                    }
                    if !chosen[v] {
                        chosen[v] = true;
                        order.push(v);
                        queue.push_back(v);
                    }
                }
            }
        }
        ExpansionStrategy::RandomFrontier => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let mut frontier: BTreeSet<usize> = graph.neighbors(start).iter().copied().collect();
            while order.len() < budget && !frontier.is_empty() {
                let pick = rng.gen_range(0..frontier.len());
                let v = *frontier.iter().nth(pick).expect("pick < len");
                frontier.remove(&v);
                chosen[v] = true;
                order.push(v);
                frontier.extend(graph.neighbors(v).iter().copied().filter(|&w| !chosen[w]));
            }
        }
    }
    let edges = (0..graph.edge_count())
        .filter(|&e| {
            let (s, d) = graph.edge_ends(e);
            chosen[s] && chosen[d]
        })
        .map(|e| graph.edge_at(e).clone())
        .collect();
    Ok(Subgraph {
        seed: seed.clone(),
        budget_used: order.len(),
        node_ids: order.into_iter().map(|i| graph.node_at(i).id.clone()).collect(),
        edges,
    })
}

/// Edges with both endpoints in `node_ids`, in `(src, relation, dst)` order.
pub fn induced_edges(graph: &KnowledgeGraph, node_ids: &[NodeId]) -> Result<Vec<Edge>, GraphError> {
    let mut mask = vec![false; graph.node_count()];
    for id in node_ids {
        mask[graph.require(id)?] = true;
    }
    Ok((0..graph.edge_count())
        .filter(|&e| {
            let (s, d) = graph.edge_ends(e);
            mask[s] && mask[d]
        })
        .map(|e| graph.edge_at(e).clone())
        .collect())
}

/// Node budgets for the two expansion regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    /// Baseline budget `k`.
    pub small_budget: usize,
    /// Enlarged budget `K` used for synthesis.
    pub budget: usize,
    pub strategy: ExpansionStrategy,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { small_budget: 8, budget: 24, strategy: ExpansionStrategy::FrontierBfs }
    }
}
