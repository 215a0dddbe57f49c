//! Multi-hop question synthesis over an expanded subgraph, with exhaustive
//! oracles certifying hop depth and answer uniqueness.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::client::{ChatMessage, ChatModel, ClientError};
use crate::graph::{KnowledgeGraph, Node, NodeId, Scalar, Subgraph};
use crate::prompts::{self, PromptError};
use crate::text::{humanize, normalize_answer};

/// Candidate paths tried per template call before giving up.
const MAX_CANDIDATES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum Rejection {
    AnswerNotInSubgraph { answer: String },
    InvalidEvidence { reason: String },
    TooFewHops { min_hops: usize, required: usize },
    ShortcutPath { min_hops: usize, hop_count: usize },
    Ambiguous { witnesses: Vec<NodeId> },
    Unsatisfiable,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid difficulty config: {0}")]
    InvalidConfig(String),
    #[error("subgraph has a single node; no {0}-hop path exists")]
    DegenerateSubgraph(usize),
    #[error("subgraph has no simple path of length {0}")]
    NoPathOfLength(usize),
    #[error("none of the {tried} candidate {hops}-hop paths passed the oracle gates")]
    NoCertifiablePath { hops: usize, tried: usize },
    #[error("task references unknown node \"{0}\"")]
    UnknownNode(NodeId),
    #[error("no path satisfying the task constraints reaches the gold answer")]
    NoSatisfyingPath,
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparseable model reply: {0}")]
    UnparseableReply(String),
    #[error("generated task rejected: {0:?}")]
    Rejected(Rejection),
}

/// One step of a relation path. `inverse` means the edge is followed from
/// its destination back to its source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathHop {
    pub relation: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeClue {
    pub attribute: String,
    pub value: Scalar,
}

/// How the question describes one non-answer entity on the path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clues: Vec<AttributeClue>,
}

impl EntityConstraint {
    pub fn is_satisfied_by(&self, node: &Node) -> bool {
        if let Some(name) = &self.name {
            let want = normalize_answer(name);
            let named = normalize_answer(&node.label) == want
                || node.aliases.iter().any(|a| normalize_answer(a) == want);
            if !named {
                return false;
            }
        }
        self.clues.iter().all(|c| node.attributes.get(&c.attribute) == Some(&c.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Template,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphRef {
    pub seed: NodeId,
    pub node_ids: Vec<NodeId>,
}

impl From<&Subgraph> for SubgraphRef {
    fn from(s: &Subgraph) -> Self {
        SubgraphRef { seed: s.seed.clone(), node_ids: s.node_ids.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_aliases: Vec<String>,
    pub evidence_node_ids: Vec<NodeId>,
    pub relation_path: Vec<PathHop>,
    /// Descriptions of `evidence_node_ids[..h]`; the answer node has none.
    pub constraints: Vec<EntityConstraint>,
    pub min_hops: usize,
    #[serde(default)]
    pub obfuscation_level: u8,
    pub generator: Generator,
    pub source_subgraph: SubgraphRef,
}

impl TaskSpec {
    pub fn hop_count(&self) -> usize {
        self.relation_path.len()
    }

    /// Structural invariants of a task record.
    pub fn validate(&self) -> Result<(), String> {
        if self.gold_answer.trim().is_empty() {
            return Err("gold answer is empty".into());
        }
        if self.relation_path.len() + 1 != self.evidence_node_ids.len() {
            return Err("relation path length must be evidence length - 1".into());
        }
        if self.constraints.len() != self.relation_path.len() {
            return Err("one constraint per non-answer evidence node is required".into());
        }
        if self.min_hops == 0 {
            return Err("min_hops must be at least 1".into());
        }
        let source: HashSet<&NodeId> = self.source_subgraph.node_ids.iter().collect();
        if let Some(n) = self.evidence_node_ids.iter().find(|n| !source.contains(n)) {
            return Err(format!("evidence node {n} is outside the source subgraph"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultyConfig {
    pub hop_count: usize,
    /// 0 = literal names; 1 = intermediates get an attribute clue; 2 = every
    /// non-answer entity is one clue; 3 = two clues each.
    pub obfuscation_level: u8,
    pub min_hops_required: usize,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig { hop_count: 3, obfuscation_level: 1, min_hops_required: 2 }
    }
}

impl DifficultyConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.hop_count == 0 {
            return Err(SynthError::InvalidConfig("hop_count must be at least 1".into()));
        }
        if self.obfuscation_level > 3 {
            return Err(SynthError::InvalidConfig("obfuscation_level must be 0..=3".into()));
        }
        if self.min_hops_required > self.hop_count {
            return Err(SynthError::InvalidConfig("min_hops_required exceeds hop_count".into()));
        }
        Ok(())
    }
}

/// A simple path: node indices plus the hop taken between each pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvidencePath {
    pub nodes: Vec<usize>,
    pub hops: Vec<PathHop>,
}

/// Every simple path with exactly `hops` edges inside the subgraph, in a
/// deterministic order (start node, then edge order).
pub fn eligible_paths(graph: &KnowledgeGraph, subgraph: &Subgraph, hops: usize) -> Vec<EvidencePath> {
    let mut inside = vec![false; graph.node_count()];
    let mut starts = Vec::new();
    for id in &subgraph.node_ids {
        if let Some(i) = graph.index_of(id.as_str()) {
            inside[i] = true;
            starts.push(i);
        }
    }
    starts.sort_unstable();
    let mut out = Vec::new();
    let mut nodes = Vec::with_capacity(hops + 1);
    let mut path_hops = Vec::with_capacity(hops);
    for s in starts {
        nodes.push(s);
        walk_paths(graph, &inside, hops, &mut nodes, &mut path_hops, &mut out);
        nodes.pop();
    }
    out
}

fn walk_paths(
    graph: &KnowledgeGraph,
    inside: &[bool],
    hops: usize,
    nodes: &mut Vec<usize>,
    path_hops: &mut Vec<PathHop>,
    out: &mut Vec<EvidencePath>,
) {
    if path_hops.len() == hops {
        out.push(EvidencePath { nodes: nodes.clone(), hops: path_hops.clone() });
        return;
    }
    let u = *nodes.last().expect("path starts nonempty");
    for inc in graph.incidences(u) {
        if !inside[inc.other] || nodes.contains(&inc.other) {
            continue;
        }
        nodes.push(inc.other);
        path_hops.push(PathHop { relation: graph.edge_at(inc.edge).relation.clone(), inverse: inc.inverse });
        walk_paths(graph, inside, hops, nodes, path_hops, out);
        path_hops.pop();
        nodes.pop();
    }
}

fn scalar_key(v: &Scalar) -> String {
    serde_json::to_string(v).expect("scalar serializes")
}

fn attribute_frequency(graph: &KnowledgeGraph) -> HashMap<(String, String), usize> {
    let mut freq = HashMap::new();
    for n in graph.nodes() {
        for (k, v) in &n.attributes {
            *freq.entry((k.clone(), scalar_key(v))).or_insert(0) += 1;
        }
    }
    freq
}

/// The `count` rarest attributes of a node, ties by attribute name.
fn rarest_clues(node: &Node, count: usize, freq: &HashMap<(String, String), usize>) -> Vec<AttributeClue> {
    let mut attrs: Vec<(usize, &String, &Scalar)> = node
        .attributes
        .iter()
        .map(|(k, v)| (freq.get(&(k.clone(), scalar_key(v))).copied().unwrap_or(0), k, v))
        .collect();
    attrs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    attrs
        .into_iter()
        .take(count)
        .map(|(_, k, v)| AttributeClue { attribute: k.clone(), value: v.clone() })
        .collect()
}

fn constraints_for(
    graph: &KnowledgeGraph,
    path: &EvidencePath,
    level: u8,
    freq: &HashMap<(String, String), usize>,
) -> Vec<EntityConstraint> {
    let h = path.hops.len();
    (0..h)
        .map(|pos| {
            let node = graph.node_at(path.nodes[pos]);
            let clue_count = match (level, pos) {
                (0, _) => 0,
                (1, 0) => 0,
                (1, _) | (2, _) => 1,
                _ => 2,
            };
            let clues = rarest_clues(node, clue_count, freq);
            let name = if pos == 0 && (level < 2 || clues.is_empty()) { Some(node.label.clone()) } else { None };
            EntityConstraint { name, clues }
        })
        .collect()
}

fn describe_clues(clues: &[AttributeClue]) -> String {
    clues
        .iter()
        .map(|c| format!("{} {}", humanize(&c.attribute), c.value))
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Renders the question: each hop becomes a relative clause wrapped around
/// the description of the previous entity.
pub fn render_question(constraints: &[EntityConstraint], hops: &[PathHop]) -> String {
    let first = &constraints[0];
    let mut desc = match &first.name {
        Some(name) if first.clues.is_empty() => name.clone(),
        Some(name) => format!("{name} (with {})", describe_clues(&first.clues)),
        None => format!("the entity with {}", describe_clues(&first.clues)),
    };
    for (i, hop) in hops.iter().enumerate() {
        let rel = humanize(&hop.relation);
        let clause = if hop.inverse { format!("that {rel} {desc}") } else { format!("that {desc} {rel}") };
        let clues = constraints.get(i + 1).map(|c| c.clues.as_slice()).unwrap_or(&[]);
        desc = if clues.is_empty() {
            format!("the entity {clause}")
        } else {
            format!("the entity with {} {clause}", describe_clues(clues))
        };
    }
    format!("What is the name of {desc}?")
}

fn task_id_for(evidence: &[NodeId], hops: &[PathHop], question: &str) -> String {
    let mut h = Sha256::new();
    for n in evidence {
        h.update(n.as_str().as_bytes());
        h.update([0]);
    }
    for hop in hops {
        h.update(hop.relation.as_bytes());
        h.update([u8::from(hop.inverse), 0]);
    }
    h.update(question.as_bytes());
    format!("t-{}", &hex::encode(h.finalize())[..16])
}

fn build_task(
    graph: &KnowledgeGraph,
    subgraph: &Subgraph,
    path: &EvidencePath,
    level: u8,
    freq: &HashMap<(String, String), usize>,
) -> TaskSpec {
    let constraints = constraints_for(graph, path, level, freq);
    let question = render_question(&constraints, &path.hops);
    let evidence: Vec<NodeId> = path.nodes.iter().map(|&i| graph.node_at(i).id.clone()).collect();
    let terminal = graph.node_at(*path.nodes.last().expect("nonempty"));
    TaskSpec {
        task_id: task_id_for(&evidence, &path.hops, &question),
        question,
        gold_answer: terminal.label.clone(),
        gold_aliases: terminal.aliases.clone(),
        evidence_node_ids: evidence,
        relation_path: path.hops.clone(),
        constraints,
        min_hops: path.hops.len(),
        obfuscation_level: level,
        generator: Generator::Template,
        source_subgraph: SubgraphRef::from(subgraph),
    }
}

/// Template generator. Walks a uniformly drawn simple path of `hop_count`
/// edges and phrases it as nested relative clauses. Candidates are tried in
/// seeded random order until one is unique and has no shorter satisfying
/// path, so `min_hops == hop_count` on every returned task.
pub fn synthesize_template(
    subgraph: &Subgraph,
    graph: &KnowledgeGraph,
    cfg: &DifficultyConfig,
    rng_seed: u64,
) -> Result<TaskSpec, SynthError> {
    cfg.validate()?;
    let h = cfg.hop_count;
    if subgraph.node_ids.len() < 2 {
        return Err(SynthError::DegenerateSubgraph(h));
    }
    let mut candidates = eligible_paths(graph, subgraph, h);
    if candidates.is_empty() {
        return Err(SynthError::NoPathOfLength(h));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    candidates.shuffle(&mut rng);
    let freq = attribute_frequency(graph);
    let mut tried = 0;
    for path in candidates.iter().take(MAX_CANDIDATES) {
        tried += 1;
        let task = build_task(graph, subgraph, path, cfg.obfuscation_level, &freq);
        let terminal = graph.node_at(*path.nodes.last().expect("nonempty")).id.clone();
        match uniqueness_check(graph, &task) {
            Verdict::Unique(n) if n == terminal => {}
            _ => continue,
        }
        match min_hops_oracle(graph, &task) {
            Ok(m) if m == h && m >= cfg.min_hops_required => return Ok(task),
            _ => continue,
        }
    }
    Err(SynthError::NoCertifiablePath { hops: h, tried })
}

fn resolve(graph: &KnowledgeGraph, id: &NodeId) -> Result<usize, SynthError> {
    graph.index_of(id.as_str()).ok_or_else(|| SynthError::UnknownNode(id.clone()))
}

fn matches_gold(node: &Node, task: &TaskSpec) -> bool {
    let gold = normalize_answer(&task.gold_answer);
    let label = normalize_answer(&node.label);
    let aliases: Vec<String> = task.gold_aliases.iter().map(|a| normalize_answer(a)).collect();
    label == gold || aliases.contains(&label) || node.aliases.iter().any(|a| normalize_answer(a) == gold)
}

/// Shortest path from any node matching the first entity description to
/// any node carrying the gold answer, moving only along the
/// relation/direction pairs the question mentions.
pub fn shortest_satisfying_path(graph: &KnowledgeGraph, task: &TaskSpec) -> Result<EvidencePath, SynthError> {
    for id in &task.evidence_node_ids {
        resolve(graph, id)?;
    }
    let anchor = task.constraints.first().ok_or(SynthError::NoSatisfyingPath)?;
    let allowed: HashSet<(&str, bool)> =
        task.relation_path.iter().map(|h| (h.relation.as_str(), h.inverse)).collect();
    let mut parent: Vec<Option<(usize, usize, bool)>> = vec![None; graph.node_count()];
    let mut seen = vec![false; graph.node_count()];
    let mut queue = VecDeque::new();
    for (i, n) in graph.nodes().iter().enumerate() {
        if anchor.is_satisfied_by(n) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        if matches_gold(graph.node_at(u), task) {
            let mut nodes = vec![u];
            let mut hops = Vec::new();
            let mut cur = u;
            while let Some((prev, edge, inverse)) = parent[cur] {
                hops.push(PathHop { relation: graph.edge_at(edge).relation.clone(), inverse });
                nodes.push(prev);
                cur = prev;
            }
            nodes.reverse();
            hops.reverse();
            return Ok(EvidencePath { nodes, hops });
        }
        for inc in graph.incidences(u) {
            let rel = graph.edge_at(inc.edge).relation.as_str();
            if !seen[inc.other] && allowed.contains(&(rel, inc.inverse)) {
                seen[inc.other] = true;
                parent[inc.other] = Some((u, inc.edge, inc.inverse));
                queue.push_back(inc.other);
            }
        }
    }
    Err(SynthError::NoSatisfyingPath)
}

/// Length of [`shortest_satisfying_path`]. A result below the task's hop
/// count means the question has a shortcut.
pub fn min_hops_oracle(graph: &KnowledgeGraph, task: &TaskSpec) -> Result<usize, SynthError> {
    shortest_satisfying_path(graph, task).map(|p| p.hops.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "nodes")]
pub enum Verdict {
    Unique(NodeId),
    Ambiguous(Vec<NodeId>),
    Unsatisfiable,
}

/// All nodes reachable by a simple walk that satisfies every entity
/// description and follows `relation_path` hop by hop.
pub fn satisfying_answers(graph: &KnowledgeGraph, task: &TaskSpec) -> BTreeSet<usize> {
    let mut found = BTreeSet::new();
    let Some(anchor) = task.constraints.first() else {
        return found;
    };
    let mut path = Vec::with_capacity(task.relation_path.len() + 1);
    for (i, n) in graph.nodes().iter().enumerate() {
        if anchor.is_satisfied_by(n) {
            path.push(i);
            extend_walk(graph, task, &mut path, &mut found);
            path.pop();
        }
    }
    found
}

fn extend_walk(graph: &KnowledgeGraph, task: &TaskSpec, path: &mut Vec<usize>, found: &mut BTreeSet<usize>) {
    let step = path.len() - 1;
    if step == task.relation_path.len() {
        found.insert(*path.last().expect("nonempty"));
        return;
    }
    let hop = &task.relation_path[step];
    let u = *path.last().expect("nonempty");
    for inc in graph.incidences(u) {
        if inc.inverse != hop.inverse || graph.edge_at(inc.edge).relation != hop.relation {
            continue;
        }
        if path.contains(&inc.other) {
            continue;
        }
        if let Some(c) = task.constraints.get(step + 1) {
            if !c.is_satisfied_by(graph.node_at(inc.other)) {
                continue;
            }
        }
        path.push(inc.other);
        extend_walk(graph, task, path, found);
        path.pop();
    }
}

/// Exhaustive constraint satisfaction: unique iff exactly one node answers
/// the question.
pub fn uniqueness_check(graph: &KnowledgeGraph, task: &TaskSpec) -> Verdict {
    let found = satisfying_answers(graph, task);
    let mut ids: Vec<NodeId> = found.into_iter().map(|i| graph.node_at(i).id.clone()).collect();
    match ids.len() {
        0 => Verdict::Unsatisfiable,
        1 => Verdict::Unique(ids.pop().expect("len 1")),
        _ => Verdict::Ambiguous(ids),
    }
}

/// Serializes a subgraph into prompt text: one line per node, one per edge.
pub fn subgraph_prompt_text(graph: &KnowledgeGraph, subgraph: &Subgraph) -> String {
    let mut out = String::from("Entities:\n");
    let mut ids: Vec<&NodeId> = subgraph.node_ids.iter().collect();
    ids.sort();
    for id in ids {
        if let Some(n) = graph.node(id.as_str()) {
            let attrs: Vec<String> = n.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("- {} | {} | {} | {}\n", n.id, n.label, n.entity_kind, attrs.join(", ")));
        }
    }
    out.push_str("Relations:\n");
    for e in &subgraph.edges {
        out.push_str(&format!("- {} -{}-> {}\n", e.src, e.relation, e.dst));
    }
    out
}

#[derive(Deserialize)]
struct ModelTaskReply {
    question: String,
    answer: String,
    evidence: Vec<String>,
}

/// Pulls the first balanced JSON object out of a reply, ignoring any prose
/// or code fences around it.
pub(crate) fn extract_json_object(reply: &str) -> Option<Value> {
    let bytes = reply.as_bytes();
    let mut start = reply.find('{')?;
    loop {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (off, &b) in bytes[start..].iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v) = serde_json::from_str(&reply[start..start + off + 1]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start += 1 + reply[start + 1..].find('{')?;
    }
}

/// Model-backed generator. The reply is checked against the subgraph, then
/// gated by both oracles before it is accepted.
pub fn synthesize_model(
    subgraph: &Subgraph,
    graph: &KnowledgeGraph,
    client: &dyn ChatModel,
    prompt_id: &str,
    cfg: &DifficultyConfig,
) -> Result<TaskSpec, SynthError> {
    cfg.validate()?;
    let vars = BTreeMap::from([
        ("hops", cfg.hop_count.to_string()),
        ("subgraph", subgraph_prompt_text(graph, subgraph)),
    ]);
    let prompt = prompts::render_builtin(prompt_id, &vars)?;
    let exchange = client.complete(&[ChatMessage::user(prompt)])?;
    let value = extract_json_object(&exchange.reply)
        .ok_or_else(|| SynthError::UnparseableReply("no JSON object in reply".into()))?;
    let reply: ModelTaskReply =
        serde_json::from_value(value).map_err(|e| SynthError::UnparseableReply(e.to_string()))?;
    if reply.question.trim().is_empty() || reply.answer.trim().is_empty() {
        return Err(SynthError::UnparseableReply("empty question or answer".into()));
    }

    let answer_norm = normalize_answer(&reply.answer);
    let answer_in_subgraph = subgraph.node_ids.iter().any(|id| {
        graph.node(id.as_str()).is_some_and(|n| {
            normalize_answer(&n.label) == answer_norm || n.aliases.iter().any(|a| normalize_answer(a) == answer_norm)
        })
    });
    if !answer_in_subgraph {
        return Err(SynthError::Rejected(Rejection::AnswerNotInSubgraph { answer: reply.answer }));
    }
    let invalid = |reason: String| SynthError::Rejected(Rejection::InvalidEvidence { reason });
    if reply.evidence.len() < 2 {
        return Err(invalid("evidence must list at least two nodes".into()));
    }
    let mut evidence = Vec::with_capacity(reply.evidence.len());
    for id in &reply.evidence {
        if !subgraph.contains(id) {
            return Err(invalid(format!("{id} is not in the subgraph")));
        }
        evidence.push(NodeId::from(id.as_str()));
    }
    let mut hops = Vec::new();
    for pair in evidence.windows(2) {
        let hop = subgraph.edges.iter().find_map(|e| {
            if e.src == pair[0] && e.dst == pair[1] {
                Some(PathHop { relation: e.relation.clone(), inverse: false })
            } else if e.dst == pair[0] && e.src == pair[1] {
                Some(PathHop { relation: e.relation.clone(), inverse: true })
            } else {
                None
            }
        });
        hops.push(hop.ok_or_else(|| invalid(format!("no edge between {} and {}", pair[0], pair[1])))?);
    }
    let terminal = graph.node(evidence.last().expect("len >= 2").as_str()).expect("checked in subgraph");
    if normalize_answer(&terminal.label) != answer_norm
        && !terminal.aliases.iter().any(|a| normalize_answer(a) == answer_norm)
    {
        return Err(invalid("answer is not the last evidence node".into()));
    }
    let anchor = graph.node(evidence[0].as_str()).expect("checked in subgraph");
    let mut constraints = vec![EntityConstraint::default(); hops.len()];
    constraints[0].name = Some(anchor.label.clone());

    let mut task = TaskSpec {
        task_id: task_id_for(&evidence, &hops, &reply.question),
        question: reply.question,
        gold_answer: terminal.label.clone(),
        gold_aliases: terminal.aliases.clone(),
        evidence_node_ids: evidence,
        relation_path: hops,
        constraints,
        min_hops: 0,
        obfuscation_level: 0,
        generator: Generator::Model,
        source_subgraph: SubgraphRef::from(subgraph),
    };
    let min_hops = match min_hops_oracle(graph, &task) {
        Ok(m) => m,
        Err(SynthError::NoSatisfyingPath) => return Err(SynthError::Rejected(Rejection::Unsatisfiable)),
        Err(e) => return Err(e),
    };
    if min_hops < cfg.min_hops_required.max(1) {
        return Err(SynthError::Rejected(Rejection::TooFewHops { min_hops, required: cfg.min_hops_required }));
    }
    match uniqueness_check(graph, &task) {
        Verdict::Unique(_) => {}
        Verdict::Ambiguous(witnesses) => return Err(SynthError::Rejected(Rejection::Ambiguous { witnesses })),
        Verdict::Unsatisfiable => return Err(SynthError::Rejected(Rejection::Unsatisfiable)),
    }
    task.min_hops = min_hops;
    Ok(task)
}

/// Re-checks a task against both oracles; used by the synthesis driver to
/// attribute rejections.
pub fn certify(graph: &KnowledgeGraph, task: &TaskSpec, cfg: &DifficultyConfig) -> Result<(), Rejection> {
    let min_hops = min_hops_oracle(graph, task).map_err(|_| Rejection::Unsatisfiable)?;
    if min_hops < cfg.min_hops_required.max(1) {
        return Err(Rejection::TooFewHops { min_hops, required: cfg.min_hops_required });
    }
    if task.generator == Generator::Template && min_hops != task.hop_count() {
        return Err(Rejection::ShortcutPath { min_hops, hop_count: task.hop_count() });
    }
    match uniqueness_check(graph, task) {
        Verdict::Unique(_) => Ok(()),
        Verdict::Ambiguous(witnesses) => Err(Rejection::Ambiguous { witnesses }),
        Verdict::Unsatisfiable => Err(Rejection::Unsatisfiable),
    }
}
