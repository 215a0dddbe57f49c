//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are fixed here.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;

use seeker_core::agent::{
    oracle_policy, run_episode, trajectory_steps, Budget, Decision, OracleStyle, Policy, PolicyContext, PolicyError,
    Step, TerminatedBy, Trajectory, DEFAULT_MAX_TOOL_CALLS, REFERENCE_CONTEXT_TOKENS,
};
use seeker_core::dataset::{export_sft, import_sft};
use seeker_core::eval::{default_mask_patterns, mask_links, MASK_PLACEHOLDER};
use seeker_core::filter::{assemble, low_step_filter, write_items, Dataset, DatasetItem, DedupKey, FilterConfig};
use seeker_core::graph::{expand, generate_random_graph, ExpansionStrategy, GraphGenSpec, KnowledgeGraph, NodeId};
use seeker_core::stats::{compare, reference_summaries, summarize, REFERENCE_MEANS};
use seeker_core::synth::{
    min_hops_oracle, synthesize_template, uniqueness_check, DifficultyConfig, Generator, SubgraphRef, TaskSpec, Verdict,
};
use seeker_core::tools::{
    render_corpus, tool_search, Observation, ObservationConfig, Page, SearchHit, SimWorld, ToolCall, ToolProfile,
    ToolRegistry,
};

const EXPANSION_TIME_LIMIT: Duration = Duration::from_secs(10);
const PIPELINE_TIME_LIMIT: Duration = Duration::from_secs(300);
const MEAN_REL_TOL: f64 = 1e-9;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: String) -> Outcome {
    Outcome { ok: true, detail }
}

fn verdict(violations: &[String], detail: String) -> Outcome {
    if violations.is_empty() {
        pass(detail)
    } else {
        let shown: Vec<&str> = violations.iter().take(5).map(String::as_str).collect();
        Outcome { ok: false, detail: format!("{detail}; {} violations, e.g. {}", violations.len(), shown.join(" | ")) }
    }
}

// ---------------------------------------------------------------- helpers

/// Independent adjacency over the raw edge records.
fn adjacency(g: &KnowledgeGraph) -> BTreeMap<String, BTreeSet<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for n in g.nodes() {
        adj.entry(n.id.to_string()).or_default();
    }
    for e in g.edges() {
        adj.entry(e.src.to_string()).or_default().insert(e.dst.to_string());
        adj.entry(e.dst.to_string()).or_default().insert(e.src.to_string());
    }
    adj
}

fn component_size(adj: &BTreeMap<String, BTreeSet<String>>, seed: &str) -> usize {
    let mut seen = HashSet::from([seed.to_string()]);
    let mut q = VecDeque::from([seed.to_string()]);
    while let Some(v) = q.pop_front() {
        for w in &adj[&v] {
            if seen.insert(w.clone()) {
                q.push_back(w.clone());
            }
        }
    }
    seen.len()
}

fn is_connected(nodes: &[NodeId], adj: &BTreeMap<String, BTreeSet<String>>) -> bool {
    let Some(first) = nodes.first() else { return false };
    let set: HashSet<&str> = nodes.iter().map(NodeId::as_str).collect();
    let mut seen = HashSet::from([first.as_str()]);
    let mut q = VecDeque::from([first.as_str()]);
    while let Some(v) = q.pop_front() {
        for w in &adj[v] {
            if set.contains(w.as_str()) && seen.insert(w.as_str()) {
                q.push_back(w.as_str());
            }
        }
    }
    seen.len() == set.len()
}

fn graph_for(i: u64) -> KnowledgeGraph {
    let spec = GraphGenSpec {
        nodes: 20 + (i as usize * 37) % 481,
        mean_degree: 1.0 + (i % 7) as f64 * 0.5,
        attributes_per_node: 1 + (i % 4) as usize,
        connected: !i.is_multiple_of(3),
        alias_rate: 0.2,
    };
    generate_random_graph(&spec, 1000 + i).expect("generator spec is feasible")
}

fn normalize(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

// ------------------------------------------------------ 1. expansion laws

fn expansion_laws() -> Outcome {
    let mut expand_time = Duration::ZERO;
    let mut violations = Vec::new();
    let mut checks = 0usize;
    for gi in 0..200u64 {
        let g = graph_for(gi);
        let adj = adjacency(&g);
        let raw_edges: Vec<(String, String)> = g.edges().iter().map(|e| (e.src.to_string(), e.dst.to_string())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(gi);
        for _ in 0..5 {
            let seed = g.node_at(rng.gen_range(0..g.node_count())).id.clone();
            let comp = component_size(&adj, seed.as_str());
            let mut previous: Option<BTreeSet<NodeId>> = None;
            for k in [1usize, 3, 8, 24, 64] {
                for strategy in [ExpansionStrategy::FrontierBfs, ExpansionStrategy::RandomFrontier] {
                    checks += 1;
                    let rs = rng.gen::<u64>();
                    let t0 = Instant::now();
                    let sub = expand(&g, &seed, k, strategy, rs).expect("valid expansion");
                    expand_time += t0.elapsed();
                    let tag = format!("graph {gi} seed {seed} K={k} {strategy:?}");
                    if sub.node_ids.len() != k.min(comp) {
                        violations.push(format!("{tag}: budget law {} != min({k},{comp})", sub.node_ids.len()));
                    }
                    if sub.node_ids.first() != Some(&seed) {
                        violations.push(format!("{tag}: seed not first"));
                    }
                    let distinct: HashSet<&NodeId> = sub.node_ids.iter().collect();
                    if distinct.len() != sub.node_ids.len() {
                        violations.push(format!("{tag}: repeated node"));
                    }
                    if !is_connected(&sub.node_ids, &adj) {
                        violations.push(format!("{tag}: not connected"));
                    }
                    let members: HashSet<&str> = sub.node_ids.iter().map(NodeId::as_str).collect();
                    let induced: BTreeSet<(String, String)> = raw_edges
                        .iter()
                        .filter(|(a, b)| members.contains(a.as_str()) && members.contains(b.as_str()))
                        .cloned()
                        .collect();
                    let got: BTreeSet<(String, String)> =
                        sub.edges.iter().map(|e| (e.src.to_string(), e.dst.to_string())).collect();
                    if got != induced {
                        violations.push(format!("{tag}: edges are not the induced set"));
                    }
                    if expand(&g, &seed, k, strategy, rs).expect("valid expansion") != sub {
                        violations.push(format!("{tag}: nondeterministic"));
                    }
                    if strategy == ExpansionStrategy::FrontierBfs {
                        let now: BTreeSet<NodeId> = sub.node_ids.iter().cloned().collect();
                        if let Some(prev) = &previous {
                            if !prev.is_subset(&now) {
                                violations.push(format!("{tag}: not monotone in K"));
                            }
                        }
                        previous = Some(now);
                    }
                }
            }
        }
    }
    if expand_time > EXPANSION_TIME_LIMIT {
        violations.push(format!("expansion time {expand_time:?} exceeds {EXPANSION_TIME_LIMIT:?}"));
    }
    verdict(&violations, format!("200 graphs, {checks} expansions, {:.2}s in expand (limit 10s)", expand_time.as_secs_f64()))
}

// -------------------------------------------------- 2. synthesis soundness

struct Certified {
    graph: Arc<KnowledgeGraph>,
    task: TaskSpec,
}

fn synthesis_pool(per_h: usize) -> (Vec<Certified>, Vec<String>) {
    let mut pool = Vec::new();
    let mut violations = Vec::new();
    for h in 1..=4usize {
        let mut got = 0;
        let mut gi = 0u64;
        while got < per_h && gi < 400 {
            let g = Arc::new(generate_random_graph(
                &GraphGenSpec { nodes: 120, mean_degree: 2.5, attributes_per_node: 3, connected: true, alias_rate: 0.2 },
                50_000 + 1000 * h as u64 + gi,
            ).expect("feasible"));
            gi += 1;
            let mut seen = HashSet::new();
            for s in 0..8usize {
                if got >= per_h {
                    break;
                }
                let seed = g.node_at((s * 13 + gi as usize) % g.node_count()).id.clone();
                let sub = expand(&g, &seed, 24, ExpansionStrategy::FrontierBfs, 0).expect("valid");
                let cfg = DifficultyConfig { hop_count: h, obfuscation_level: (s % 4) as u8, min_hops_required: h };
                let Ok(task) = synthesize_template(&sub, &g, &cfg, s as u64) else { continue };
                if !seen.insert(task.task_id.clone()) {
                    continue;
                }
                got += 1;
                pool.push(Certified { graph: Arc::clone(&g), task });
            }
        }
        if got < per_h {
            violations.push(format!("only {got} tasks synthesized at h={h}"));
        }
    }
    (pool, violations)
}

fn walk_evidence(g: &KnowledgeGraph, t: &TaskSpec) -> Result<(), String> {
    for (i, hop) in t.relation_path.iter().enumerate() {
        let (from, to) = (&t.evidence_node_ids[i], &t.evidence_node_ids[i + 1]);
        let (src, dst) = if hop.inverse { (to, from) } else { (from, to) };
        if !g.edges().iter().any(|e| &e.src == src && &e.dst == dst && e.relation == hop.relation) {
            return Err(format!("hop {i} ({}) has no edge {src} -> {dst}", hop.relation));
        }
    }
    let last = g.node(t.evidence_node_ids.last().expect("nonempty").as_str()).ok_or("answer node missing")?;
    if last.label != t.gold_answer {
        return Err(format!("walk ends at {} but gold is {}", last.label, t.gold_answer));
    }
    Ok(())
}

fn synthesis_soundness(pool: &[Certified], mut violations: Vec<String>) -> Outcome {
    let mut by_h = BTreeMap::new();
    for c in pool {
        let (g, t) = (&c.graph, &c.task);
        let h = t.hop_count();
        *by_h.entry(h).or_insert(0) += 1;
        if let Err(e) = t.validate() {
            violations.push(format!("{}: {e}", t.task_id));
        }
        match min_hops_oracle(g, t) {
            Ok(m) if m >= h => {}
            other => violations.push(format!("{}: min_hops {other:?} below floor {h}", t.task_id)),
        }
        match uniqueness_check(g, t) {
            Verdict::Unique(n) if t.evidence_node_ids.last() == Some(&n) => {}
            other => violations.push(format!("{}: uniqueness {other:?}", t.task_id)),
        }
        if let Err(e) = walk_evidence(g, t) {
            violations.push(format!("{}: {e}", t.task_id));
        }
    }
    verdict(&violations, format!("{} tasks, per h {by_h:?}", pool.len()))
}

// ------------------------------------------------------ 3. oracle rollout

fn oracle_rollout(pool: &[Certified]) -> Outcome {
    let mut violations = Vec::new();
    let mut registries: Vec<(Arc<KnowledgeGraph>, ToolRegistry)> = Vec::new();
    let tasks: Vec<&Certified> = pool.iter().step_by((pool.len() / 200).max(1)).take(200).collect();
    for c in &tasks {
        if !registries.iter().any(|(g, _)| Arc::ptr_eq(g, &c.graph)) {
            let reg = ToolRegistry::simulated(Arc::new(render_corpus(&c.graph)), ToolProfile::V2, ObservationConfig::default());
            registries.push((Arc::clone(&c.graph), reg));
        }
        let reg = &registries.iter().find(|(g, _)| Arc::ptr_eq(g, &c.graph)).expect("inserted").1;
        let t = &c.task;
        let mut p = match oracle_policy(&c.graph, t, OracleStyle::Direct) {
            Ok(p) => p,
            Err(e) => {
                violations.push(format!("{}: {e}", t.task_id));
                continue;
            }
        };
        let traj = run_episode(t, &mut p, reg, &Budget::default()).expect("valid episode");
        if normalize(&traj.answer) != normalize(&t.gold_answer) || traj.terminated_by != TerminatedBy::Answer {
            violations.push(format!("{}: answered {:?} ({:?}), gold {:?}", t.task_id, traj.answer, traj.terminated_by, t.gold_answer));
        }
        if trajectory_steps(&traj) != 3 * t.min_hops {
            violations.push(format!("{}: T={} but 3*min_hops={}", t.task_id, trajectory_steps(&traj), 3 * t.min_hops));
        }
    }
    if tasks.len() < 200 {
        violations.push(format!("only {} certified tasks available", tasks.len()));
    }
    verdict(&violations, format!("{} tasks, accuracy and T = 3*min_hops checked", tasks.len()))
}

// ---------------------------------------------------------- 4. filter floor

fn synthetic_item(id: usize, question: &str, t: usize, answer: &str, rng: &mut ChaCha8Rng) -> DatasetItem {
    let tools = ["search", "open", "find", "calculator"];
    let steps: Vec<Step> = (0..t)
        .map(|k| {
            let reasoning = format!("step {k}: check {} <tool_call> \"quoted\"\nnext", rng.gen::<u16>());
            let mut obs = Observation::text(format!("result {k} ü {}", rng.gen::<u32>()), 4096);
            if rng.gen_bool(0.3) {
                obs.hits = vec![SearchHit { doc_id: format!("n{k}"), title: "T".into(), snippet: "s".into() }];
            }
            let call = ToolCall::new(tools[k % 4])
                .arg("query", format!("q{k}"))
                .arg("top_n", rng.gen_range(1..20i64))
                .arg("weight", rng.gen::<f64>());
            Step { reasoning, action: call, observation: obs }
        })
        .collect();
    let final_reasoning = if rng.gen_bool(0.5) { "Done.".to_string() } else { String::new() };
    let ctx = steps.iter().map(|s| s.reasoning.chars().count() + s.observation.cost_chars).sum::<usize>()
        + final_reasoning.chars().count();
    let terminated_by = if answer.is_empty() {
        if rng.gen_bool(0.5) { TerminatedBy::BudgetExhausted } else { TerminatedBy::PolicyFailure }
    } else {
        TerminatedBy::Answer
    };
    let trajectory = Trajectory {
        task_id: format!("t{id}"),
        tool_call_count: t,
        steps,
        final_reasoning,
        answer: answer.to_string(),
        terminated_by,
        context_chars_used: ctx,
        failure: (terminated_by == TerminatedBy::PolicyFailure).then(|| "policy error".to_string()),
    };
    let task = TaskSpec {
        task_id: format!("t{id}"),
        question: question.to_string(),
        gold_answer: "Gold".into(),
        gold_aliases: if rng.gen_bool(0.2) { vec!["Alias".into()] } else { vec![] },
        evidence_node_ids: vec![NodeId::new("a"), NodeId::new("b")],
        relation_path: vec![seeker_core::synth::PathHop { relation: "r".into(), inverse: rng.gen_bool(0.5) }],
        constraints: vec![Default::default()],
        min_hops: 1,
        obfuscation_level: rng.gen_range(0..4),
        generator: if rng.gen_bool(0.5) { Generator::Template } else { Generator::Model },
        source_subgraph: SubgraphRef { seed: NodeId::new("a"), node_ids: vec![NodeId::new("a"), NodeId::new("b")] },
    };
    DatasetItem { task, trajectory }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, max_t: usize) -> Dataset {
    let questions = ["Who wrote it?", "who  wrote it?", "Where is it?", "When was it?", "What is it?"];
    let items = (0..n)
        .map(|i| {
            let q = if rng.gen_bool(0.3) { questions.choose(rng).unwrap().to_string() } else { format!("Question {i}?") };
            let t = rng.gen_range(0..=max_t);
            let answer = if rng.gen_bool(0.85) { "Gold" } else { "" };
            synthetic_item(i, &q, t, answer, rng)
        })
        .collect();
    Dataset::new(items)
}

/// Re-derives the kept ids from the serialized file with a plain line scan.
fn stream_scan(file: &str, t_min: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for line in file.lines() {
        let v: Value = serde_json::from_str(line).expect("json line");
        let t = v["trajectory"]["steps"].as_array().map_or(0, Vec::len);
        let q = normalize(v["task"]["question"].as_str().unwrap_or_default());
        if t >= t_min && seen.insert(q) {
            kept.push(v["task"]["task_id"].as_str().unwrap_or_default().to_string());
        }
    }
    kept
}

fn filter_floor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = Vec::new();
    let thresholds = [0usize, 1, 8, 50];
    let datasets = 40;
    for di in 0..datasets {
        let n = if di == 0 { 0 } else { rng.gen_range(1..300) };
        let d = random_dataset(&mut rng, n, 80);
        let mut file = Vec::new();
        write_items(&d.items, &mut file).unwrap();
        let file = String::from_utf8(file).unwrap();
        let mut previous: Option<(BTreeSet<String>, BTreeSet<String>)> = None;
        for &t_min in &thresholds {
            let cfg = FilterConfig { t_min, require_correct: false, dedup_on: DedupKey::Question };
            let out = assemble(d.clone(), &cfg);
            let tag = format!("dataset {di} t_min={t_min}");
            if let Some(bad) = out.trajectories().find(|t| trajectory_steps(t) < t_min) {
                violations.push(format!("{tag}: kept T={}", trajectory_steps(bad)));
            }
            let ids: Vec<String> = out.items.iter().map(|i| i.task.task_id.clone()).collect();
            if ids != stream_scan(&file, t_min) {
                violations.push(format!("{tag}: differs from stream scan"));
            }
            if assemble(out.clone(), &cfg).items != out.items {
                violations.push(format!("{tag}: assemble not idempotent"));
            }
            if !out.provenance.is_conserved() {
                violations.push(format!("{tag}: provenance not conserved"));
            }
            let floor_ids: BTreeSet<String> =
                low_step_filter(d.clone(), t_min).items.iter().map(|i| i.task.task_id.clone()).collect();
            let questions: BTreeSet<String> = out.items.iter().map(|i| normalize(&i.task.question)).collect();
            if let Some((prev_ids, prev_q)) = &previous {
                if !floor_ids.is_subset(prev_ids) || !questions.is_subset(prev_q) {
                    violations.push(format!("{tag}: kept set not monotone"));
                }
            }
            previous = Some((floor_ids, questions));
        }
    }
    verdict(&violations, format!("{datasets} random datasets x t_min {thresholds:?} vs stream-scan oracle"))
}

// ----------------------------------------------------- 5. stats fidelity

fn stats_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = Vec::new();
    let d = random_dataset(&mut rng, 1000, 200);
    let s = summarize::<f64>(d.trajectories(), 10);
    let mut file = Vec::new();
    write_items(&d.items, &mut file).unwrap();
    // Second pass over the serialized file with exact integer accumulation.
    let counts: Vec<u64> = String::from_utf8(file)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["trajectory"]["steps"].as_array().unwrap().len() as u64)
        .collect();
    let oracle = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    let mean = s.mean_tool_calls.unwrap_or(f64::NAN);
    let rel = ((mean - oracle) / oracle).abs();
    if rel.is_nan() || rel > MEAN_REL_TOL {
        violations.push(format!("mean {mean} vs oracle {oracle} (rel {rel:e})"));
    }
    if s.count != 1000 || s.histogram.iter().map(|b| b.count).sum::<usize>() != 1000 {
        violations.push("count or histogram total wrong".into());
    }
    let (mn, mx) = (counts.iter().min().copied(), counts.iter().max().copied());
    if s.min.map(|v| v as u64) != mn || s.max.map(|v| v as u64) != mx {
        violations.push("min/max wrong".into());
    }
    let mut shuffled = d.items.clone();
    shuffled.shuffle(&mut rng);
    if summarize::<f64>(shuffled.iter().map(|i| &i.trajectory), 10) != s {
        violations.push("summary depends on item order".into());
    }
    let published = [("v2", 64.67), ("v1", 46.97), ("red", 36.01)];
    if REFERENCE_MEANS.to_vec() != published.to_vec() {
        violations.push(format!("reference constants {REFERENCE_MEANS:?} differ from {published:?}"));
    }
    let mut refs = reference_summaries();
    refs.shuffle(&mut rng);
    let table = compare(refs).expect("nonempty");
    let order: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
    if order != ["v2", "v1", "red"] {
        violations.push(format!("comparison order {order:?}"));
    }
    verdict(&violations, format!("1000 trajectories, mean {mean:.6} vs second pass {oracle:.6} (tol 1e-9 rel); order {order:?}"))
}

// --------------------------------------------------- 6. budget enforcement

struct Scripted {
    kind: usize,
    n: usize,
}

impl Policy for Scripted {
    fn next(&mut self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        self.n += 1;
        let call = match self.kind {
            0 => ToolCall::new("search").arg("query", "alpha"),
            1 => ToolCall::new("find").arg("doc", "missing").arg("pattern", "x"),
            2 if self.n > 30 => return Err(PolicyError::Parse("gave up".into())),
            2 => ToolCall::new("open").arg("doc", "d0"),
            _ if ctx.answer_only => return Ok(Decision::Answer { reasoning: "forced".into(), answer: "guess".into() }),
            _ => ToolCall::new("search").arg("query", "alpha beta"),
        };
        Ok(Decision::Tool { reasoning: format!("call {}", self.n), call })
    }
}

fn budget_enforcement() -> Outcome {
    let pages = (0..20)
        .map(|i| Page { doc_id: NodeId::new(format!("d{i}")), title: format!("Alpha {i}"), kind: "work".into(), body: vec!["alpha beta".repeat(20)] })
        .collect();
    let reg = ToolRegistry::simulated(Arc::new(SimWorld::from_pages(pages, vec![])), ToolProfile::V2, ObservationConfig::default());
    let mut violations = Vec::new();
    let headline = {
        let b = Budget { max_tool_calls: DEFAULT_MAX_TOOL_CALLS, ..Budget::default() };
        let t = run_episode(seeker_core::agent::EpisodeInput { task_id: "x", question: "q" }, &mut Scripted { kind: 0, n: 0 }, &reg, &b).unwrap();
        if trajectory_steps(&t) != 200 || t.terminated_by != TerminatedBy::BudgetExhausted {
            violations.push(format!("cap 200: T={} {:?}", trajectory_steps(&t), t.terminated_by));
        }
        trajectory_steps(&t)
    };
    if DEFAULT_MAX_TOOL_CALLS != 200 || REFERENCE_CONTEXT_TOKENS != 256_000 {
        violations.push("budget constants differ from the published 200 calls / 256k tokens".into());
    }
    let mut runs = 0;
    for cap in [1usize, 2, 7, 50, 200] {
        for ctx in [200usize, 5_000, 1_000_000] {
            for kind in 0..4 {
                runs += 1;
                let b = Budget { max_tool_calls: cap, context_chars: ctx };
                let t = run_episode(
                    seeker_core::agent::EpisodeInput { task_id: "x", question: "q" },
                    &mut Scripted { kind, n: 0 },
                    &reg,
                    &b,
                )
                .unwrap();
                if t.tool_call_count > cap || t.steps.len() > cap {
                    violations.push(format!("cap {cap} ctx {ctx} kind {kind}: T={}", t.tool_call_count));
                }
                if let Err(e) = t.validate() {
                    violations.push(format!("cap {cap} ctx {ctx} kind {kind}: {e}"));
                }
            }
        }
    }
    verdict(&violations, format!("always-calling policy at cap 200 -> T={headline}; {runs} capped runs never exceed the cap"))
}

// ------------------------------------------------------ 7. masking soundness

fn scanner_hits(obs: &Observation, patterns: &[String]) -> usize {
    let lower: Vec<String> = patterns.iter().map(|p| p.to_lowercase()).collect();
    let mut fields = vec![obs.content.to_lowercase()];
    for h in &obs.hits {
        fields.extend([h.doc_id.to_lowercase(), h.title.to_lowercase(), h.snippet.to_lowercase()]);
    }
    fields.iter().map(|f| lower.iter().map(|p| f.matches(p.as_str()).count()).sum::<usize>()).sum()
}

fn random_case(s: &str, rng: &mut ChaCha8Rng) -> String {
    s.chars().map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c }).collect()
}

fn masking_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let patterns = default_mask_patterns();
    let leaks = ["huggingface.co/datasets/answers", "hugging-face", "Hugging Face hub", "hf.co/x", "HuggingFace"];
    let words = ["paris", "river", "novel", "bridge", "archive", "museum", "über", "数据"];
    let mut violations = Vec::new();
    let mut corpus = Vec::new();
    let mut injected = 0;
    while corpus.len() < 1000 {
        let pages: Vec<Page> = (0..12)
            .map(|i| {
                let mut title = format!("{} {}", words.choose(&mut rng).unwrap(), words.choose(&mut rng).unwrap());
                let mut body = format!("{} {} {}", words.choose(&mut rng).unwrap(), words.choose(&mut rng).unwrap(), words.choose(&mut rng).unwrap());
                if rng.gen_bool(0.3) {
                    title = format!("{title} {}", random_case(leaks.choose(&mut rng).unwrap(), &mut rng));
                    injected += 1;
                }
                if rng.gen_bool(0.3) {
                    body = format!("{body} see {}", random_case(leaks.choose(&mut rng).unwrap(), &mut rng));
                    injected += 1;
                }
                let id = if rng.gen_bool(0.1) { format!("hf.co-{i}") } else { format!("p{i}") };
                Page { doc_id: NodeId::new(id), title, kind: "work".into(), body: vec![body] }
            })
            .collect();
        let world = SimWorld::from_pages(pages, vec![]);
        let cap = if rng.gen_bool(0.2) { rng.gen_range(40..400) } else { 4096 };
        let cfg = ObservationConfig { observation_cap: cap, ..Default::default() };
        for _ in 0..8 {
            let q = format!("{} {}", words.choose(&mut rng).unwrap(), random_case("hugging face", &mut rng));
            corpus.push(tool_search(&world, &q, rng.gen_range(1..12), &cfg));
        }
        let free = format!("mirror at {} and {}", random_case(leaks.choose(&mut rng).unwrap(), &mut rng), words.choose(&mut rng).unwrap());
        corpus.push(Observation::text(free, 4096));
    }
    corpus.truncate(1000);
    let before: usize = corpus.iter().map(|o| scanner_hits(o, &patterns)).sum();
    for (i, obs) in corpus.iter().enumerate() {
        let m = mask_links(obs, &patterns);
        let n = scanner_hits(&m, &patterns);
        if n != 0 {
            violations.push(format!("observation {i}: {n} occurrences after masking"));
        }
        if mask_links(&m, &patterns) != m {
            violations.push(format!("observation {i}: masking not idempotent"));
        }
        let kept: Vec<&SearchHit> = obs.hits.iter().filter(|h| scanner_hits(&Observation { content: String::new(), truncated: false, cost_chars: 0, hits: vec![(*h).clone()] }, &patterns) == 0).collect();
        let survivors: Vec<&SearchHit> = m.hits.iter().filter(|h| h.doc_id != MASK_PLACEHOLDER).collect();
        if kept != survivors || m.hits.len() != obs.hits.len() {
            violations.push(format!("observation {i}: unmasked entries reordered or dropped"));
        }
        if m.cost_chars != m.content.chars().count() {
            violations.push(format!("observation {i}: cost_chars out of sync"));
        }
    }
    verdict(&violations, format!("1000 observations, {injected} injected leaks, {before} raw occurrences -> 0 after masking"))
}

// ------------------------------------------------------------ 8. round trip

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_dataset(&mut rng, 1000, 12);
    let mut buf = Vec::new();
    let mut violations = Vec::new();
    match export_sft(&d, "system prompt with tools", &mut buf) {
        Ok(1000) => {}
        other => violations.push(format!("export returned {other:?}")),
    }
    let grammar = Regex::new("^su(at)*a$").unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    for (i, line) in text.lines().enumerate() {
        let v: Value = serde_json::from_str(line).unwrap();
        let word: String = v["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["role"].as_str().unwrap_or("?").chars().next().unwrap_or('?'))
            .collect();
        if !grammar.is_match(&word) {
            violations.push(format!("record {i}: role word {word}"));
        }
    }
    match import_sft(buf.as_slice()) {
        Ok(back) if back.items == d.items => {}
        Ok(back) => {
            let first = back.items.iter().zip(&d.items).position(|(a, b)| a != b);
            violations.push(format!("import differs ({} items, first mismatch {first:?})", back.items.len()));
        }
        Err(e) => violations.push(format!("import failed: {e}")),
    }
    verdict(&violations, format!("1000 items, {} bytes, deep equality + role grammar", buf.len()))
}

// --------------------------------------------------- 9. hermetic determinism

fn pipeline_config(out: &Path, store: &Path, mode: &str, endpoint: &str) -> String {
    format!(
        "seed = 11\nworkers = 4\n[paths]\nout_dir = {out:?}\n[graph.generate]\nnodes = 150\n[synth]\nseeds = 40\n\
         [synth.difficulty]\nhop_count = 3\nobfuscation_level = 1\nmin_hops_required = 2\n\
         [rollout]\npolicy = \"model\"\n[filter]\nt_min = 8\n\
         [client]\nmode = \"{mode}\"\nstore = {store:?}\n[client.endpoint]\nendpoint = \"{endpoint}\"\nmodel = \"scripted\"\nretry_budget = 0\n"
    )
}

fn run_pipeline(cfg: &Path, cwd: &Path, stages: &[&str]) -> Result<(), String> {
    for stage in stages {
        let out = common::run_seeker(&["--config", cfg.to_str().unwrap(), stage], cwd);
        if !out.status.success() {
            return Err(format!("{stage} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn hermetic_determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let store = root.join("transcripts");
    fs::create_dir_all(&store).unwrap();
    let stages = ["graph-gen", "synth", "rollout", "filter", "stats", "export"];

    // Recording pass against a loopback scripted model.
    let rec_out = root.join("record");
    let rec_cfg_path = root.join("record.toml");
    fs::write(&rec_cfg_path, pipeline_config(&rec_out, &store, "live", "http://127.0.0.1:9/none")).unwrap();
    if let Err(e) = run_pipeline(&rec_cfg_path, root, &["graph-gen", "synth"]) {
        return Outcome { ok: false, detail: e };
    }
    let g = seeker_core::graph::load_graph(rec_out.join("graph.jsonl")).unwrap();
    let tasks: Vec<TaskSpec> = fs::read_to_string(rec_out.join("tasks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let endpoint = common::spawn_endpoint(common::scripted_model(common::oracle_script(&g, &tasks)));
    fs::write(&rec_cfg_path, pipeline_config(&rec_out, &store, "record", &endpoint.url)).unwrap();
    if let Err(e) = run_pipeline(&rec_cfg_path, root, &["rollout"]) {
        return Outcome { ok: false, detail: format!("record pass: {e}") };
    }
    let recorded = fs::read_dir(&store).unwrap().count();

    // Two replay passes with no endpoint available.
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let cfg = root.join(format!("{run}.toml"));
        fs::write(&cfg, pipeline_config(&out, &store, "replay", "http://127.0.0.1:9/unreachable")).unwrap();
        if let Err(e) = run_pipeline(&cfg, root, &stages) {
            return Outcome { ok: false, detail: format!("replay run {run}: {e}") };
        }
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(&out).unwrap() {
            let p = entry.unwrap().path();
            files.insert(p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p).unwrap());
        }
        artifacts.push(files);
    }
    let mut violations = Vec::new();
    let names: Vec<&String> = artifacts[0].keys().collect();
    if artifacts[0].keys().ne(artifacts[1].keys()) {
        violations.push("artifact sets differ".into());
    }
    for (name, bytes) in &artifacts[0] {
        if artifacts[1].get(name) != Some(bytes) {
            violations.push(format!("{name} differs between runs"));
        }
    }
    let trajectories = String::from_utf8_lossy(&artifacts[0]["trajectories.jsonl"]).to_string();
    let answered = trajectories.lines().filter(|l| l.contains("\"terminated_by\":\"answer\"")).count();
    if answered == 0 || answered != trajectories.lines().count() {
        violations.push(format!("replayed rollouts answered {answered} of {}", trajectories.lines().count()));
    }
    let elapsed = start.elapsed();
    if elapsed > PIPELINE_TIME_LIMIT {
        violations.push(format!("runtime {elapsed:?} exceeds 5 min"));
    }
    verdict(
        &violations,
        format!(
            "{} artifacts byte-identical across 2 replay runs, {recorded} recorded exchanges, {:.1}s (limit 300s)",
            names.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("expansion-laws", expansion_laws()));
    let (pool, pool_violations) = synthesis_pool(125);
    results.push(("synthesis-soundness", synthesis_soundness(&pool, pool_violations)));
    results.push(("oracle-rollout", oracle_rollout(&pool)));
    results.push(("filter-floor", filter_floor()));
    results.push(("stats-fidelity", stats_fidelity()));
    results.push(("budget-enforcement", budget_enforcement()));
    results.push(("masking-soundness", masking_soundness()));
    results.push(("sft-round-trip", round_trip()));
    results.push(("hermetic-determinism", hermetic_determinism()));
    println!();
    let mut failed = 0;
    for (name, o) in &results {
        println!("acceptance {:<22} {}  {}", name, if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
