//! ReAct episode loop. A trajectory is a sequence of (reasoning, action,
//! observation) steps closed by a final reasoning and answer.

use std::collections::BTreeMap;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::client::{ChatMessage, ChatModel, ClientError, Role};
use crate::graph::{KnowledgeGraph, Scalar};
use crate::prompts;
use crate::synth::{shortest_satisfying_path, TaskSpec};
use crate::text::humanize;
use crate::tools::{DispatchError, Observation, ToolCall, ToolRegistry};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("task {0} is not oracle-certified: {1}")]
    NotCertified(String, String),
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error("could not parse a decision: {0}")]
    Parse(String),
    #[error("environment desync: {0}")]
    Desync(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Answer,
    BudgetExhausted,
    PolicyFailure,
}

impl TerminatedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminatedBy::Answer => "answer",
            TerminatedBy::BudgetExhausted => "budget_exhausted",
            TerminatedBy::PolicyFailure => "policy_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub reasoning: String,
    pub action: ToolCall,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub final_reasoning: String,
    pub answer: String,
    pub tool_call_count: usize,
    pub terminated_by: TerminatedBy,
    pub context_chars_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Number of tool-call steps, `T(τ)`.
pub fn trajectory_steps(t: &Trajectory) -> usize {
    t.steps.len()
}

impl Trajectory {
    /// Context charge recomputed from the record itself.
    pub fn recomputed_context_chars(&self) -> usize {
        self.steps.iter().map(|s| s.reasoning.chars().count() + s.observation.cost_chars).sum::<usize>()
            + self.final_reasoning.chars().count()
    }

    /// The trajectory as a word over {r, a, o, y}.
    pub fn grammar_word(&self) -> String {
        let mut w = "rao".repeat(self.steps.len());
        w.push_str("ry");
        w
    }

    /// Checks the structural invariants every trajectory must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.tool_call_count != self.steps.len() {
            return Err(format!("tool_call_count {} != {} steps", self.tool_call_count, self.steps.len()));
        }
        if self.terminated_by == TerminatedBy::Answer && self.answer.trim().is_empty() {
            return Err("answered trajectory has an empty answer".into());
        }
        if self.context_chars_used != self.recomputed_context_chars() {
            return Err("context_chars_used does not match the recorded steps".into());
        }
        if let Some(i) = self.steps.iter().position(|s| s.action.tool.is_empty()) {
            return Err(format!("step {i} has no action"));
        }
        let word = grammar_regex();
        if !word.is_match(&self.grammar_word()) {
            return Err("trajectory does not match (r a o)* r y".into());
        }
        Ok(())
    }
}

fn grammar_regex() -> Regex {
    Regex::new("^(rao)*ry$").expect("static regex")
}

/// Tool-call cap per episode.
pub const DEFAULT_MAX_TOOL_CALLS: usize = 200;
/// Context window of the reference rollout model, in tokens.
pub const REFERENCE_CONTEXT_TOKENS: usize = 256_000;
pub const DEFAULT_CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_tool_calls: usize,
    /// Character proxy for the context window.
    pub context_chars: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_tool_calls: DEFAULT_MAX_TOOL_CALLS, context_chars: 1_000_000 }
    }
}

impl Budget {
    /// Converts a token window into characters at `chars_per_token`.
    pub fn from_tokens(max_tool_calls: usize, context_tokens: usize, chars_per_token: usize) -> Self {
        Budget { max_tool_calls, context_chars: context_tokens.saturating_mul(chars_per_token) }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_tool_calls == 0 || self.context_chars == 0 {
            return Err(AgentError::InvalidBudget("max_tool_calls and context_chars must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Tool { reasoning: String, call: ToolCall },
    Answer { reasoning: String, answer: String },
}

/// What a policy sees before each decision.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub task_id: &'a str,
    pub question: &'a str,
    pub steps: &'a [Step],
    pub tool_schema: &'a str,
    /// Set on the single forced call after the budget is spent.
    pub answer_only: bool,
}

pub trait Policy: Send {
    fn next(&mut self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError>;
}

/// The question side of an episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub task_id: &'a str,
    pub question: &'a str,
}

impl<'a> From<&'a TaskSpec> for EpisodeInput<'a> {
    fn from(t: &'a TaskSpec) -> Self {
        EpisodeInput { task_id: &t.task_id, question: &t.question }
    }
}

/// Runs one ReAct episode. Unknown tools and invalid arguments end the
/// episode as a policy failure; a failing tool yields an error observation.
/// When the call or context budget is spent the policy gets one
/// answer-only call.
pub fn run_episode<'a>(
    input: impl Into<EpisodeInput<'a>>,
    policy: &mut dyn Policy,
    registry: &ToolRegistry,
    budget: &Budget,
) -> Result<Trajectory, AgentError> {
    let input = input.into();
    if registry.is_empty() {
        return Err(AgentError::EmptyRegistry);
    }
    budget.validate()?;
    let schema = registry.schema_block();
    let mut steps: Vec<Step> = Vec::new();
    let mut used = 0usize;
    let finish = |steps: Vec<Step>, used: usize, reasoning: String, answer: String, by, failure| {
        let used = used + reasoning.chars().count();
        Trajectory {
            task_id: input.task_id.to_string(),
            tool_call_count: steps.len(),
            steps,
            final_reasoning: reasoning,
            answer,
            terminated_by: by,
            context_chars_used: used,
            failure,
        }
    };
    loop {
        let exhausted = steps.len() >= budget.max_tool_calls || used >= budget.context_chars;
        let ctx = PolicyContext {
            task_id: input.task_id,
            question: input.question,
            steps: &steps,
            tool_schema: &schema,
            answer_only: exhausted,
        };
        let decision = match policy.next(&ctx) {
            Ok(d) => d,
            Err(e) => {
                return Ok(finish(steps, used, String::new(), String::new(), TerminatedBy::PolicyFailure, Some(e.to_string())))
            }
        };
        match decision {
            Decision::Answer { reasoning, answer } => {
                let by = if !answer.trim().is_empty() {
                    TerminatedBy::Answer
                } else if exhausted {
                    TerminatedBy::BudgetExhausted
                } else {
                    return Ok(finish(steps, used, reasoning, answer, TerminatedBy::PolicyFailure, Some("empty answer".into())));
                };
                return Ok(finish(steps, used, reasoning, answer, by, None));
            }
            Decision::Tool { reasoning, .. } if exhausted => {
                return Ok(finish(steps, used, reasoning, String::new(), TerminatedBy::BudgetExhausted, None));
            }
            Decision::Tool { reasoning, call } => {
                let observation = match registry.dispatch(&call) {
                    Ok(o) => o,
                    Err(e @ DispatchError::ToolFailure { .. }) => {
                        Observation::text(format!("Error: {e}"), registry.observation_cap())
                    }
                    Err(e) => {
                        return Ok(finish(steps, used, reasoning, String::new(), TerminatedBy::PolicyFailure, Some(e.to_string())))
                    }
                };
                used += reasoning.chars().count() + observation.cost_chars;
                steps.push(Step { reasoning, action: call, observation });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStyle {
    Direct,
    /// Extra search calls inserted per hop.
    Padded(usize),
}

impl OracleStyle {
    pub fn calls_per_hop(self) -> usize {
        match self {
            OracleStyle::Direct => 3,
            OracleStyle::Padded(extra) => 3 + extra,
        }
    }
}

#[derive(Debug, Clone)]
enum Expect {
    Nothing,
    Hit(String),
    Mentions(String),
}

#[derive(Debug, Clone)]
struct PlannedCall {
    reasoning: String,
    call: ToolCall,
    expect: Expect,
}

/// Scripted policy that walks a certified evidence path: per hop one
/// search, one open and one find, then answers the gold label.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    plan: Vec<PlannedCall>,
    answer: String,
}

/// Builds the scripted policy for a task. The walked path is the shortest
/// satisfying path, so the plan has `calls_per_hop * min_hops` calls.
pub fn oracle_policy(graph: &KnowledgeGraph, task: &TaskSpec, style: OracleStyle) -> Result<OraclePolicy, AgentError> {
    let not_certified = |why: String| AgentError::NotCertified(task.task_id.clone(), why);
    let path = shortest_satisfying_path(graph, task).map_err(|e| not_certified(e.to_string()))?;
    if path.hops.len() != task.min_hops {
        return Err(not_certified(format!("shortest path has {} hops, task says {}", path.hops.len(), task.min_hops)));
    }
    let mut plan = Vec::with_capacity(style.calls_per_hop() * path.hops.len());
    for (i, hop) in path.hops.iter().enumerate() {
        let here = graph.node_at(path.nodes[i]);
        let next = graph.node_at(path.nodes[i + 1]);
        let rel = humanize(&hop.relation);
        let anchor_clues = (i == 0).then(|| &task.constraints[0]).filter(|c| c.name.is_none() && !c.clues.is_empty());
        // Clue searches may rank other pages first; only label searches are checked.
        let (query, expect) = match anchor_clues {
            Some(c) => (
                c.clues.iter().map(|cl| format!("{} {}", humanize(&cl.attribute), cl.value)).collect::<Vec<_>>().join(" "),
                Expect::Nothing,
            ),
            None => (here.label.clone(), Expect::Hit(here.id.to_string())),
        };
        plan.push(PlannedCall {
            reasoning: format!("I need to locate {} first; searching for \"{query}\".", here.label),
            call: ToolCall::new("search").arg("query", query.as_str()),
            expect,
        });
        if let OracleStyle::Padded(extra) = style {
            for k in 0..extra {
                let q = format!("{} {rel} {}", here.label, k + 1);
                plan.push(PlannedCall {
                    reasoning: format!("Cross-checking what {} {rel} with another search.", here.label),
                    call: ToolCall::new("search").arg("query", q.as_str()),
                    expect: Expect::Nothing,
                });
            }
        }
        plan.push(PlannedCall {
            reasoning: format!("Opening the page for {} ({}).", here.label, here.id),
            call: ToolCall::new("open").arg("doc", here.id.as_str()),
            expect: Expect::Mentions(here.label.clone()),
        });
        plan.push(PlannedCall {
            reasoning: format!("Looking for the \"{rel}\" relation on this page."),
            call: ToolCall::new("find").arg("doc", here.id.as_str()).arg("pattern", rel.as_str()),
            expect: Expect::Mentions(next.label.clone()),
        });
    }
    Ok(OraclePolicy { plan, answer: task.gold_answer.clone() })
}

impl OraclePolicy {
    pub fn planned_calls(&self) -> usize {
        self.plan.len()
    }
}

impl Policy for OraclePolicy {
    fn next(&mut self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        let done = ctx.steps.len();
        if let Some(last) = done.checked_sub(1).and_then(|i| self.plan.get(i).map(|p| (i, p))) {
            let (i, planned) = last;
            let obs = &ctx.steps[i].observation;
            let ok = match &planned.expect {
                Expect::Nothing => true,
                Expect::Hit(doc) => obs.hits.iter().any(|h| &h.doc_id == doc),
                Expect::Mentions(text) => obs.content.contains(text.as_str()),
            };
            if !ok {
                return Err(PolicyError::Desync(format!("step {} did not surface the expected evidence", i + 1)));
            }
        }
        if done < self.plan.len() {
            if ctx.answer_only {
                return Ok(Decision::Answer {
                    reasoning: "The evidence chain is incomplete, so I cannot answer.".into(),
                    answer: String::new(),
                });
            }
            let p = &self.plan[done];
            return Ok(Decision::Tool { reasoning: p.reasoning.clone(), call: p.call.clone() });
        }
        Ok(Decision::Answer {
            reasoning: format!("Following every relation in turn leads to {}.", self.answer),
            answer: self.answer.clone(),
        })
    }
}

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// The structured tool-call block appended to assistant messages.
pub fn render_tool_call_block(call: &ToolCall) -> String {
    let json = serde_json::to_string(call).expect("tool calls serialize");
    format!("{TOOL_CALL_OPEN}\n{json}\n{TOOL_CALL_CLOSE}")
}

pub fn render_answer_block(answer: &str) -> String {
    format!("{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
}

/// Assistant message content for a step: reasoning, blank line, block.
pub fn assistant_step_content(reasoning: &str, call: &ToolCall) -> String {
    format!("{reasoning}\n\n{}", render_tool_call_block(call))
}

pub fn assistant_final_content(reasoning: &str, answer: &str) -> String {
    format!("{reasoning}\n\n{}", render_answer_block(answer))
}

#[derive(Deserialize)]
struct WireCall {
    tool: String,
    #[serde(default)]
    args: BTreeMap<String, Scalar>,
}

/// Parses a model reply into exactly one decision arm.
pub fn parse_decision(reply: &str) -> Result<Decision, PolicyError> {
    let calls = reply.matches(TOOL_CALL_OPEN).count();
    let answers = reply.matches(ANSWER_OPEN).count();
    match (calls, answers) {
        (1, 0) => {
            let start = reply.find(TOOL_CALL_OPEN).expect("counted");
            let body_start = start + TOOL_CALL_OPEN.len();
            let end = reply[body_start..]
                .find(TOOL_CALL_CLOSE)
                .ok_or_else(|| PolicyError::Parse("unterminated tool_call block".into()))?;
            let wire: WireCall = serde_json::from_str(reply[body_start..body_start + end].trim())
                .map_err(|e| PolicyError::Parse(format!("tool_call is not valid JSON: {e}")))?;
            Ok(Decision::Tool {
                reasoning: reply[..start].trim().to_string(),
                call: ToolCall { tool: wire.tool, args: wire.args },
            })
        }
        (0, 1) => {
            let start = reply.find(ANSWER_OPEN).expect("counted");
            let body_start = start + ANSWER_OPEN.len();
            let end = reply[body_start..]
                .find(ANSWER_CLOSE)
                .ok_or_else(|| PolicyError::Parse("unterminated answer block".into()))?;
            Ok(Decision::Answer {
                reasoning: reply[..start].trim().to_string(),
                answer: reply[body_start..body_start + end].trim().to_string(),
            })
        }
        (0, 0) => Err(PolicyError::Parse("reply has neither a tool call nor an answer".into())),
        _ => Err(PolicyError::Parse("reply must contain exactly one tool call or one answer".into())),
    }
}

const FORMAT_REMINDER: &str = "Your previous reply was not in the required format. Reply again with exactly one \
<tool_call>{...}</tool_call> block or exactly one <answer>...</answer> block.";

const ANSWER_ONLY_NOTICE: &str =
    "The tool budget is exhausted. Do not call any more tools; give your final answer now inside <answer></answer>.";

/// Policy backed by a chat model.
pub struct ModelPolicy {
    client: Arc<dyn ChatModel>,
    template_id: String,
}

pub fn model_policy(client: Arc<dyn ChatModel>, template_id: &str) -> Result<ModelPolicy, prompts::PromptError> {
    prompts::builtin(template_id)?;
    Ok(ModelPolicy { client, template_id: template_id.to_string() })
}

impl ModelPolicy {
    /// Chat transcript for the current history.
    pub fn render_messages(&self, ctx: &PolicyContext<'_>) -> Result<Vec<ChatMessage>, PolicyError> {
        let vars = BTreeMap::from([("tools", ctx.tool_schema.to_string())]);
        let system = prompts::render_builtin(&self.template_id, &vars).map_err(|e| PolicyError::Parse(e.to_string()))?;
        let mut messages = vec![ChatMessage::system(system), ChatMessage::user(ctx.question)];
        for s in ctx.steps {
            messages.push(ChatMessage::assistant(assistant_step_content(&s.reasoning, &s.action)));
            messages.push(ChatMessage::new(Role::Tool, s.observation.content.clone()));
        }
        if ctx.answer_only {
            messages.push(ChatMessage::user(ANSWER_ONLY_NOTICE));
        }
        Ok(messages)
    }
}

impl Policy for ModelPolicy {
    fn next(&mut self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        let mut messages = self.render_messages(ctx)?;
        let first = self.client.complete(&messages)?;
        match parse_decision(&first.reply) {
            Ok(d) => Ok(d),
            Err(_) => {
                messages.push(ChatMessage::assistant(first.reply));
                messages.push(ChatMessage::user(FORMAT_REMINDER));
                let second = self.client.complete(&messages)?;
                parse_decision(&second.reply)
            }
        }
    }
}

/// Runs episodes for many inputs on a bounded worker pool, returning
/// trajectories in input order.
pub fn run_many<T, F>(
    inputs: &[T],
    make_policy: F,
    registry: &ToolRegistry,
    budget: &Budget,
    workers: usize,
) -> Result<Vec<Trajectory>, AgentError>
where
    T: Sync,
    for<'a> &'a T: Into<EpisodeInput<'a>>,
    F: Fn(&T) -> Result<Box<dyn Policy>, AgentError> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    pool.install(|| {
        inputs
            .par_iter()
            .map(|item| {
                let mut policy = make_policy(item)?;
                run_episode(item, policy.as_mut(), registry, budget)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ChatExchange;
    use crate::graph::{expand, Edge, ExpansionStrategy, Node};
    use crate::synth::{synthesize_template, DifficultyConfig};
    use crate::tools::{render_corpus, ObservationConfig, ToolProfile};
    use std::sync::Mutex;

    fn chain() -> KnowledgeGraph {
        let nodes = vec![
            Node::new("a", "Ada Lovelace").with_attr("born", 1815i64),
            Node::new("b", "Notes on the Engine").with_attr("year", 1843i64),
            Node::new("c", "Scientific Memoirs").with_attr("volume", 3i64),
            Node::new("d", "Taylor Press").with_attr("city", "London"),
        ];
        let edges = vec![
            Edge::new("a", "authored", "b"),
            Edge::new("b", "published_in", "c"),
            Edge::new("c", "printed_by", "d"),
        ];
        KnowledgeGraph::new(nodes, edges).unwrap()
    }

    fn task(g: &KnowledgeGraph, h: usize) -> TaskSpec {
        let sub = expand(g, &"a".into(), 4, ExpansionStrategy::FrontierBfs, 0).unwrap();
        let cfg = DifficultyConfig { hop_count: h, obfuscation_level: 0, min_hops_required: 1 };
        synthesize_template(&sub, g, &cfg, 0).unwrap()
    }

    fn registry(g: &KnowledgeGraph) -> ToolRegistry {
        ToolRegistry::simulated(Arc::new(render_corpus(g)), ToolProfile::V1, ObservationConfig::default())
    }

    struct AnswerNow;
    impl Policy for AnswerNow {
        fn next(&mut self, _: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
            Ok(Decision::Answer { reasoning: "Known.".into(), answer: "x".into() })
        }
    }

    struct AlwaysSearch;
    impl Policy for AlwaysSearch {
        fn next(&mut self, _: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
            Ok(Decision::Tool { reasoning: "More.".into(), call: ToolCall::new("search").arg("query", "memoirs") })
        }
    }

    #[test]
    fn immediate_answer_has_no_steps() {
        let g = chain();
        let t = task(&g, 2);
        let traj = run_episode(&t, &mut AnswerNow, &registry(&g), &Budget::default()).unwrap();
        assert_eq!(trajectory_steps(&traj), 0);
        assert_eq!(traj.terminated_by, TerminatedBy::Answer);
        traj.validate().unwrap();
    }

    #[test]
    fn always_calling_hits_the_cap() {
        let g = chain();
        let t = task(&g, 2);
        let b = Budget { max_tool_calls: 5, ..Default::default() };
        let traj = run_episode(&t, &mut AlwaysSearch, &registry(&g), &b).unwrap();
        assert_eq!(traj.tool_call_count, 5);
        assert_eq!(traj.terminated_by, TerminatedBy::BudgetExhausted);
        traj.validate().unwrap();
    }

    #[test]
    fn context_budget_forces_answer_only() {
        let g = chain();
        let t = task(&g, 2);
        let b = Budget { max_tool_calls: 200, context_chars: 50 };
        let traj = run_episode(&t, &mut AlwaysSearch, &registry(&g), &b).unwrap();
        assert_eq!(traj.tool_call_count, 1);
        assert_eq!(traj.terminated_by, TerminatedBy::BudgetExhausted);
        assert_eq!(traj.context_chars_used, traj.recomputed_context_chars());
    }

    #[test]
    fn oracle_direct_and_padded_counts() {
        let g = chain();
        let reg = registry(&g);
        for h in 1..=3 {
            let t = task(&g, h);
            let mut p = oracle_policy(&g, &t, OracleStyle::Direct).unwrap();
            let traj = run_episode(&t, &mut p, &reg, &Budget::default()).unwrap();
            assert_eq!(traj.tool_call_count, 3 * h);
            assert_eq!(traj.answer, t.gold_answer);
            assert_eq!(traj.terminated_by, TerminatedBy::Answer);
            traj.validate().unwrap();
        }
        let t = task(&g, 2);
        let mut p = oracle_policy(&g, &t, OracleStyle::Padded(2)).unwrap();
        let traj = run_episode(&t, &mut p, &reg, &Budget::default()).unwrap();
        assert_eq!(traj.tool_call_count, 10);
        assert_eq!(traj.answer, t.gold_answer);
    }

    #[test]
    fn hand_traced_two_hop_rollout() {
        let g = chain();
        let t = task(&g, 2);
        let mut p = oracle_policy(&g, &t, OracleStyle::Direct).unwrap();
        let traj = run_episode(&t, &mut p, &registry(&g), &Budget::default()).unwrap();
        let tools: Vec<&str> = traj.steps.iter().map(|s| s.action.tool.as_str()).collect();
        assert_eq!(tools, ["search", "open", "find", "search", "open", "find"]);
        // The first find reveals the second evidence node by name.
        let second = g.node(t.evidence_node_ids[1].as_str()).unwrap();
        assert!(traj.steps[2].observation.content.contains(&second.label));
    }

    #[test]
    fn budget_of_one_exhausts_oracle() {
        let g = chain();
        let t = task(&g, 2);
        let mut p = oracle_policy(&g, &t, OracleStyle::Direct).unwrap();
        let b = Budget { max_tool_calls: 1, ..Default::default() };
        let traj = run_episode(&t, &mut p, &registry(&g), &b).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::BudgetExhausted);
        assert_eq!(traj.tool_call_count, 1);
        assert!(traj.answer.is_empty());
    }

    #[test]
    fn oracle_detects_desync() {
        let g = chain();
        let t = task(&g, 2);
        let mut p = oracle_policy(&g, &t, OracleStyle::Direct).unwrap();
        // A world rendered from a different graph cannot surface the evidence.
        let other = KnowledgeGraph::new(vec![Node::new("zz", "Nothing Here")], vec![]).unwrap();
        let traj = run_episode(&t, &mut p, &registry(&other), &Budget::default()).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::PolicyFailure);
        assert_eq!(traj.tool_call_count, 1);
        traj.validate().unwrap();
    }

    #[test]
    fn unknown_tool_is_policy_failure_and_steps_kept() {
        struct Bad(usize);
        impl Policy for Bad {
            fn next(&mut self, _: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
                self.0 += 1;
                let tool = if self.0 == 1 { "search" } else { "teleport" };
                Ok(Decision::Tool { reasoning: "r".into(), call: ToolCall::new(tool).arg("query", "x") })
            }
        }
        let g = chain();
        let t = task(&g, 1);
        let traj = run_episode(&t, &mut Bad(0), &registry(&g), &Budget::default()).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::PolicyFailure);
        assert_eq!(traj.steps.len(), 1);
        assert!(traj.failure.unwrap().contains("teleport"));
    }

    #[test]
    fn empty_registry_rejected() {
        let g = chain();
        let t = task(&g, 1);
        let reg = ToolRegistry::new(100);
        assert!(matches!(run_episode(&t, &mut AnswerNow, &reg, &Budget::default()), Err(AgentError::EmptyRegistry)));
        let bad = Budget { max_tool_calls: 0, ..Default::default() };
        assert!(matches!(run_episode(&t, &mut AnswerNow, &registry(&g), &bad), Err(AgentError::InvalidBudget(_))));
    }

    #[test]
    fn parse_decisions() {
        let tool = "I should search.\n<tool_call>{\"tool\": \"search\", \"args\": {\"query\": \"ada\", \"top_n\": 3}}</tool_call>";
        match parse_decision(tool).unwrap() {
            Decision::Tool { reasoning, call } => {
                assert_eq!(reasoning, "I should search.");
                assert_eq!(call, ToolCall::new("search").arg("query", "ada").arg("top_n", 3i64));
            }
            d => panic!("{d:?}"),
        }
        match parse_decision("Done.\n<answer> Taylor Press </answer>").unwrap() {
            Decision::Answer { answer, .. } => assert_eq!(answer, "Taylor Press"),
            d => panic!("{d:?}"),
        }
        assert!(parse_decision("<tool_call>{\"tool\":\"x\"}</tool_call><answer>y</answer>").is_err());
        assert!(parse_decision("just words").is_err());
    }

    #[test]
    fn rendered_step_parses_back() {
        let call = ToolCall::new("find").arg("doc", "n1").arg("pattern", "a \"quoted\" </b>");
        let content = assistant_step_content("why", &call);
        assert_eq!(parse_decision(&content).unwrap(), Decision::Tool { reasoning: "why".into(), call });
    }

    struct Scripted(Mutex<Vec<String>>);
    impl ChatModel for Scripted {
        fn complete(&self, messages: &[ChatMessage]) -> Result<ChatExchange, ClientError> {
            let reply = self.0.lock().unwrap().remove(0);
            Ok(ChatExchange { messages: messages.to_vec(), reply, usage: None, attempts: 1 })
        }
    }

    #[test]
    fn model_policy_reprompts_once() {
        let g = chain();
        let t = task(&g, 1);
        let both = "<tool_call>{\"tool\":\"search\",\"args\":{\"query\":\"a\"}}</tool_call><answer>b</answer>".to_string();
        let client = Arc::new(Scripted(Mutex::new(vec![both.clone(), "ok <answer>Notes on the Engine</answer>".into()])));
        let mut p = model_policy(client, prompts::AGENT_V1).unwrap();
        let traj = run_episode(&t, &mut p, &registry(&g), &Budget::default()).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::Answer);
        assert_eq!(traj.answer, "Notes on the Engine");

        let client = Arc::new(Scripted(Mutex::new(vec![both.clone(), both])));
        let mut p = model_policy(client, prompts::AGENT_V1).unwrap();
        let traj = run_episode(&t, &mut p, &registry(&g), &Budget::default()).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::PolicyFailure);
    }

    #[test]
    fn model_policy_tool_then_answer() {
        let g = chain();
        let t = task(&g, 1);
        let client = Arc::new(Scripted(Mutex::new(vec![
            "Search first.\n<tool_call>{\"tool\": \"search\", \"args\": {\"query\": \"Ada Lovelace\"}}</tool_call>".into(),
            "Found it.\n<answer>Notes on the Engine</answer>".into(),
        ])));
        let mut p = model_policy(client, prompts::AGENT_V1).unwrap();
        let traj = run_episode(&t, &mut p, &registry(&g), &Budget::default()).unwrap();
        assert_eq!(traj.tool_call_count, 1);
        assert_eq!(traj.steps[0].action.tool, "search");
        traj.validate().unwrap();
    }

    #[test]
    fn run_many_preserves_order() {
        let g = chain();
        let tasks: Vec<TaskSpec> = (1..=3).map(|h| task(&g, h)).collect();
        let reg = registry(&g);
        let out = run_many(
            &tasks,
            |t| Ok(Box::new(oracle_policy(&g, t, OracleStyle::Direct)?) as Box<dyn Policy>),
            &reg,
            &Budget::default(),
            3,
        )
        .unwrap();
        let ids: Vec<&str> = out.iter().map(|t| t.task_id.as_str()).collect();
        let want: Vec<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids, want);
        assert_eq!(out.iter().map(|t| t.tool_call_count).collect::<Vec<_>>(), vec![3, 6, 9]);
    }
}
