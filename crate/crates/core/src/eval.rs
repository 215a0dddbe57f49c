//! Evaluation: link masking on search results, answer judging and
//! accuracy reports over held-out task sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, AgentError, Budget, EpisodeInput, Policy, TerminatedBy};
use crate::client::{ChatMessage, ChatModel};
use crate::prompts;
use crate::synth::TaskSpec;
use crate::text::normalize_for_judge;
use crate::tools::{rerender_search, Observation, SearchHit, ToolRegistry};

pub const MASK_PLACEHOLDER: &str = "[masked]";

/// The hugging-face link family.
pub fn default_mask_patterns() -> Vec<String> {
    ["huggingface", "hugging-face", "hugging face", "hf.co"].iter().map(|s| s.to_string()).collect()
}

fn mask_regex(patterns: &[String]) -> Option<Regex> {
    let alts: Vec<String> = patterns.iter().filter(|p| !p.is_empty()).map(|p| regex::escape(p)).collect();
    if alts.is_empty() {
        return None;
    }
    Some(RegexBuilder::new(&alts.join("|")).case_insensitive(true).build().expect("escaped patterns compile"))
}

fn redact(re: &Regex, s: &str) -> String {
    let mut out = s.to_string();
    for _ in 0..8 {
        if !re.is_match(&out) {
            break;
        }
        out = re.replace_all(&out, MASK_PLACEHOLDER).into_owned();
    }
    out
}

/// Replaces every search entry whose id, title or snippet contains a
/// pattern (case-insensitive) with a placeholder entry, then redacts any
/// remaining occurrence in the text. Unmasked entries keep their order.
pub fn mask_links(obs: &Observation, patterns: &[String]) -> Observation {
    mask_links_capped(obs, patterns, usize::MAX)
}

pub(crate) fn mask_links_capped(obs: &Observation, patterns: &[String], cap: usize) -> Observation {
    let Some(re) = mask_regex(patterns) else {
        return obs.clone();
    };
    let leaks = |h: &SearchHit| re.is_match(&h.doc_id) || re.is_match(&h.title) || re.is_match(&h.snippet);
    let mut out = if obs.hits.iter().any(leaks) {
        let mut masked = obs.clone();
        for h in masked.hits.iter_mut().filter(|h| leaks(h)) {
            *h = SearchHit { doc_id: MASK_PLACEHOLDER.into(), title: MASK_PLACEHOLDER.into(), snippet: String::new() };
        }
        let mut r = rerender_search(&masked, cap);
        r.truncated |= obs.truncated;
        r
    } else {
        obs.clone()
    };
    if re.is_match(&out.content) {
        out.content = redact(&re, &out.content);
        out.cost_chars = out.content.chars().count();
    }
    out
}

/// True if any pattern occurs (case-insensitive) anywhere in the observation.
pub fn leaks(obs: &Observation, patterns: &[String]) -> bool {
    let Some(re) = mask_regex(patterns) else {
        return false;
    };
    re.is_match(&obs.content)
        || obs.hits.iter().any(|h| re.is_match(&h.doc_id) || re.is_match(&h.title) || re.is_match(&h.snippet))
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("line {line}: {message}")]
    Benchmark { line: usize, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    #[default]
    NormalizedExact,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mask_patterns: Vec<String>,
    pub judge: JudgeKind,
    pub trials: usize,
    pub budget: Budget,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mask_patterns: default_mask_patterns(), judge: JudgeKind::default(), trials: 1, budget: Budget::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.trials == 0 {
            return Err(EvalError::Config("trials must be >= 1".into()));
        }
        if let Some(re) = mask_regex(&self.mask_patterns) {
            if re.is_match(MASK_PLACEHOLDER) {
                return Err(EvalError::Config(format!("a mask pattern matches the placeholder {MASK_PLACEHOLDER}")));
            }
        }
        self.budget.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgement {
    Correct,
    Incorrect,
    /// The model judge gave no usable verdict.
    Unjudged,
    /// The episode ended without an answer.
    Failed,
}

/// How answers are judged at run time.
#[derive(Clone, Copy)]
pub enum Judge<'a> {
    Exact,
    Model(&'a dyn ChatModel),
}

/// Normalized comparison against the gold label and each alias.
pub fn judge_exact(answer: &str, gold: &str, aliases: &[String]) -> Judgement {
    let a = normalize_for_judge(answer);
    if a.is_empty() {
        return Judgement::Incorrect;
    }
    let hit = std::iter::once(gold).chain(aliases.iter().map(String::as_str)).any(|g| normalize_for_judge(g) == a);
    if hit {
        Judgement::Correct
    } else {
        Judgement::Incorrect
    }
}

/// Reads a yes/no verdict from a judge reply.
pub fn parse_judge_reply(reply: &str) -> Option<bool> {
    match normalize_for_judge(reply).split_whitespace().next()? {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

pub fn judge(question: &str, answer: &str, gold: &str, aliases: &[String], mode: Judge<'_>) -> Judgement {
    match mode {
        Judge::Exact => judge_exact(answer, gold, aliases),
        Judge::Model(_) if answer.trim().is_empty() => Judgement::Incorrect,
        Judge::Model(client) => {
            let mut gold_text = gold.to_string();
            if !aliases.is_empty() {
                let _ = write!(gold_text, " (also known as: {})", aliases.join("; "));
            }
            let vars = BTreeMap::from([
                ("question", question.to_string()),
                ("gold", gold_text),
                ("answer", answer.to_string()),
            ]);
            let Ok(prompt) = prompts::render_builtin(prompts::JUDGE_V1, &vars) else {
                return Judgement::Unjudged;
            };
            match client.complete(&[ChatMessage::user(prompt)]).ok().and_then(|x| parse_judge_reply(&x.reply)) {
                Some(true) => Judgement::Correct,
                Some(false) => Judgement::Incorrect,
                None => Judgement::Unjudged,
            }
        }
    }
}

/// A held-out question with its reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRecord {
    pub id: String,
    pub question: String,
    pub gold: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Anything that can be evaluated.
pub trait EvalItem {
    fn id(&self) -> &str;
    fn question(&self) -> &str;
    fn gold(&self) -> &str;
    fn aliases(&self) -> &[String];
}

impl EvalItem for TaskSpec {
    fn id(&self) -> &str {
        &self.task_id
    }
    fn question(&self) -> &str {
        &self.question
    }
    fn gold(&self) -> &str {
        &self.gold_answer
    }
    fn aliases(&self) -> &[String] {
        &self.gold_aliases
    }
}

impl EvalItem for BenchmarkRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn question(&self) -> &str {
        &self.question
    }
    fn gold(&self) -> &str {
        &self.gold
    }
    fn aliases(&self) -> &[String] {
        &self.aliases
    }
}

pub fn read_benchmark<R: Read>(r: R) -> Result<Vec<BenchmarkRecord>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BenchmarkRecord = serde_json::from_str(&line)
            .map_err(|e| EvalError::Benchmark { line: n + 1, message: e.to_string() })?;
        if rec.gold.trim().is_empty() {
            return Err(EvalError::Benchmark { line: n + 1, message: "gold answer is empty".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVerdict {
    pub task_id: String,
    pub trial: usize,
    pub verdict: Judgement,
    pub answer: String,
    pub tool_calls: usize,
    pub terminated_by: TerminatedBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: usize,
    pub trials: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub unjudged: usize,
    pub failed: usize,
    /// `correct / (tasks * trials)`.
    pub accuracy: f64,
    pub mean_tool_calls: f64,
    pub by_terminated: BTreeMap<TerminatedBy, usize>,
    pub verdicts: Vec<TaskVerdict>,
}

impl EvalReport {
    pub fn from_verdicts(tasks: usize, trials: usize, verdicts: Vec<TaskVerdict>) -> Self {
        let count = |j| verdicts.iter().filter(|v| v.verdict == j).count();
        let mut by_terminated = BTreeMap::new();
        for v in &verdicts {
            *by_terminated.entry(v.terminated_by).or_insert(0) += 1;
        }
        let runs = verdicts.len();
        let correct = count(Judgement::Correct);
        EvalReport {
            tasks,
            trials,
            correct,
            incorrect: count(Judgement::Incorrect),
            unjudged: count(Judgement::Unjudged),
            failed: count(Judgement::Failed),
            accuracy: if runs == 0 { 0.0 } else { correct as f64 / runs as f64 },
            mean_tool_calls: if runs == 0 {
                0.0
            } else {
                verdicts.iter().map(|v| v.tool_calls).sum::<usize>() as f64 / runs as f64
            },
            by_terminated,
            verdicts,
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.correct + self.incorrect + self.unjudged + self.failed == self.tasks * self.trials
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("tasks,trials,correct,incorrect,unjudged,failed,accuracy,mean_tool_calls\n");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.tasks, self.trials, self.correct, self.incorrect, self.unjudged, self.failed, self.accuracy, self.mean_tool_calls
        );
        s
    }
}

/// Runs `cfg.trials` episodes per task with link masking installed on the
/// registry's search tools, then judges every answer.
pub fn run_eval<T, F>(
    tasks: &[T],
    make_policy: F,
    registry: &mut ToolRegistry,
    cfg: &EvalConfig,
    judge_with: Judge<'_>,
    workers: usize,
) -> Result<EvalReport, EvalError>
where
    T: EvalItem + Sync,
    F: Fn(&T, usize) -> Result<Box<dyn Policy>, AgentError> + Sync,
{
    use rayon::prelude::*;
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    if cfg.judge == JudgeKind::Model && matches!(judge_with, Judge::Exact) {
        return Err(EvalError::Config("model judging needs a judge client".into()));
    }
    registry.set_mask_patterns(cfg.mask_patterns.clone());
    let registry = &*registry;
    let runs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|i| (0..cfg.trials).map(move |k| (i, k))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    let verdicts: Result<Vec<TaskVerdict>, AgentError> = pool.install(|| {
        runs.par_iter()
            .map(|&(i, trial)| {
                let task = &tasks[i];
                let mut policy = make_policy(task, trial)?;
                let input = EpisodeInput { task_id: task.id(), question: task.question() };
                let t = run_episode(input, policy.as_mut(), registry, &cfg.budget)?;
                let verdict = if t.terminated_by == TerminatedBy::Answer {
                    judge(task.question(), &t.answer, task.gold(), task.aliases(), judge_with)
                } else {
                    Judgement::Failed
                };
                Ok(TaskVerdict {
                    task_id: task.id().to_string(),
                    trial,
                    verdict,
                    tool_calls: t.tool_call_count,
                    terminated_by: t.terminated_by,
                    answer: t.answer,
                })
            })
            .collect()
    });
    Ok(EvalReport::from_verdicts(tasks.len(), cfg.trials, verdicts?))
}
