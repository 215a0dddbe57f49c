//! SFT conversation records: export of assembled datasets and lossless
//! re-import.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::{
    assistant_final_content, assistant_step_content, Step, TerminatedBy, Trajectory,
};
use crate::client::Role;
use crate::filter::{Dataset, DatasetItem};
use crate::synth::{Generator, TaskSpec};
use crate::tools::{Observation, SearchHit, ToolCall};

pub const FORMAT_VERSION: u32 = 1;

/// Which messages a trainer should compute loss on. Emitted as a hint only.
pub const LOSS_MASK_POLICY: &str = "assistant-only";

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error("item {index} ({task_id}) violates the trajectory grammar: {message}")]
    Refused { index: usize, task_id: String, message: String },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: message {index}: {message}")]
    Grammar { line: usize, index: usize, message: String },
    #[error("line {line}: unsupported format_version {found}")]
    Version { line: usize, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub truncated: bool,
    pub cost_chars: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: Role,
    pub content: String,
    /// Structured copy of the tool-call block in `content`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationMeta>,
    pub loss_mask: bool,
}

impl SftMessage {
    fn plain(role: Role, content: String) -> Self {
        SftMessage { role, content, tool_call: None, answer: None, observation: None, loss_mask: role == Role::Assistant }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub task_id: String,
    pub tool_call_count: usize,
    pub generator: Generator,
    pub terminated_by: TerminatedBy,
    pub context_chars_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub loss_mask_policy: String,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub format_version: u32,
    pub messages: Vec<SftMessage>,
    pub meta: SftMeta,
}

/// Builds the conversation for one item. Refuses trajectories that break
/// the step grammar or their own invariants.
pub fn to_record(item: &DatasetItem, system_prompt: &str) -> Result<SftRecord, String> {
    let t = &item.trajectory;
    t.validate()?;
    if t.task_id != item.task.task_id {
        return Err(format!("trajectory task id {} differs from task {}", t.task_id, item.task.task_id));
    }
    let mut messages = Vec::with_capacity(3 + 2 * t.steps.len());
    messages.push(SftMessage::plain(Role::System, system_prompt.to_string()));
    messages.push(SftMessage::plain(Role::User, item.task.question.clone()));
    for s in &t.steps {
        let mut a = SftMessage::plain(Role::Assistant, assistant_step_content(&s.reasoning, &s.action));
        a.tool_call = Some(s.action.clone());
        messages.push(a);
        let mut o = SftMessage::plain(Role::Tool, s.observation.content.clone());
        o.observation = Some(ObservationMeta {
            truncated: s.observation.truncated,
            cost_chars: s.observation.cost_chars,
            hits: s.observation.hits.clone(),
        });
        messages.push(o);
    }
    let mut last = SftMessage::plain(Role::Assistant, assistant_final_content(&t.final_reasoning, &t.answer));
    last.answer = Some(t.answer.clone());
    messages.push(last);
    Ok(SftRecord {
        format_version: FORMAT_VERSION,
        messages,
        meta: SftMeta {
            task_id: t.task_id.clone(),
            tool_call_count: t.tool_call_count,
            generator: item.task.generator,
            terminated_by: t.terminated_by,
            context_chars_used: t.context_chars_used,
            failure: t.failure.clone(),
            loss_mask_policy: LOSS_MASK_POLICY.to_string(),
            task: item.task.clone(),
        },
    })
}

/// Checks `system user (assistant tool)* assistant`, returning the first
/// offending message index.
pub fn check_role_grammar(roles: &[Role]) -> Result<(), (usize, String)> {
    let expected = |i: usize, n: usize| match i {
        0 => Role::System,
        1 => Role::User,
        _ if i == n - 1 => Role::Assistant,
        _ if i.is_multiple_of(2) => Role::Assistant,
        _ => Role::Tool,
    };
    for (i, &r) in roles.iter().enumerate() {
        let want = expected(i, roles.len().max(3));
        if r != want {
            return Err((i, format!("expected {} but found {}", want.as_str(), r.as_str())));
        }
    }
    if roles.len() < 3 {
        return Err((roles.len(), "record ends before the final assistant message".into()));
    }
    if roles.len().is_multiple_of(2) {
        return Err((roles.len() - 1, "a tool message must follow every tool-calling assistant message".into()));
    }
    Ok(())
}

fn strip_block<'a>(content: &'a str, block: &str) -> Option<&'a str> {
    content.strip_suffix(block)?.strip_suffix("\n\n")
}

/// Inverse of [`to_record`].
pub fn from_record(rec: &SftRecord) -> Result<DatasetItem, (usize, String)> {
    let roles: Vec<Role> = rec.messages.iter().map(|m| m.role).collect();
    check_role_grammar(&roles)?;
    let n = rec.messages.len();
    let mut steps = Vec::with_capacity((n - 3) / 2);
    for i in (2..n - 1).step_by(2) {
        let (a, o) = (&rec.messages[i], &rec.messages[i + 1]);
        let call = a.tool_call.clone().ok_or((i, "assistant step has no tool_call".to_string()))?;
        let reasoning = strip_block(&a.content, &crate::agent::render_tool_call_block(&call))
            .ok_or((i, "content does not end with the tool_call block".to_string()))?;
        let meta = o.observation.as_ref().ok_or((i + 1, "tool message has no observation metadata".to_string()))?;
        steps.push(Step {
            reasoning: reasoning.to_string(),
            action: call,
            observation: Observation {
                content: o.content.clone(),
                truncated: meta.truncated,
                cost_chars: meta.cost_chars,
                hits: meta.hits.clone(),
            },
        });
    }
    let last = &rec.messages[n - 1];
    let answer = last.answer.clone().ok_or((n - 1, "final message has no answer".to_string()))?;
    let final_reasoning = strip_block(&last.content, &crate::agent::render_answer_block(&answer))
        .ok_or((n - 1, "content does not end with the answer block".to_string()))?;
    let m = &rec.meta;
    let trajectory = Trajectory {
        task_id: m.task_id.clone(),
        steps,
        final_reasoning: final_reasoning.to_string(),
        answer,
        tool_call_count: m.tool_call_count,
        terminated_by: m.terminated_by,
        context_chars_used: m.context_chars_used,
        failure: m.failure.clone(),
    };
    trajectory.validate().map_err(|e| (n - 1, e))?;
    Ok(DatasetItem { task: m.task.clone(), trajectory })
}

/// Writes one record per item and returns the count. Nothing is written
/// if any item is refused.
pub fn export_sft<W: Write>(data: &Dataset, system_prompt: &str, mut sink: W) -> Result<usize, SftError> {
    let mut lines = Vec::with_capacity(data.items.len());
    for (index, item) in data.items.iter().enumerate() {
        let rec = to_record(item, system_prompt).map_err(|message| SftError::Refused {
            index,
            task_id: item.task.task_id.clone(),
            message,
        })?;
        lines.push(serde_json::to_string(&rec).expect("records serialize"));
    }
    for l in &lines {
        sink.write_all(l.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(lines.len())
}

pub fn import_sft<R: Read>(source: R) -> Result<Dataset, SftError> {
    let mut items = Vec::new();
    for (n, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SftRecord = serde_json::from_str(&line)
            .map_err(|e| SftError::Malformed { line: line_no, message: e.to_string() })?;
        if rec.format_version != FORMAT_VERSION {
            return Err(SftError::Version { line: line_no, found: rec.format_version });
        }
        let item = from_record(&rec).map_err(|(index, message)| SftError::Grammar { line: line_no, index, message })?;
        items.push(item);
    }
    Ok(Dataset::new(items))
}
