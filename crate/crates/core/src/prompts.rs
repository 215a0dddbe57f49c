//! Named prompt templates with `{placeholder}` substitution.

use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template \"{0}\"")]
    UnknownTemplate(String),
    #[error("template \"{template}\" leaves placeholder {{{name}}} unfilled")]
    Unfilled { template: String, name: String },
}

pub const SYNTH_V1: &str = "synth-v1";
pub const AGENT_V1: &str = "agent-v1";
pub const JUDGE_V1: &str = "judge-v1";

const SYNTH_V1_TEXT: &str = "\
You write hard multi-hop questions from a knowledge-graph excerpt.
Pick a chain of {hops} relations between distinct entities. The question must name only the first entity \
and must require following every relation in order. The answer is the label of the last entity.

Excerpt:
{subgraph}

Reply with a single JSON object and nothing else:
{\"question\": \"...\", \"answer\": \"...\", \"evidence\": [\"<first node id>\", ..., \"<answer node id>\"]}";

const AGENT_V1_TEXT: &str = "\
You are a search agent. Think step by step, then either call exactly one tool or give the final answer.

Tools:
{tools}

To call a tool, end your message with:
<tool_call>{\"tool\": \"<name>\", \"args\": {...}}</tool_call>
To finish, end your message with:
<answer>final answer</answer>
Never include both blocks in one message.";

const JUDGE_V1_TEXT: &str = "\
Decide whether a predicted answer refers to the same entity as the gold answer.
Question: {question}
Gold answer: {gold}
Predicted answer: {answer}
Reply with exactly one word: yes or no.";

/// Looks up a built-in template by id.
pub fn builtin(id: &str) -> Result<&'static str, PromptError> {
    match id {
        SYNTH_V1 => Ok(SYNTH_V1_TEXT),
        AGENT_V1 => Ok(AGENT_V1_TEXT),
        JUDGE_V1 => Ok(JUDGE_V1_TEXT),
        other => Err(PromptError::UnknownTemplate(other.to_string())),
    }
}

/// Replaces each `{name}` in `template` with `vars[name]`. Braces that do not
/// enclose a plain identifier are left untouched.
pub fn render(id: &str, template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let value = vars.get(n).ok_or_else(|| PromptError::Unfilled {
                    template: id.to_string(),
                    name: n.to_string(),
                })?;
                out.push_str(value);
                rest = &after[n.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a built-in template.
pub fn render_builtin(id: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    render(id, builtin(id)?, vars)
}
