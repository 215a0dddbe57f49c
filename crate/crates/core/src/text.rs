//! Shared text helpers: answer normalization and tokenization.

/// Canonical answer form: trimmed, case-folded, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical form used by the exact judge: [`normalize_answer`] plus
/// removal of trailing punctuation.
pub fn normalize_for_judge(s: &str) -> String {
    let n = normalize_answer(s);
    n.trim_end_matches(|c: char| c.is_ascii_punctuation() || matches!(c, '。' | '？' | '！'))
        .trim_end()
        .to_string()
}

/// True when `answer` equals `gold` or one of `aliases` after normalization.
pub fn answer_matches(answer: &str, gold: &str, aliases: &[String]) -> bool {
    let a = normalize_answer(answer);
    if a.is_empty() {
        return false;
    }
    a == normalize_answer(gold) || aliases.iter().any(|al| a == normalize_answer(al))
}

/// Case-folded alphanumeric tokens of `s`, in order of appearance.
pub fn tokens(s: &str) -> Vec<String> {
    token_spans(s).into_iter().map(|(_, t)| t).collect()
}

/// Case-folded tokens together with the char offset where each one starts.
pub fn token_spans(s: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, c) in s.chars().enumerate() {
        if c.is_alphanumeric() {
            if cur.is_empty() {
                start = i;
            }
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push((start, std::mem::take(&mut cur)));
        }
    }
    if !cur.is_empty() {
        out.push((start, cur));
    }
    out
}

/// Relation or attribute names written with underscores read as prose.
pub fn humanize(label: &str) -> String {
    label.replace('_', " ")
}
