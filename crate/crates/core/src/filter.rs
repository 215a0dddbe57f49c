//! Dataset assembly from raw rollouts: correctness gate, low-step filter
//! and deduplication, with per-stage provenance counts.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::{trajectory_steps, TerminatedBy, Trajectory};
use crate::synth::TaskSpec;
use crate::text::{answer_matches, normalize_answer};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupKey {
    #[default]
    Question,
    QuestionAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Minimum tool-call count; trajectories below it are dropped.
    pub t_min: usize,
    pub require_correct: bool,
    pub dedup_on: DedupKey,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { t_min: 8, require_correct: false, dedup_on: DedupKey::Question }
    }
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub task: TaskSpec,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<FilterConfig>,
    pub input_count: usize,
    pub stages: Vec<StageCount>,
}

impl Provenance {
    pub fn kept(&self) -> usize {
        self.stages.last().map_or(self.input_count, |s| s.kept)
    }

    /// `input = kept + drops` overall and per stage, with stages chained.
    pub fn is_conserved(&self) -> bool {
        let mut expected_input = self.input_count;
        for s in &self.stages {
            if s.input != expected_input || s.input != s.kept + s.dropped {
                return false;
            }
            expected_input = s.kept;
        }
        self.input_count == self.kept() + self.stages.iter().map(|s| s.dropped).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(items: Vec<DatasetItem>) -> Self {
        let input_count = items.len();
        Dataset { items, provenance: Provenance { config: None, input_count, stages: Vec::new() } }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter().map(|i| &i.trajectory)
    }

    fn stage(mut self, name: &str, keep: impl FnMut(&DatasetItem) -> bool) -> Dataset {
        let input = self.items.len();
        self.items.retain(keep);
        let kept = self.items.len();
        self.provenance.stages.push(StageCount { stage: name.to_string(), input, kept, dropped: input - kept });
        self
    }
}

/// Keeps items with `T(τ) >= t_min`, preserving order.
pub fn low_step_filter(data: Dataset, t_min: usize) -> Dataset {
    data.stage("low_step", |i| trajectory_steps(&i.trajectory) >= t_min)
}

/// Keeps answered items whose answer matches the gold label or an alias.
pub fn correctness_filter(data: Dataset) -> Dataset {
    data.stage("correctness", |i| {
        i.trajectory.terminated_by == TerminatedBy::Answer
            && answer_matches(&i.trajectory.answer, &i.task.gold_answer, &i.task.gold_aliases)
    })
}

fn dedup_key(item: &DatasetItem, key: DedupKey) -> String {
    let q = normalize_answer(&item.task.question);
    match key {
        DedupKey::Question => q,
        DedupKey::QuestionAnswer => format!("{q}\u{1f}{}", normalize_answer(&item.trajectory.answer)),
    }
}

/// First occurrence of each key wins.
pub fn dedup(data: Dataset, key: DedupKey) -> Dataset {
    let mut seen = HashSet::new();
    data.stage("dedup", |i| seen.insert(dedup_key(i, key)))
}

/// Correctness (when enabled), then the low-step floor, then dedup.
pub fn assemble(raw: Dataset, cfg: &FilterConfig) -> Dataset {
    let mut data = Dataset::new(raw.items);
    data.provenance.config = Some(cfg.clone());
    if cfg.require_correct {
        data = correctness_filter(data);
    }
    data = low_step_filter(data, cfg.t_min);
    dedup(data, cfg.dedup_on)
}

pub fn write_items<W: Write>(items: &[DatasetItem], mut w: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a trajectory file. Blank lines are skipped; in lenient mode
/// malformed lines are returned separately instead of failing the read.
pub fn read_items<R: Read>(r: R, lenient: bool) -> Result<(Vec<DatasetItem>, Vec<DatasetError>), DatasetError> {
    let mut items = Vec::new();
    let mut bad = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<DatasetItem>(&line)
            .map_err(|e| e.to_string())
            .and_then(|i| i.trajectory.validate().map(|_| i));
        match parsed {
            Ok(i) => items.push(i),
            Err(message) => {
                let err = DatasetError::Malformed { line: n + 1, message };
                if !lenient {
                    return Err(err);
                }
                bad.push(err);
            }
        }
    }
    Ok((items, bad))
}
