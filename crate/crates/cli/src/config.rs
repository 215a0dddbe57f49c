//! The pipeline configuration document (TOML). Every section and key is
//! optional; defaults are listed next to each field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seeker_core::agent::{Budget, DEFAULT_CHARS_PER_TOKEN, DEFAULT_MAX_TOOL_CALLS};
use seeker_core::client::{ClientConfig, ClientMode};
use seeker_core::eval::{default_mask_patterns, EvalConfig, JudgeKind};
use seeker_core::filter::FilterConfig;
use seeker_core::graph::{ExpansionConfig, GraphGenSpec};
use seeker_core::prompts;
use seeker_core::synth::DifficultyConfig;
use seeker_core::tools::{ObservationConfig, ToolProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Global seed; every stage derives its own stream from it. Default 0.
    pub seed: u64,
    /// Worker threads for rollout and eval. Default 1.
    pub workers: usize,
    pub paths: PathsConfig,
    pub graph: GraphConfig,
    pub expansion: ExpansionConfig,
    pub synth: SynthConfig,
    pub tools: ToolsConfig,
    pub rollout: RolloutConfig,
    pub filter: FilterConfig,
    pub stats: StatsConfig,
    pub eval: EvalSection,
    pub client: ClientSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 1,
            paths: PathsConfig::default(),
            graph: GraphConfig::default(),
            expansion: ExpansionConfig::default(),
            synth: SynthConfig::default(),
            tools: ToolsConfig::default(),
            rollout: RolloutConfig::default(),
            filter: FilterConfig::default(),
            stats: StatsConfig::default(),
            eval: EvalSection::default(),
            client: ClientSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding every artifact. Default "out".
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Graph JSONL file. When absent, `<out_dir>/graph.jsonl` is used.
    pub source: Option<PathBuf>,
    /// Parameters for `graph-gen` (nodes 200, mean_degree 3.0, ...).
    pub generate: GraphGenSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Template,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of seed nodes to try. Default 50.
    pub seeds: usize,
    /// "template" (default) or "model".
    pub generator: GeneratorKind,
    /// Prompt template for the model generator. Default "synth-v1".
    pub prompt: String,
    /// hop_count 3, obfuscation_level 1, min_hops_required 2.
    pub difficulty: DifficultyConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seeds: 50,
            generator: GeneratorKind::Template,
            prompt: prompts::SYNTH_V1.into(),
            difficulty: DifficultyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolsConfig {
    /// "v2" (default, six tools) or "v1" (search, open, find).
    pub profile: ToolProfile,
    /// snippet_chars 160, observation_cap 4096, default_top_n 10.
    pub observation: ObservationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    OracleDirect,
    OraclePadded,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    /// Default 200.
    pub max_tool_calls: usize,
    /// Character proxy for the context window. Default 1,000,000.
    pub context_chars: usize,
    /// When set, overrides `context_chars` with `context_tokens * chars_per_token`.
    pub context_tokens: Option<usize>,
    /// Default 4.
    pub chars_per_token: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let b = Budget::default();
        BudgetConfig {
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            context_chars: b.context_chars,
            context_tokens: None,
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
        }
    }
}

impl BudgetConfig {
    pub fn budget(&self) -> Budget {
        match self.context_tokens {
            Some(t) => Budget::from_tokens(self.max_tool_calls, t, self.chars_per_token),
            None => Budget { max_tool_calls: self.max_tool_calls, context_chars: self.context_chars },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// "oracle-direct" (default), "oracle-padded" or "model".
    pub policy: PolicyKind,
    /// Extra searches per hop for "oracle-padded". Default 2.
    pub padding: usize,
    /// Prompt template for the model policy. Default "agent-v1".
    pub prompt: String,
    pub budget: BudgetConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            policy: PolicyKind::OracleDirect,
            padding: 2,
            prompt: prompts::AGENT_V1.into(),
            budget: BudgetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Histogram bucket width in tool calls. Default 10.
    pub bucket_width: usize,
    /// Add the published reference means to the comparison. Default true.
    pub include_reference: bool,
    /// Row name for the summarized dataset. Default "dataset".
    pub name: String,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { bucket_width: 10, include_reference: true, name: "dataset".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Benchmark JSONL (id, question, gold, aliases). When absent the
    /// synthesized tasks are evaluated.
    pub benchmark: Option<PathBuf>,
    /// Default: the hugging-face link family.
    pub mask_patterns: Vec<String>,
    /// "normalized-exact" (default) or "model".
    pub judge: JudgeKind,
    /// Default 1.
    pub trials: usize,
    /// Policy under evaluation; same choices as rollout. Default oracle-direct.
    pub policy: PolicyKind,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            benchmark: None,
            mask_patterns: default_mask_patterns(),
            judge: JudgeKind::NormalizedExact,
            trials: 1,
            policy: PolicyKind::OracleDirect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSection {
    /// "replay" (default), "record" or "live".
    pub mode: ClientMode,
    /// Transcript directory. Default "transcripts".
    pub store: PathBuf,
    /// Endpoint, model, retries, temperature, in-flight cap.
    pub endpoint: ClientConfig,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection { mode: ClientMode::Replay, store: PathBuf::from("transcripts"), endpoint: ClientConfig::default() }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Whole-document validation, run before any stage.
    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be >= 1".into());
        }
        let g = &self.graph.generate;
        if g.nodes == 0 {
            return Err("graph.generate.nodes must be >= 1".into());
        }
        if !(g.mean_degree.is_finite() && g.mean_degree >= 0.0) {
            return Err("graph.generate.mean_degree must be a finite non-negative number".into());
        }
        if !(0.0..=1.0).contains(&g.alias_rate) {
            return Err("graph.generate.alias_rate must be within [0, 1]".into());
        }
        if self.expansion.budget == 0 || self.expansion.small_budget == 0 {
            return Err("expansion budgets must be >= 1".into());
        }
        if self.synth.seeds == 0 {
            return Err("synth.seeds must be >= 1".into());
        }
        self.synth.difficulty.validate().map_err(|e| e.to_string())?;
        prompts::builtin(&self.synth.prompt).map_err(|e| format!("synth.prompt: {e}"))?;
        prompts::builtin(&self.rollout.prompt).map_err(|e| format!("rollout.prompt: {e}"))?;
        if self.rollout.budget.chars_per_token == 0 {
            return Err("rollout.budget.chars_per_token must be >= 1".into());
        }
        self.rollout.budget.budget().validate().map_err(|e| e.to_string())?;
        if self.stats.bucket_width == 0 {
            return Err("stats.bucket_width must be >= 1".into());
        }
        self.eval_config().validate().map_err(|e| e.to_string())?;
        self.client.endpoint.validate().map_err(|e| e.to_string())?;
        let o = &self.tools.observation;
        if o.observation_cap == 0 || o.default_top_n == 0 {
            return Err("tools.observation caps must be >= 1".into());
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            mask_patterns: self.eval.mask_patterns.clone(),
            judge: self.eval.judge,
            trials: self.eval.trials,
            budget: self.rollout.budget.budget(),
        }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.graph.source.clone().unwrap_or_else(|| self.out("graph.jsonl"))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}
