//! End-to-end runs: sample a tool subset, plan, synthesize, filter, and
//! evaluate, until a target number of dialogues survives the filter.
//!
//! Every attempt is appended to `attempts.jsonl` in attempt order as soon as
//! it is known, so an interrupted run resumes from the last complete line.
//! The final corpus, filter report and metrics are rewritten from those
//! records at the end of each run.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{load_catalog, LoadMode, ToolCatalog, ToolSpec};
use crate::dialogue::{Dialogue, DialogueStatus, SamplingInfo, SamplingMethod, PIPELINE_VERSION};
use crate::embedding::{embed_catalog, EmbeddingProvider, HttpEmbedder, MockEmbedder, MOCK_DIM};
use crate::filter::{self, FilterReport, Rule, RuleSet, Verdict};
use crate::graph::{self, GraphConfig, GraphError, ToolGraph};
use crate::llm::{ChatBackend, HttpBackendConfig, HttpChatBackend, LlmError, ModelPool, ScriptedBackend};
use crate::metrics::{self, MetricScope, MetricsReport, NliClassifier, NliLabel, RubricConfig};
use crate::mock::{PlantedFault, SimulatedBackend, SimulatedConfig, SIMULATED_MODEL};
use crate::planner::{self, PlanError, PlannerConfig};
use crate::seeds;
use crate::synth::{self, AgentConfig, Agents, SynthesisError};

pub const ATTEMPTS_FILE: &str = "attempts.jsonl";
pub const DATA_FILE: &str = "data.jsonl";
pub const FILTER_REPORT_FILE: &str = "filter_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPH_FILE: &str = "graph.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to resume {dir}: it was produced by config {found}, current config is {expected}")]
    ResumeMismatch { dir: String, found: String, expected: String },
    #[error("stage `{stage}` failed for {ids:?}: {message}")]
    Stage {
        stage: &'static str,
        ids: Vec<String>,
        message: String,
    },
    #[error("attempt cap {cap} reached with {kept} of {target} dialogues kept")]
    AttemptCap { cap: usize, kept: usize, target: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ResumeMismatch { .. } => 1,
            PipelineError::Stage { .. } | PipelineError::Io { .. } => 2,
            PipelineError::AttemptCap { .. } => 3,
        }
    }

    fn stage(stage: &'static str, id: Option<&str>, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage,
            ids: id.map(|i| vec![i.to_string()]).unwrap_or_default(),
            message: message.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Vector width of the mock provider.
    pub dim: usize,
    pub cache: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: EmbeddingKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: None,
            dim: MOCK_DIM,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Off: subsets are drawn uniformly from the whole catalog.
    pub enabled: bool,
    pub tau: f64,
    pub include_pp: bool,
    pub include_pr: bool,
    /// Load this graph instead of building one.
    pub prebuilt: Option<PathBuf>,
}

impl Default for GraphSection {
    fn default() -> Self {
        let g = GraphConfig::default();
        GraphSection {
            enabled: true,
            tau: g.tau,
            include_pp: g.include_pp,
            include_pr: g.include_pr,
            prebuilt: None,
        }
    }
}

impl GraphSection {
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            tau: self.tau,
            include_pp: self.include_pp,
            include_pr: self.include_pr,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSection {
    /// Off: the User agent improvises requests over the subset.
    pub enabled: bool,
    #[serde(flatten)]
    pub config: PlannerConfig,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            enabled: true,
            config: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Simulated,
    Scripted,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    pub http: Option<HttpBackendConfig>,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Faults planted by the simulated backend.
    pub faults: Vec<PlantedFault>,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Simulated,
            script: None,
            http: None,
            api_key_env: None,
            faults: Vec::new(),
        }
    }
}

/// Model ids per role; empty means the backend's default model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPools {
    pub planner: Vec<String>,
    pub user: Vec<String>,
    pub assistant: Vec<String>,
    pub tool: Vec<String>,
    pub judge: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub disable: Vec<Rule>,
}

impl FilterSection {
    pub fn rules(&self) -> RuleSet {
        self.disable.iter().fold(RuleSet::default(), |r, d| r.without(*d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliKind {
    None,
    Lexical,
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub enabled: bool,
    pub stats_include_tool_content: bool,
    pub text_include_tool_content: bool,
    pub distinct_n: usize,
    pub coherence_ss: bool,
    pub nli: NliKind,
    pub nli_labels: Vec<NliLabel>,
    pub nli_endpoint: Option<String>,
    pub lexical_threshold: f64,
    /// Dialogues scored by the judge; 0 skips rubric scoring.
    pub rubric_sample: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            enabled: true,
            stats_include_tool_content: true,
            text_include_tool_content: false,
            distinct_n: 3,
            coherence_ss: true,
            nli: NliKind::Lexical,
            nli_labels: Vec::new(),
            nli_endpoint: None,
            lexical_threshold: 0.2,
            rubric_sample: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Dialogues to keep after filtering.
    pub dialogues: usize,
    /// Synthesis attempts allowed; defaults to twice `dialogues`.
    pub attempt_cap: Option<usize>,
    pub subset_size: usize,
    pub workers: usize,
    pub catalog: PathBuf,
    pub catalog_mode: LoadMode,
    pub output_dir: PathBuf,
    pub embedding: EmbeddingSection,
    pub graph: GraphSection,
    pub planner: PlannerSection,
    pub backend: BackendSection,
    pub models: ModelPools,
    pub agents: AgentConfig,
    pub filter: FilterSection,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            dialogues: 8,
            attempt_cap: None,
            subset_size: 3,
            workers: 4,
            catalog: PathBuf::from("tools.json"),
            catalog_mode: LoadMode::Strict,
            output_dir: PathBuf::from("out"),
            embedding: EmbeddingSection::default(),
            graph: GraphSection::default(),
            planner: PlannerSection::default(),
            backend: BackendSection::default(),
            models: ModelPools::default(),
            agents: AgentConfig::default(),
            filter: FilterSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

fn parse_literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), PipelineError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| PipelineError::Config(format!("bad key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parse a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::load_with_overrides(path, &[])
    }

    /// [`load`](Self::load) with `dotted.key = value` overrides applied
    /// before validation. Values are TOML literals; anything that does not
    /// parse as one is taken as a string.
    pub fn load_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_dotted(&mut table, key, parse_literal(value))?;
        }
        let mut config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.catalog);
        resolve(base, &mut self.output_dir);
        for p in [
            self.embedding.cache.as_mut(),
            self.graph.prebuilt.as_mut(),
            self.backend.script.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn attempt_cap(&self) -> usize {
        self.attempt_cap.unwrap_or(2 * self.dialogues)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.dialogues == 0 {
            return fail("`dialogues` must be at least 1".into());
        }
        if self.attempt_cap() < self.dialogues {
            return fail(format!("attempt_cap {} is below dialogues {}", self.attempt_cap(), self.dialogues));
        }
        if self.subset_size == 0 {
            return fail("`subset_size` must be at least 1".into());
        }
        if !self.catalog.is_file() {
            return fail(format!("catalog {} does not exist", self.catalog.display()));
        }
        if let Some(p) = &self.graph.prebuilt {
            if !p.is_file() {
                return fail(format!("prebuilt graph {} does not exist", p.display()));
            }
        }
        self.graph
            .graph_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let p = &self.planner.config;
        if p.min_items == 0 || p.min_items > p.max_items {
            return fail(format!("planner bounds {}..={} are invalid", p.min_items, p.max_items));
        }
        match self.backend.kind {
            BackendKind::Scripted => match &self.backend.script {
                Some(s) if s.is_file() => {}
                Some(s) => return fail(format!("script {} does not exist", s.display())),
                None => return fail("scripted backend needs `backend.script`".into()),
            },
            BackendKind::Http => {
                if self.backend.http.is_none() {
                    return fail("http backend needs a `[backend.http]` table".into());
                }
                let m = &self.models;
                if [&m.user, &m.assistant, &m.tool].iter().any(|p| p.is_empty()) {
                    return fail("http backend needs model ids for user, assistant and tool".into());
                }
                if self.planner.enabled && m.planner.is_empty() {
                    return fail("http backend needs planner model ids".into());
                }
            }
            BackendKind::Simulated => {}
        }
        let needs_embeddings =
            self.graph.enabled && self.graph.prebuilt.is_none() || self.metrics.enabled && self.metrics.coherence_ss;
        if needs_embeddings && self.embedding.provider == EmbeddingKind::Http && self.embedding.endpoint.is_none() {
            return fail("http embedding provider needs `embedding.endpoint`".into());
        }
        if self.metrics.enabled && self.metrics.nli == NliKind::Http && self.metrics.nli_endpoint.is_none() {
            return fail("http NLI needs `metrics.nli_endpoint`".into());
        }
        if self.metrics.enabled && self.metrics.nli == NliKind::Scripted && self.metrics.nli_labels.is_empty() {
            return fail("scripted NLI needs `metrics.nli_labels`".into());
        }
        Ok(())
    }

    /// Digest over everything that affects outputs; worker count and
    /// output location are excluded.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(o) = &mut v {
            o.remove("workers");
            o.remove("output_dir");
        }
        crate::canonical::sha256_hex(crate::canonical::to_canonical_string(&v).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub graph: bool,
    pub plan: bool,
}

impl Switches {
    pub const MATRIX: [Switches; 4] = [
        Switches { graph: true, plan: true },
        Switches { graph: true, plan: false },
        Switches { graph: false, plan: true },
        Switches { graph: false, plan: false },
    ];

    pub fn label(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!("graph-{}_plan-{}", on(self.graph), on(self.plan))
    }
}

/// One synthesis attempt as persisted in `attempts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<Dialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Why no dialogue was produced (sampling or planning gave up).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AttemptRecord {
    pub fn kept(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.kept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    AttemptCap,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub sampled: usize,
    pub planned: usize,
    pub synthesized: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub attempt: usize,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<DialogueStatus>,
    pub kept: bool,
    pub rules: Vec<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub pipeline_version: String,
    pub config_digest: String,
    pub status: RunStatus,
    pub switches: Switches,
    pub target: usize,
    pub attempt_cap: usize,
    pub attempts: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Attempts already on disk when this run started.
    pub resumed_from: usize,
    pub stages: StageCounts,
    pub dialogues: Vec<DialogueEntry>,
    /// Seconds per phase of the latest invocation.
    pub wall_secs: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunManifest {
    fn new(config: &PipelineConfig, digest: String) -> Self {
        RunManifest {
            pipeline_version: PIPELINE_VERSION.to_string(),
            config_digest: digest,
            status: RunStatus::Running,
            switches: Switches {
                graph: config.graph.enabled,
                plan: config.planner.enabled,
            },
            target: config.dialogues,
            attempt_cap: config.attempt_cap(),
            attempts: 0,
            kept: 0,
            dropped: 0,
            resumed_from: 0,
            stages: StageCounts::default(),
            dialogues: Vec::new(),
            wall_secs: BTreeMap::new(),
            failure: None,
        }
    }

    fn tally(&mut self, records: &[AttemptRecord]) {
        self.attempts = records.len();
        self.kept = records.iter().filter(|r| r.kept()).count();
        self.dropped = self.attempts - self.kept;
        self.stages = StageCounts {
            sampled: records
                .iter()
                .filter(|r| !r.error.as_deref().is_some_and(|e| e.starts_with("sampling")))
                .count(),
            planned: records.iter().filter(|r| r.dialogue.as_ref().is_some_and(|d| d.plan.is_some())).count(),
            synthesized: records.iter().filter(|r| r.dialogue.is_some()).count(),
            kept: self.kept,
        };
        self.dialogues = records
            .iter()
            .map(|r| DialogueEntry {
                attempt: r.attempt,
                id: r.id.clone(),
                status: r.dialogue.as_ref().map(|d| d.status),
                kept: r.kept(),
                rules: r
                    .verdict
                    .as_ref()
                    .map(|v| v.reasons.iter().map(|(rule, _)| *rule).collect())
                    .unwrap_or_default(),
                error: r.error.clone(),
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("manifest serializes")
    }
}

/// Build the role pools for `config.backend`.
pub struct Backends {
    pub planner: ModelPool,
    pub user: ModelPool,
    pub assistant: ModelPool,
    pub tool: ModelPool,
    pub judge: ModelPool,
    /// Scripted replies are consumed in call order, so they force one worker.
    pub sequential: bool,
}

impl Backends {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let b = &config.backend;
        let m = &config.models;
        match b.kind {
            BackendKind::Simulated => {
                let pool = |ids: &[String]| -> ModelPool {
                    let ids = if ids.is_empty() { vec![SIMULATED_MODEL.to_string()] } else { ids.to_vec() };
                    let backends: Vec<Arc<dyn ChatBackend>> = ids
                        .into_iter()
                        .map(|model| {
                            Arc::new(SimulatedBackend::new(SimulatedConfig {
                                model,
                                faults: b.faults.clone(),
                            })) as Arc<dyn ChatBackend>
                        })
                        .collect();
                    ModelPool::new(backends).expect("pool is non-empty")
                };
                Ok(Backends {
                    planner: pool(&m.planner),
                    user: pool(&m.user),
                    assistant: pool(&m.assistant),
                    tool: pool(&m.tool),
                    judge: pool(&m.judge),
                    sequential: false,
                })
            }
            BackendKind::Scripted => {
                let path = b.script.as_ref().ok_or_else(|| PipelineError::Config("missing backend.script".into()))?;
                let backend: Arc<dyn ChatBackend> =
                    Arc::new(ScriptedBackend::load(path).map_err(|e| PipelineError::Config(e.to_string()))?);
                let pool = ModelPool::single(backend);
                Ok(Backends {
                    planner: pool.clone(),
                    user: pool.clone(),
                    assistant: pool.clone(),
                    tool: pool.clone(),
                    judge: pool,
                    sequential: true,
                })
            }
            BackendKind::Http => {
                let mut http = b
                    .http
                    .clone()
                    .ok_or_else(|| PipelineError::Config("missing [backend.http]".into()))?;
                if let Some(var) = &b.api_key_env {
                    http.api_key = std::env::var(var).ok();
                }
                let pool = |ids: &[String]| -> Result<ModelPool, PipelineError> {
                    let backends = ids
                        .iter()
                        .map(|id| {
                            HttpChatBackend::new(http.clone(), id.clone())
                                .map(|h| Arc::new(h) as Arc<dyn ChatBackend>)
                                .map_err(|e| PipelineError::Config(e.to_string()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    ModelPool::new(backends).map_err(|e| PipelineError::Config(e.to_string()))
                };
                let judge = if m.judge.is_empty() { &m.assistant } else { &m.judge };
                let planner = if m.planner.is_empty() { &m.assistant } else { &m.planner };
                Ok(Backends {
                    planner: pool(planner)?,
                    user: pool(&m.user)?,
                    assistant: pool(&m.assistant)?,
                    tool: pool(&m.tool)?,
                    judge: pool(judge)?,
                    sequential: false,
                })
            }
        }
    }
}

pub fn embedding_provider(section: &EmbeddingSection) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    Ok(match section.provider {
        EmbeddingKind::Mock => Box::new(MockEmbedder::new(section.dim)),
        EmbeddingKind::Http => {
            let endpoint = section
                .endpoint
                .clone()
                .ok_or_else(|| PipelineError::Config("missing embedding.endpoint".into()))?;
            let key = section.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
            let model = section.model.clone().unwrap_or_else(|| "text-embedding".into());
            Box::new(HttpEmbedder::new(endpoint, model, key).map_err(|e| PipelineError::Config(e.to_string()))?)
        }
    })
}

pub fn nli_classifier(section: &MetricsSection) -> Result<Option<Box<dyn NliClassifier>>, PipelineError> {
    Ok(match section.nli {
        NliKind::None => None,
        NliKind::Lexical => Some(Box::new(metrics::LexicalNli {
            threshold: section.lexical_threshold,
        })),
        NliKind::Scripted => Some(Box::new(metrics::ScriptedNli::new(section.nli_labels.clone()))),
        NliKind::Http => {
            let endpoint = section
                .nli_endpoint
                .clone()
                .ok_or_else(|| PipelineError::Config("missing metrics.nli_endpoint".into()))?;
            Some(Box::new(metrics::HttpNli::new(endpoint).map_err(|e| PipelineError::Config(e.to_string()))?))
        }
    })
}

/// Every metric the config asks for over `dialogues`. A metric that cannot
/// be computed (for example no turn pairs) is left empty.
pub async fn compute_metrics(
    dialogues: &[Dialogue],
    section: &MetricsSection,
    provider: Option<&dyn EmbeddingProvider>,
    judge: Option<&dyn ChatBackend>,
    seed: u64,
) -> Result<MetricsReport, PipelineError> {
    let stats_scope = MetricScope {
        include_tool_content: section.stats_include_tool_content,
    };
    let text_scope = MetricScope {
        include_tool_content: section.text_include_tool_content,
    };
    let stats = metrics::corpus_stats(dialogues, stats_scope);
    let mut report = MetricsReport {
        dialogues: dialogues.len(),
        n_tokens: stats.n_tokens,
        n_calls: stats.n_calls,
        n_call_turns: stats.n_call_turns,
        entropy_h: metrics::shannon_entropy(dialogues, text_scope).ok(),
        distinct_3: metrics::distinct_n(dialogues, section.distinct_n, text_scope).ok(),
        stats_scope: Some(stats_scope),
        text_scope: Some(text_scope),
        ..MetricsReport::default()
    };
    if let (true, Some(p)) = (section.coherence_ss, provider) {
        match metrics::coherence_ss(dialogues, p, text_scope).await {
            Ok(v) => report.ss_mean = Some(v),
            Err(metrics::MetricsError::NoPairs) => {}
            Err(e) => return Err(PipelineError::stage("metrics", None, e)),
        }
    }
    if let Some(nli) = nli_classifier(section)? {
        match metrics::nli_breakdown(dialogues, nli.as_ref(), text_scope, 4).await {
            Ok(b) => {
                report.enr_ratio = Some(b.enr());
                report.nli = Some(b);
            }
            Err(metrics::MetricsError::NoPairs) => {}
            Err(e) => return Err(PipelineError::stage("metrics", None, e)),
        }
    }
    if let (n @ 1.., Some(judge)) = (section.rubric_sample, judge) {
        let n = n.min(dialogues.len());
        let r = metrics::rubric_eval(dialogues, judge, n, seeds::derive(seed, &[5]), &RubricConfig::default())
            .await
            .map_err(|e| PipelineError::stage("metrics", None, e))?;
        report.rubric = Some(r);
    }
    Ok(report)
}

struct Run<'a> {
    config: &'a PipelineConfig,
    catalog: &'a ToolCatalog,
    graph: Option<&'a ToolGraph>,
    backends: &'a Backends,
    rules: RuleSet,
}

fn is_transport(e: &LlmError) -> bool {
    !e.is_output_error() && !matches!(e, LlmError::NoScriptMatch(_) | LlmError::Script(_))
}

pub fn dialogue_id(attempt: usize) -> String {
    format!("dlg-{attempt:06}")
}

impl Run<'_> {
    async fn attempt(&self, attempt: usize) -> Result<AttemptRecord, PipelineError> {
        let id = dialogue_id(attempt);
        let seed = seeds::derive(self.config.seed, &[attempt as u64]);
        let mut record = AttemptRecord {
            attempt,
            id: id.clone(),
            seed,
            dialogue: None,
            verdict: None,
            error: None,
        };

        let sample_seed = seeds::derive(seed, &[1]);
        let n = self.config.subset_size;
        let (method, nodes) = match self.graph {
            Some(g) => (SamplingMethod::GraphWalk, graph::sample_subset(g, n, sample_seed)),
            None => (SamplingMethod::Uniform, graph::uniform_subset(self.catalog.len(), n, sample_seed)),
        };
        let nodes = match nodes {
            Ok(nodes) => nodes,
            Err(e @ GraphError::ComponentTooSmall { .. }) => {
                record.error = Some(format!("sampling: {e}"));
                return Ok(record);
            }
            Err(e) => return Err(PipelineError::stage("sample", Some(&id), e)),
        };
        let tools: Vec<ToolSpec> = nodes.iter().map(|&i| self.catalog.tools[i].clone()).collect();

        let role_seed = |role: u64| seeds::derive(seed, &[4, role]);
        let plan = if self.config.planner.enabled {
            let backend = self.backends.planner.pick(role_seed(0));
            let mut cfg = self.config.planner.config.clone();
            cfg.params.user = Some(id.clone());
            match planner::generate_plan(&tools, backend.as_ref(), &cfg, seeds::derive(seed, &[2])).await {
                Ok(p) => Some(p),
                Err(PlanError::Backend(e)) if is_transport(&e) => {
                    return Err(PipelineError::stage("plan", Some(&id), e));
                }
                Err(e) => {
                    record.error = Some(format!("plan: {e}"));
                    return Ok(record);
                }
            }
        } else {
            None
        };

        let agents = Agents {
            user: self.backends.user.pick(role_seed(1)),
            assistant: self.backends.assistant.pick(role_seed(2)),
            tool: self.backends.tool.pick(role_seed(3)),
        };
        let (mut dialogue, error) = synth::synthesize_detailed(
            &id,
            plan.as_ref(),
            &tools,
            &agents,
            &self.config.agents,
            seeds::derive(seed, &[3]),
        )
        .await;
        if let Some(SynthesisError::Backend(e)) = &error {
            if is_transport(e) {
                return Err(PipelineError::stage("synthesize", Some(&id), e));
            }
        }
        dialogue.provenance.sampling = Some(SamplingInfo {
            method,
            nodes,
            seed: sample_seed,
        });
        record.verdict = Some(filter::verdict(&dialogue, &self.rules));
        record.dialogue = Some(dialogue);
        Ok(record)
    }
}

/// Read durable attempt records, dropping a torn final line.
pub fn read_attempts(path: &Path) -> Result<Vec<AttemptRecord>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut text = fs::read_to_string(path).map_err(io_err(path))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
    }
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<AttemptRecord>(l).map_err(|e| {
                PipelineError::Config(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    write_atomic(&dir.join(MANIFEST_FILE), &(manifest.to_json() + "\n"))
}

/// Load or build the tool graph and store a copy next to the outputs.
async fn prepare_graph(
    config: &PipelineConfig,
    catalog: &ToolCatalog,
    provider: Option<&dyn EmbeddingProvider>,
    out: &Path,
) -> Result<ToolGraph, PipelineError> {
    let graph = match &config.graph.prebuilt {
        Some(p) => graph::load_graph(p, Some(&catalog.digest()), false).map_err(|e| PipelineError::Config(e.to_string()))?,
        None => {
            let provider = provider.ok_or_else(|| PipelineError::Config("graph needs an embedding provider".into()))?;
            let store = embed_catalog(catalog, provider, config.embedding.cache.as_deref())
                .await
                .map_err(|e| PipelineError::stage("embed", None, e))?;
            graph::build_graph(catalog, &store, &config.graph.graph_config())
                .map_err(|e| PipelineError::stage("graph", None, e))?
        }
    };
    graph::save_graph(&graph, &out.join(GRAPH_FILE)).map_err(|e| PipelineError::stage("graph", None, e))?;
    Ok(graph)
}

/// Run until `config.dialogues` dialogues pass the filter or the attempt cap
/// is reached. Resumes from `attempts.jsonl` when the output directory holds
/// a run of the same config.
pub async fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let digest = config.digest();
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let found = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v.get("config_digest").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_default();
        if found != digest {
            return Err(PipelineError::ResumeMismatch {
                dir: out.display().to_string(),
                found,
                expected: digest,
            });
        }
    }
    let attempts_path = out.join(ATTEMPTS_FILE);
    let mut records = read_attempts(&attempts_path)?;
    let mut manifest = RunManifest::new(config, digest);
    manifest.resumed_from = records.len();
    manifest.tally(&records);
    write_manifest(&out, &manifest)?;

    let catalog = load_catalog(&config.catalog, config.catalog_mode).map_err(|e| PipelineError::Config(e.to_string()))?;
    if config.subset_size > catalog.len() {
        return Err(PipelineError::Config(format!(
            "subset_size {} exceeds catalog size {}",
            config.subset_size,
            catalog.len()
        )));
    }
    let needs_provider =
        config.graph.enabled && config.graph.prebuilt.is_none() || config.metrics.enabled && config.metrics.coherence_ss;
    let provider = if needs_provider {
        Some(embedding_provider(&config.embedding)?)
    } else {
        None
    };
    let backends = Backends::from_config(config)?;

    let t = Instant::now();
    let graph = if config.graph.enabled {
        Some(prepare_graph(config, &catalog, provider.as_deref(), &out).await?)
    } else {
        None
    };
    manifest.wall_secs.insert("graph".into(), t.elapsed().as_secs_f64());

    let run = Run {
        config,
        catalog: &catalog,
        graph: graph.as_ref(),
        backends: &backends,
        rules: config.filter.rules(),
    };
    let target = config.dialogues;
    let cap = config.attempt_cap();
    let workers = if backends.sequential { 1 } else { config.workers.max(1) };

    let t = Instant::now();
    let mut kept = records.iter().filter(|r| r.kept()).count();
    let mut stage_error = None;
    if kept < target && records.len() < cap {
        let mut sink = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&attempts_path)
            .map_err(io_err(&attempts_path))?;
        let mut results = stream::iter(records.len()..cap).map(|i| run.attempt(i)).buffered(workers);
        while let Some(result) = results.next().await {
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    stage_error = Some(e);
                    break;
                }
            };
            append_line(&mut sink, &attempts_path, &serde_json::to_string(&record).expect("record serializes"))?;
            tracing::info!(id = %record.id, kept = record.kept(), "attempt recorded");
            kept += usize::from(record.kept());
            records.push(record);
            if kept >= target {
                break;
            }
        }
    }
    manifest.wall_secs.insert("synthesis".into(), t.elapsed().as_secs_f64());
    manifest.tally(&records);

    if let Some(e) = stage_error {
        manifest.status = RunStatus::Failed;
        manifest.failure = Some(e.to_string());
        write_manifest(&out, &manifest)?;
        return Err(e);
    }

    let t = Instant::now();
    let kept_dialogues: Vec<Dialogue> = records
        .iter()
        .filter(|r| r.kept())
        .filter_map(|r| r.dialogue.clone())
        .collect();
    let mut data = String::new();
    for d in &kept_dialogues {
        data.push_str(&d.to_json_line());
        data.push('\n');
    }
    write_atomic(&out.join(DATA_FILE), &data)?;
    let mut report = FilterReport::default();
    for v in records.iter().filter_map(|r| r.verdict.clone()) {
        report.record(v);
    }
    write_atomic(&out.join(FILTER_REPORT_FILE), &(report.to_json() + "\n"))?;

    if config.metrics.enabled {
        let judge = backends.judge.pick(seeds::derive(config.seed, &[6]));
        let metrics = compute_metrics(
            &kept_dialogues,
            &config.metrics,
            provider.as_deref(),
            Some(judge.as_ref()),
            config.seed,
        )
        .await;
        match metrics {
            Ok(m) => write_atomic(&out.join(METRICS_FILE), &(m.to_json() + "\n"))?,
            Err(e) => {
                manifest.status = RunStatus::Failed;
                manifest.failure = Some(e.to_string());
                write_manifest(&out, &manifest)?;
                return Err(e);
            }
        }
    }
    manifest.wall_secs.insert("evaluate".into(), t.elapsed().as_secs_f64());
    manifest.wall_secs.insert("total".into(), started.elapsed().as_secs_f64());

    if kept < target {
        manifest.status = RunStatus::AttemptCap;
        let e = PipelineError::AttemptCap { cap, kept, target };
        manifest.failure = Some(e.to_string());
        write_manifest(&out, &manifest)?;
        return Err(e);
    }
    manifest.status = RunStatus::Complete;
    write_manifest(&out, &manifest)?;
    Ok(manifest)
}

fn append_line(sink: &mut File, path: &Path, line: &str) -> Result<(), PipelineError> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    sink.write_all(&buf).map_err(io_err(path))?;
    sink.sync_data().map_err(io_err(path))
}

/// The config for one cell of the graph × plan ablation: switches applied
/// and outputs placed in a subdirectory named after them.
pub fn ablation_config(config: &PipelineConfig, switches: Switches) -> PipelineConfig {
    let mut c = config.clone();
    c.graph.enabled = switches.graph;
    c.planner.enabled = switches.plan;
    c.output_dir = config.output_dir.join(switches.label());
    c
}

pub async fn ablate(config: &PipelineConfig, switches: Switches) -> Result<RunManifest, PipelineError> {
    run_pipeline(&ablation_config(config, switches)).await
}
