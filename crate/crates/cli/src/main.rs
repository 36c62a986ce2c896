use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use toolflow_core::catalog::{self, EnrichOptions, LoadMode, ToolCatalog, ToolSpec};
use toolflow_core::dialogue::Dialogue;
use toolflow_core::embedding::{self, EmbeddingCache, EmbeddingProvider};
use toolflow_core::filter::{self, Rule, RuleSet};
use toolflow_core::graph::{self, GraphConfig};
use toolflow_core::llm::{ChatBackend, HttpBackendConfig, HttpChatBackend, ScriptedBackend};
use toolflow_core::metrics::{self, MetricScope, NliLabel, RubricConfig};
use toolflow_core::mock::{SimulatedBackend, SimulatedConfig, SIMULATED_MODEL};
use toolflow_core::overlap;
use toolflow_core::pipeline::{self, EmbeddingKind, EmbeddingSection, PipelineConfig, PipelineError, Switches};
use toolflow_core::planner::{self, DialoguePlan, PlannerConfig};
use toolflow_core::synth::{self, AgentConfig, Agents};

/// Exit codes: 0 success, 1 bad input or config, 2 stage failure, 3 attempt cap.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn stage(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> CliResult<T> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn stage(self) -> CliResult<T> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

#[derive(Parser)]
#[command(name = "toolflow", version, about = "Synthesize and evaluate multi-turn tool-calling dialogues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate or enrich a tool catalog.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Embed every parameter and return value of a catalog into a cache.
    Embed {
        #[arg(long)]
        catalog: PathBuf,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
    /// Build a tool graph or sample subsets from one.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Generate a dialogue plan for a tool subset.
    Plan {
        #[arg(long)]
        catalog: PathBuf,
        /// Comma-separated tool names.
        #[arg(long, value_delimiter = ',')]
        tools: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        min_items: usize,
        #[arg(long, default_value_t = 8)]
        max_items: usize,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Synthesize one dialogue over a tool subset.
    Synthesize {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tools: Vec<String>,
        /// Plan JSON as printed by `plan`; without it the user improvises.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value = "dlg-000000")]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        turn_limit: usize,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Drop dialogues that fail the quality rules.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Rules to switch off, e.g. R4.
        #[arg(long)]
        disable: Vec<Rule>,
    },
    /// Corpus statistics and quality metrics.
    Eval(EvalArgs),
    /// Train/test tool leakage checks.
    Overlap(OverlapArgs),
    /// Run the whole pipeline from a config file.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one or all cells of the graph × plan ablation.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        graph: Option<OnOff>,
        #[arg(long, value_enum)]
        plan: Option<OnOff>,
        /// Run all four cells.
        #[arg(long, conflicts_with_all = ["graph", "plan"])]
        matrix: bool,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Check a catalog for missing fields and print its digest.
    Validate {
        #[arg(long)]
        catalog: PathBuf,
        /// Accept missing descriptions (they are listed instead).
        #[arg(long)]
        lenient: bool,
    },
    /// Fill missing descriptions with a chat model.
    Enrich {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Build the tool graph and write it to a file.
    Build {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.82)]
        tau: f64,
        #[arg(long)]
        no_pp: bool,
        #[arg(long)]
        no_pr: bool,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
    /// Draw seeded tool subsets from a saved graph.
    Sample {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of subsets; subset i uses seed + i.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Sample uniformly instead of walking the graph.
        #[arg(long)]
        uniform: bool,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    cmd: EvalCmd,
    /// Also write the JSON result here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[command(subcommand)]
    cmd: OverlapCmd,
    /// Also write the JSON report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Token, call and call-turn counts.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Count only user and assistant text.
        #[arg(long)]
        dialogue_only: bool,
    },
    /// Shannon entropy of the word distribution, in bits.
    Entropy {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        include_tool_content: bool,
    },
    /// Share of unique n-grams.
    Distinct {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        include_tool_content: bool,
    },
    /// Turn-pair coherence: embedding similarity or entailment ratio.
    Coherence {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CoherenceMethod::Enr)]
        method: CoherenceMethod,
        #[arg(long, value_enum, default_value_t = NliChoice::Lexical)]
        nli: NliChoice,
        #[arg(long)]
        nli_endpoint: Option<String>,
        /// Label sequence for the scripted classifier, e.g. E,N,E,C.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        include_tool_content: bool,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
    /// Score a seeded sample of dialogues with a judge model.
    Rubric {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Pearson correlation of two comma-separated number lists.
    Pearson {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum OverlapCmd {
    /// Flag test tools that share long token runs with training data.
    Ngram {
        /// Training corpus, dialogue JSONL.
        #[arg(long)]
        train: PathBuf,
        /// Test tool catalog.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = overlap::DEFAULT_MIN_NGRAM)]
        min_len: usize,
        #[arg(long, default_value_t = overlap::DEFAULT_TOOL_THRESHOLD)]
        tool_threshold: f64,
    },
    /// Flag test tools whose embeddings nearly match a training tool.
    Sim {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = overlap::DEFAULT_SIM_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        embedding: EmbeddingArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoherenceMethod {
    Ss,
    Enr,
}

#[derive(Clone, Copy, ValueEnum)]
enum NliChoice {
    Lexical,
    Scripted,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Simulated,
    Scripted,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendChoice::Simulated)]
    backend: BackendChoice,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "TOOLFLOW_API_KEY")]
    api_key_env: String,
}

impl BackendArgs {
    fn build(&self) -> CliResult<Arc<dyn ChatBackend>> {
        Ok(match self.backend {
            BackendChoice::Simulated => Arc::new(SimulatedBackend::new(SimulatedConfig {
                model: self.model.clone().unwrap_or_else(|| SIMULATED_MODEL.into()),
                faults: Vec::new(),
            })),
            BackendChoice::Scripted => {
                let path = self.script.as_ref().ok_or_else(|| input_error("--script is required"))?;
                Arc::new(ScriptedBackend::load(path).input()?)
            }
            BackendChoice::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| input_error("--endpoint is required"))?;
                let model = self.model.clone().ok_or_else(|| input_error("--model is required"))?;
                let mut config = HttpBackendConfig::new(endpoint);
                config.api_key = std::env::var(&self.api_key_env).ok();
                Arc::new(HttpChatBackend::new(config, model).input()?)
            }
        })
    }
}

#[derive(Args)]
struct EmbeddingArgs {
    #[arg(long, value_enum, default_value_t = ProviderChoice::Mock)]
    provider: ProviderChoice,
    #[arg(long = "embedding-endpoint")]
    embedding_endpoint: Option<String>,
    #[arg(long = "embedding-model")]
    embedding_model: Option<String>,
    #[arg(long = "embedding-key-env")]
    embedding_key_env: Option<String>,
    #[arg(long, default_value_t = embedding::MOCK_DIM)]
    dim: usize,
    /// JSONL embedding cache, created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderChoice {
    Mock,
    Http,
}

impl EmbeddingArgs {
    fn provider(&self) -> CliResult<Box<dyn EmbeddingProvider>> {
        Ok(pipeline::embedding_provider(&EmbeddingSection {
            provider: match self.provider {
                ProviderChoice::Mock => EmbeddingKind::Mock,
                ProviderChoice::Http => EmbeddingKind::Http,
            },
            endpoint: self.embedding_endpoint.clone(),
            model: self.embedding_model.clone(),
            api_key_env: self.embedding_key_env.clone(),
            dim: self.dim,
            cache: self.cache.clone(),
        })?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Target number of kept dialogues.
    #[arg(long)]
    dialogues: Option<usize>,
    #[arg(long)]
    attempt_cap: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set graph.tau=0.9`.
    #[arg(long = "set", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

impl RunArgs {
    fn load(&self) -> CliResult<PipelineConfig> {
        let mut overrides = self.set.clone();
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("dialogues", self.dialogues.map(|v| v.to_string()));
        flag("attempt_cap", self.attempt_cap.map(|v| v.to_string()));
        flag("workers", self.workers.map(|v| v.to_string()));
        let mut config = PipelineConfig::load_with_overrides(&self.config, &overrides)?;
        if let Some(dir) = &self.output_dir {
            // Relative to the working directory, unlike paths in the file.
            config.output_dir = dir.clone();
        }
        Ok(config)
    }
}

fn input_error(msg: &str) -> Failure {
    Failure {
        code: 1,
        error: anyhow::anyhow!(msg.to_string()),
    }
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    let mut out = std::io::stdout().lock();
    // A closed pipe (`| head`) is not an error worth a panic.
    let _ = writeln!(out, "{text}").and_then(|()| out.flush());
}

fn read_dialogues(path: &Path) -> CliResult<Vec<Dialogue>> {
    overlap::read_corpus(path).input()
}

fn subset(catalog: &ToolCatalog, names: &[String]) -> CliResult<Vec<ToolSpec>> {
    if names.is_empty() {
        return Err(input_error("--tools is empty"));
    }
    names
        .iter()
        .map(|n| {
            catalog
                .index_of(n)
                .map(|i| catalog.tools[i].clone())
                .ok_or_else(|| input_error(&format!("tool `{n}` is not in the catalog")))
        })
        .collect()
}

fn parse_label(s: &str) -> CliResult<NliLabel> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "e" | "entailment" => NliLabel::Entailment,
        "n" | "neutral" => NliLabel::Neutral,
        "c" | "contradiction" => NliLabel::Contradiction,
        other => return Err(input_error(&format!("unknown NLI label `{other}`"))),
    })
}

fn scope(include_tool_content: bool) -> MetricScope {
    MetricScope { include_tool_content }
}

async fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Catalog(CatalogCmd::Validate { catalog, lenient }) => {
            let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
            let c = catalog::load_catalog(&catalog, mode).input()?;
            let flagged: Vec<String> = c
                .flagged
                .iter()
                .map(|f| format!("{}: {}", c.tools[f.tool_index()].name, f.label()))
                .collect();
            print_json(&json!({"tools": c.len(), "digest": c.digest(), "missing_descriptions": flagged}));
        }
        Command::Catalog(CatalogCmd::Enrich { catalog, out, backend }) => {
            let c = catalog::load_catalog(&catalog, LoadMode::Lenient).input()?;
            let backend = backend.build()?;
            let enriched = catalog::enrich_catalog(&c, backend.as_ref(), &EnrichOptions::default())
                .await
                .stage()?;
            catalog::save_catalog(&enriched, &out).stage()?;
            eprintln!("filled {} descriptions", c.flagged.len());
        }
        Command::Embed { catalog, embedding } => {
            let c = catalog::load_catalog(&catalog, LoadMode::Lenient).input()?;
            let cache = embedding.cache.clone().ok_or_else(|| input_error("--cache is required"))?;
            let provider = embedding.provider()?;
            let store = embedding::embed_catalog(&c, provider.as_ref(), Some(&cache)).await.stage()?;
            let cached = EmbeddingCache::open(&cache).stage()?;
            print_json(&json!({"keys": store.len(), "distinct_texts": store.distinct_texts(), "cache_entries": cached.len()}));
        }
        Command::Graph(GraphCmd::Build {
            catalog,
            out,
            tau,
            no_pp,
            no_pr,
            embedding,
        }) => {
            let c = catalog::load_catalog(&catalog, LoadMode::Strict).input()?;
            let config = GraphConfig {
                tau,
                include_pp: !no_pp,
                include_pr: !no_pr,
            };
            config.validate().input()?;
            let provider = embedding.provider()?;
            let store = embedding::embed_catalog(&c, provider.as_ref(), embedding.cache.as_deref())
                .await
                .stage()?;
            let g = graph::build_graph(&c, &store, &config).stage()?;
            graph::save_graph(&g, &out).stage()?;
            let isolated = (0..g.n_nodes()).filter(|&i| g.degree(i) == 0).count();
            print_json(&json!({"nodes": g.n_nodes(), "edges": g.edges().len(), "isolated": isolated}));
        }
        Command::Graph(GraphCmd::Sample {
            graph: graph_path,
            catalog,
            n,
            seed,
            count,
            uniform,
        }) => {
            let c = catalog::load_catalog(&catalog, LoadMode::Lenient).input()?;
            let g = graph::load_graph(&graph_path, Some(&c.digest()), false).input()?;
            for k in 0..count {
                let s = seed.wrapping_add(k);
                let nodes = if uniform {
                    graph::uniform_subset(g.n_nodes(), n, s)
                } else {
                    graph::sample_subset(&g, n, s)
                }
                .stage()?;
                let names: Vec<&str> = nodes.iter().map(|&i| c.tools[i].name.as_str()).collect();
                println!("{}", json!({"seed": s, "nodes": nodes, "tools": names}));
            }
        }
        Command::Plan {
            catalog,
            tools,
            seed,
            min_items,
            max_items,
            backend,
        } => {
            let c = catalog::load_catalog(&catalog, LoadMode::Lenient).input()?;
            let subset = subset(&c, &tools)?;
            let backend = backend.build()?;
            let config = PlannerConfig {
                min_items,
                max_items,
                ..PlannerConfig::default()
            };
            let plan = planner::generate_plan(&subset, backend.as_ref(), &config, seed).await.stage()?;
            print_json(&plan);
        }
        Command::Synthesize {
            catalog,
            tools,
            plan,
            id,
            seed,
            turn_limit,
            backend,
        } => {
            let c = catalog::load_catalog(&catalog, LoadMode::Lenient).input()?;
            let subset = subset(&c, &tools)?;
            let plan: Option<DialoguePlan> = match plan {
                Some(p) => Some(serde_json::from_str(&fs::read_to_string(&p).input()?).input()?),
                None => None,
            };
            let agents = Agents::uniform(backend.build()?);
            let config = AgentConfig {
                turn_limit,
                ..AgentConfig::default()
            };
            let d = synth::synthesize(&id, plan.as_ref(), &subset, &agents, &config, seed).await;
            println!("{}", d.to_json_line());
        }
        Command::Filter {
            input,
            out,
            report,
            disable,
        } => {
            let rules = disable.iter().fold(RuleSet::default(), |r, d| r.without(*d));
            let text = fs::read_to_string(&input).input()?;
            let (kept, rep) = filter::filter_lines(text.lines(), &rules);
            let mut body = kept.join("\n");
            if !body.is_empty() {
                body.push('\n');
            }
            fs::write(&out, body).stage()?;
            if let Some(r) = report {
                fs::write(&r, rep.to_json() + "\n").stage()?;
            }
            eprintln!("kept {} dropped {}", rep.kept, rep.dropped);
        }
        Command::Eval(args) => {
            let value = eval(args.cmd).await?;
            emit(&value, args.report.as_deref())?;
        }
        Command::Overlap(args) => {
            let report = match args.cmd {
                OverlapCmd::Ngram {
                    train,
                    test,
                    min_len,
                    tool_threshold,
                } => {
                    let corpus = read_dialogues(&train)?;
                    let tools = catalog::load_catalog(&test, LoadMode::Lenient).input()?;
                    overlap::ngram_overlap(&corpus, &tools, min_len, tool_threshold).input()?
                }
                OverlapCmd::Sim {
                    train,
                    test,
                    threshold,
                    embedding,
                } => {
                    let train = catalog::load_catalog(&train, LoadMode::Lenient).input()?;
                    let test = catalog::load_catalog(&test, LoadMode::Lenient).input()?;
                    let provider = embedding.provider()?;
                    overlap::similarity_overlap(&train, &test, provider.as_ref(), threshold)
                        .await
                        .stage()?
                }
            };
            emit(&serde_json::to_value(&report).expect("report serializes"), args.report.as_deref())?;
        }
        Command::Run { run } => {
            let config = run.load()?;
            let m = pipeline::run_pipeline(&config).await?;
            eprintln!("kept {} of {} attempts -> {}", m.kept, m.attempts, config.output_dir.display());
        }
        Command::Ablate {
            run,
            graph,
            plan,
            matrix,
        } => {
            let config = run.load()?;
            let cells: Vec<Switches> = if matrix {
                Switches::MATRIX.to_vec()
            } else {
                vec![Switches {
                    graph: !matches!(graph, Some(OnOff::Off)),
                    plan: !matches!(plan, Some(OnOff::Off)),
                }]
            };
            for s in cells {
                let m = pipeline::ablate(&config, s).await?;
                eprintln!("{}: kept {} of {} attempts", s.label(), m.kept, m.attempts);
            }
        }
    }
    Ok(())
}

fn emit(value: &Value, report: Option<&Path>) -> CliResult {
    print_json(value);
    if let Some(path) = report {
        fs::write(path, serde_json::to_string_pretty(value).expect("value serializes") + "\n").stage()?;
    }
    Ok(())
}

async fn eval(cmd: EvalCmd) -> CliResult<Value> {
    Ok(match cmd {
        EvalCmd::Stats { input, dialogue_only } => {
            let ds = read_dialogues(&input)?;
            serde_json::to_value(metrics::corpus_stats(&ds, scope(!dialogue_only))).expect("stats serialize")
        }
        EvalCmd::Entropy {
            input,
            include_tool_content,
        } => {
            let ds = read_dialogues(&input)?;
            let h = metrics::shannon_entropy(&ds, scope(include_tool_content)).input()?;
            json!({ "entropy_h": h })
        }
        EvalCmd::Distinct {
            input,
            n,
            include_tool_content,
        } => {
            let ds = read_dialogues(&input)?;
            let d = metrics::distinct_n(&ds, n, scope(include_tool_content)).input()?;
            json!({ "n": n, "distinct": d })
        }
        EvalCmd::Coherence {
            input,
            method,
            nli,
            nli_endpoint,
            labels,
            include_tool_content,
            embedding,
        } => {
            let ds = read_dialogues(&input)?;
            let sc = scope(include_tool_content);
            match method {
                CoherenceMethod::Ss => {
                    let provider = embedding.provider()?;
                    let ss = metrics::coherence_ss(&ds, provider.as_ref(), sc).await.stage()?;
                    json!({ "ss_mean": ss })
                }
                CoherenceMethod::Enr => {
                    let classifier: Box<dyn metrics::NliClassifier> = match nli {
                        NliChoice::Lexical => Box::new(metrics::LexicalNli::default()),
                        NliChoice::Scripted => {
                            let labels = labels.iter().map(|l| parse_label(l)).collect::<CliResult<Vec<_>>>()?;
                            Box::new(metrics::ScriptedNli::new(labels))
                        }
                        NliChoice::Http => {
                            let ep = nli_endpoint.ok_or_else(|| input_error("--nli-endpoint is required"))?;
                            Box::new(metrics::HttpNli::new(ep).input()?)
                        }
                    };
                    let b = metrics::nli_breakdown(&ds, classifier.as_ref(), sc, 4).await.stage()?;
                    json!({ "enr_ratio": b.enr(), "nli": b })
                }
            }
        }
        EvalCmd::Rubric {
            input,
            sample,
            seed,
            backend,
        } => {
            let ds = read_dialogues(&input)?;
            let backend = backend.build()?;
            let r = metrics::rubric_eval(&ds, backend.as_ref(), sample, seed, &RubricConfig::default())
                .await
                .input()?;
            serde_json::to_value(r).expect("report serializes")
        }
        EvalCmd::Pearson { x, y } => {
            json!({ "r": metrics::pearson(&x, &y).input()? })
        }
    })
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
