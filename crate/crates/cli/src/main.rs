//! `iquest` command-line front end.
//!
//! Exit codes: 0 success, 1 input error (bad flags, unreadable or malformed
//! files), 2 backend failure (LLM, encoder, or a failed pipeline run).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use iquest::encoder::{EncoderBackend, EncoderConfig, TextEncoder, DEFAULT_DIMENSION};
use iquest::eval::{evaluate, load_dataset, trace_file_name};
use iquest::kg::{load_graph, render_sparql, Direction, EntityId, KnowledgeGraph, RelationId};
use iquest::pipeline::{read_trace, write_trace, Engine, PipelineConfig, ReasoningTrace};
use iquest::reasoning::{ChatClient, HttpChatClient, LlmError, Prompts, ScriptedClient};
use iquest::scorer::{build_training_set, train, ScorerDims, ScorerParams, TrainConfig, TrainingPair};

#[derive(Parser, Debug)]
#[command(name = "iquest", version, about = "Question-guided multi-hop KBQA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Answer one question and write its trace.
    Answer(AnswerArgs),
    /// Evaluate a JSON-Lines dataset and write a report.
    Eval(EvalArgs),
    /// Train the relevance scorer from (question, topic, answer) pairs.
    TrainScorer(TrainArgs),
    /// Print the one-hop SPARQL query for an entity.
    RenderSparql(SparqlArgs),
    /// Pretty-print a trace file.
    TraceShow(TraceShowArgs),
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Triples TSV (subject, relation, object).
    #[arg(long)]
    kg: PathBuf,
    /// Labels TSV (entity, label).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EngineArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Scorer params JSON; a seeded random init is used when absent.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// `scripted:<path>` or `http:<base-url>`.
    #[arg(long)]
    llm: Option<String>,
    /// Chat model name for the HTTP client.
    #[arg(long)]
    model: Option<String>,
    /// `hash:<dim>` or `http:<url>`.
    #[arg(long)]
    encoder: Option<String>,
    /// Vector dimension served by an `http:` encoder.
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    separate_sufficiency_call: bool,
    /// Seed for the scorer init when no `--scorer` is given.
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden sizes for the seeded init.
    #[arg(long)]
    gnn_dim: Option<usize>,
    #[arg(long)]
    mlp_dim: Option<usize>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// JSON config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnswerArgs {
    #[arg(long)]
    question: String,
    #[arg(long)]
    topic: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Trace output file (default: `<trace-dir>/answer.json` when `--trace-dir` is set).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Report JSON path; the text table is written next to it with a `.txt` extension.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Questions evaluated concurrently.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// JSON-Lines of `{"question", "topic", "answer"}`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "hash:768")]
    encoder: String,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    encoder_dim: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negative_ratio: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 128)]
    gnn_dim: usize,
    #[arg(long, default_value_t = 128)]
    mlp_dim: usize,
}

#[derive(Args, Debug)]
struct SparqlArgs {
    #[arg(long)]
    entity: String,
    /// Omit for an unbound predicate.
    #[arg(long)]
    relation: Option<String>,
    /// `out` or `in`.
    #[arg(long, default_value = "out")]
    direction: String,
}

#[derive(Args, Debug)]
struct TraceShowArgs {
    #[arg(long)]
    trace: PathBuf,
}

/// Mirrors the engine flags; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    max_iter: Option<usize>,
    top_k: Option<usize>,
    separate_sufficiency_call: Option<bool>,
    llm: Option<String>,
    model: Option<String>,
    encoder: Option<String>,
    encoder_dim: Option<usize>,
    seed: Option<u64>,
    gnn_dim: Option<usize>,
    mlp_dim: Option<usize>,
    parallel: Option<usize>,
}

/// An error paired with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn backend(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }
    fn backend(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Answer(a) => cmd_answer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TrainScorer(a) => cmd_train(a),
        Command::RenderSparql(a) => cmd_sparql(a),
        Command::TraceShow(a) => cmd_trace_show(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

enum LlmChoice {
    Scripted(PathBuf),
    Http(String),
}

/// Accepts both `http:<url>` and a bare `http://...` URL.
fn http_url(value: &str, rest: &str) -> String {
    if rest.starts_with("//") {
        value.to_string()
    } else {
        rest.to_string()
    }
}

fn parse_llm(value: &str) -> anyhow::Result<LlmChoice> {
    match value.split_once(':') {
        Some(("scripted", path)) if !path.is_empty() => Ok(LlmChoice::Scripted(PathBuf::from(path))),
        Some(("http", url)) if !url.is_empty() => Ok(LlmChoice::Http(http_url(value, url))),
        _ => bail!("--llm must be scripted:<path> or http:<base-url>, got {value:?}"),
    }
}

fn parse_encoder(value: &str, http_dim: usize) -> anyhow::Result<EncoderConfig> {
    match value.split_once(':') {
        Some(("hash", dim)) => Ok(EncoderConfig {
            dimension: dim
                .parse()
                .with_context(|| format!("bad hash encoder dimension {dim:?}"))?,
            backend: EncoderBackend::HashEncoder,
        }),
        Some(("http", url)) if !url.is_empty() => Ok(EncoderConfig {
            dimension: http_dim,
            backend: EncoderBackend::RemoteService(http_url(value, url)),
        }),
        _ => bail!("--encoder must be hash:<dim> or http:<url>, got {value:?}"),
    }
}

fn load_kg(args: &GraphArgs) -> Result<KnowledgeGraph, Failure> {
    load_graph(&args.kg, args.labels.as_deref()).input()
}

/// Everything an answer or eval run needs, resolved from flags and config.
struct Setup {
    graph: KnowledgeGraph,
    params: ScorerParams,
    encoder: Box<dyn TextEncoder>,
    prompts: Prompts,
    config: PipelineConfig,
    llm: LlmChoice,
    model: String,
    parallel: usize,
}

impl Setup {
    fn engine(&self) -> Engine<'_, KnowledgeGraph> {
        Engine {
            graph: &self.graph,
            params: &self.params,
            encoder: self.encoder.as_ref(),
            prompts: &self.prompts,
            config: &self.config,
        }
    }
}

fn setup(args: &EngineArgs, parallel_flag: Option<usize>) -> Result<Setup, Failure> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| path.display().to_string())
                .input()?;
            serde_json::from_str(&text)
                .with_context(|| path.display().to_string())
                .input()?
        }
        None => FileConfig::default(),
    };
    let graph = load_kg(&args.graph)?;
    let loaded = match &args.scorer {
        Some(p) => Some(ScorerParams::load(p).with_context(|| p.display().to_string()).input()?),
        None => None,
    };

    let encoder_dim = args.encoder_dim.or(file.encoder_dim).unwrap_or(DEFAULT_DIMENSION);
    let default_hash = format!("hash:{}", loaded.as_ref().map_or(DEFAULT_DIMENSION, |p| p.dims.d_in));
    let encoder_arg = args.encoder.clone().or(file.encoder).unwrap_or(default_hash);
    let encoder_cfg = parse_encoder(&encoder_arg, encoder_dim).input()?;
    let encoder = encoder_cfg.build().input()?;

    let params = match loaded {
        Some(p) => {
            if p.dims.d_in != encoder.dimension() {
                return Err(anyhow!(
                    "scorer expects {}-dimensional embeddings but the encoder produces {}",
                    p.dims.d_in,
                    encoder.dimension()
                ))
                .input();
            }
            p
        }
        None => {
            let dims = ScorerDims::new(
                encoder.dimension(),
                args.gnn_dim.or(file.gnn_dim).unwrap_or(128),
                args.mlp_dim.or(file.mlp_dim).unwrap_or(128),
            )
            .input()?;
            log::warn!("no --scorer given; using an untrained seeded initialization");
            ScorerParams::init(dims, args.seed.or(file.seed).unwrap_or(0))
        }
    };

    let prompts = match &args.prompts {
        Some(dir) => Prompts::load_dir(dir)
            .with_context(|| dir.display().to_string())
            .input()?,
        None => Prompts::default(),
    };
    let defaults = PipelineConfig::default();
    let config = PipelineConfig {
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        top_k: args.top_k.or(file.top_k).unwrap_or(defaults.top_k),
        separate_sufficiency_call: args.separate_sufficiency_call || file.separate_sufficiency_call.unwrap_or(false),
        ..defaults
    };
    config.validate().map_err(|e| anyhow!(e)).input()?;

    let llm_arg = args
        .llm
        .clone()
        .or(file.llm)
        .ok_or_else(|| anyhow!("--llm is required (scripted:<path> or http:<base-url>)"))
        .input()?;
    Ok(Setup {
        graph,
        params,
        encoder,
        prompts,
        config,
        llm: parse_llm(&llm_arg).input()?,
        model: args.model.clone().or(file.model).unwrap_or_else(|| "gpt-4o".into()),
        parallel: parallel_flag.or(file.parallel).unwrap_or(1),
    })
}

fn entity(s: &str) -> Result<EntityId, Failure> {
    EntityId::new(s).input()
}

fn cmd_answer(args: AnswerArgs) -> Result<(), Failure> {
    let s = setup(&args.engine, None)?;
    let topic = entity(&args.topic)?;
    let client: Box<dyn ChatClient> = match &s.llm {
        LlmChoice::Scripted(path) => Box::new(ScriptedClient::load(path).input()?),
        LlmChoice::Http(url) => Box::new(HttpChatClient::new(url, &s.model).backend()?),
    };
    let trace_path = args
        .trace
        .clone()
        .or_else(|| args.trace_dir.as_ref().map(|d| d.join("answer.json")));
    let save = |trace: &ReasoningTrace| -> Result<(), Failure> {
        if let Some(path) = &trace_path {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| parent.display().to_string())
                    .input()?;
            }
            write_trace(trace, path)
                .with_context(|| path.display().to_string())
                .input()?;
        }
        Ok(())
    };
    match s.engine().answer_question(&args.question, &topic, client.as_ref()) {
        Ok((answer, trace)) => {
            save(&trace)?;
            println!("{answer}");
            Ok(())
        }
        Err(err) => {
            save(&err.trace)?;
            Err(anyhow::Error::new(err.source)).backend()
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let s = setup(&args.engine, args.parallel)?;
    let dataset = load_dataset(&args.dataset).input()?;
    if dataset.is_empty() {
        return Err(anyhow!("dataset {} is empty", args.dataset.display())).input();
    }
    let http = match &s.llm {
        LlmChoice::Http(url) => Some(Arc::new(HttpChatClient::new(url, &s.model).backend()?)),
        LlmChoice::Scripted(dir) if !dir.is_dir() => {
            return Err(anyhow!("scripted:<dir> must name a directory of <id>.json transcripts")).input()
        }
        LlmChoice::Scripted(_) => None,
    };
    let make_client = |rec: &iquest::eval::DatasetRecord| -> Result<Box<dyn ChatClient>, LlmError> {
        match (&s.llm, &http) {
            (_, Some(client)) => Ok(Box::new(Arc::clone(client))),
            (LlmChoice::Scripted(dir), None) => {
                Ok(Box::new(ScriptedClient::load(&dir.join(trace_file_name(&rec.id)))?))
            }
            (LlmChoice::Http(_), None) => unreachable!("http client built above"),
        }
    };
    let report = evaluate(&dataset, s.engine(), make_client, s.parallel, args.trace_dir.as_deref())
        .context("writing traces")
        .input()?;
    let table = report.text_table();
    if let Some(path) = &args.report {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .with_context(|| parent.display().to_string())
                .input()?;
        }
        fs::write(path, report.to_canonical_json())
            .with_context(|| path.display().to_string())
            .input()?;
        let txt = path.with_extension("txt");
        fs::write(&txt, &table)
            .with_context(|| txt.display().to_string())
            .input()?;
    }
    print!("{table}");
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    question: String,
    topic: EntityId,
    answer: EntityId,
}

fn load_pairs(path: &Path) -> anyhow::Result<Vec<TrainingPair>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(TrainingPair {
            question: p.question,
            topic: p.topic,
            answer: p.answer,
        });
    }
    Ok(out)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let graph = load_kg(&args.graph)?;
    let pairs = load_pairs(&args.pairs).input()?;
    if pairs.is_empty() {
        return Err(anyhow!("no training pairs in {}", args.pairs.display())).input();
    }
    let encoder = parse_encoder(&args.encoder, args.encoder_dim)
        .input()?
        .build()
        .input()?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed: args.seed.unwrap_or(d.seed),
        negative_ratio: args.negative_ratio.unwrap_or(d.negative_ratio),
    };
    cfg.validate().input()?;
    let dims = ScorerDims::new(encoder.dimension(), args.gnn_dim, args.mlp_dim).input()?;
    let examples = build_training_set(&graph, &pairs, encoder.as_ref(), &cfg).input()?;
    let params = train(&examples, dims, &cfg).backend()?;
    let acc = iquest::scorer::accuracy(&examples, &params).backend()?;
    params
        .save(&args.out)
        .with_context(|| args.out.display().to_string())
        .input()?;
    println!(
        "trained on {} examples ({} pairs); training accuracy {:.4}; wrote {}",
        examples.len(),
        pairs.len(),
        acc,
        args.out.display()
    );
    Ok(())
}

fn cmd_sparql(args: SparqlArgs) -> Result<(), Failure> {
    let e = entity(&args.entity)?;
    let direction: Direction = args.direction.parse().map_err(|e: String| anyhow!(e)).input()?;
    let relation = args.relation.as_deref().map(RelationId::new).transpose().input()?;
    print!("{}", render_sparql(&e, direction, relation.as_ref()));
    Ok(())
}

fn show(trace: &ReasoningTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "question:     {}", trace.question);
    let _ = writeln!(s, "topic:        {}", trace.topic_entity);
    for it in &trace.iterations {
        let _ = writeln!(s, "\n[{}] {}", it.index, it.subquestion);
        let frontier: Vec<&str> = it.frontier_before.iter().map(EntityId::as_str).collect();
        let _ = writeln!(s, "    frontier:  {}", frontier.join(", "));
        let _ = writeln!(s, "    candidates ({}):", it.candidates.len());
        for c in it.candidates.iter().take(10) {
            let mark = if it.selected.contains(&c.entity) { '*' } else { ' ' };
            let _ = writeln!(
                s,
                "     {mark} {:.6}  {}  via {} ({:?})",
                c.score, c.entity, c.via_edge.relation, c.via_edge.direction
            );
        }
        if it.candidates.len() > 10 {
            let _ = writeln!(s, "       ... {} more", it.candidates.len() - 10);
        }
        let source = if it.outcome.used_internal_knowledge {
            "internal"
        } else {
            "kg"
        };
        let _ = writeln!(
            s,
            "    answer:    {}  (sufficient: {}, source: {source})",
            it.outcome.answer, it.outcome.sufficient
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "final answer: {}", trace.final_answer.as_deref().unwrap_or("<none>"));
    let _ = writeln!(s, "stop reason:  {:?}", trace.stop_reason);
    let calls: Vec<String> = trace
        .llm_calls_by_role
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let _ = writeln!(s, "llm calls:    {} ({})", trace.llm_calls(), calls.join(", "));
    let _ = writeln!(s, "wall time:    {:.3} s", trace.wall_time_s);
    for w in &trace.warnings {
        let _ = writeln!(s, "warning:      {w}");
    }
    s
}

fn cmd_trace_show(args: TraceShowArgs) -> Result<(), Failure> {
    let trace = read_trace(&args.trace)
        .with_context(|| args.trace.display().to_string())
        .input()?;
    print!("{}", show(&trace));
    Ok(())
}
