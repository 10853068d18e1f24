//! Subcommands of the `ecolink` binary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecolink_core::embedding::{
    EmbeddingBackendDescriptor, DEFAULT_LOCAL_DIM, DEFAULT_REMOTE_EMBED_MODEL,
};
use ecolink_core::eval::{check_gold_labels, hits_at, EvalError, EvalTable};
use ecolink_core::fixtures::generate_demo_corpus;
use ecolink_core::index::{load_index_for, save_index};
use ecolink_core::ingest::{self, BomDelimiter, IngestError};
use ecolink_core::llm::{LlmBackendDescriptor, DEFAULT_LLM_ENDPOINT, DEFAULT_LLM_MODEL};
use ecolink_core::pipeline::{PipelineError, RunReport};
use ecolink_core::{
    build_index, Backends, EmbedError, IndexError, LlmBackend, LlmError, Mode, Pipeline,
    PipelineConfig,
};
use ecolink_service::{AppState, ReviewSession, SessionError, SessionInputs};
use thiserror::Error;

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Embed { ref source, .. } if is_backend(source) => {
                CliError::Backend(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(_) => CliError::Usage(e.to_string()),
            _ if is_backend(&e) => CliError::Backend(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::FixtureIo { .. } | LlmError::FixtureSyntax { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::MissingLlm(_) => {
                CliError::Usage(e.to_string())
            }
            PipelineError::InvalidBom(_) => CliError::Input(e.to_string()),
            PipelineError::Workers(_) => CliError::Backend(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoCutoffs | EvalError::ZeroCutoff => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn is_backend(e: &EmbedError) -> bool {
    matches!(e, EmbedError::Remote { .. } | EmbedError::Protocol(_))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

#[derive(Debug, Parser)]
#[command(
    name = "ecolink",
    version,
    about = "Map bill-of-materials components to LCA activities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed an LCA database and save the activity index.
    Index(IndexArgs),
    /// Rank candidate activities for every BOM component.
    Match(MatchArgs),
    /// Score run reports against gold labels.
    Eval(EvalArgs),
    /// Start the review service over a completed run.
    Serve(ServeArgs),
    /// Write the synthetic demo corpus.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedKind {
    Remote,
    LocalHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmKind {
    Remote,
    Canned,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, value_enum, default_value = "local-hash")]
    pub backend: EmbedKind,
    /// Local-hash dimension. `match` defaults to the index dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value = "http://localhost:8000/v1/embeddings")]
    pub endpoint: String,
    #[arg(long, default_value = DEFAULT_REMOTE_EMBED_MODEL)]
    pub model: String,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

impl EmbedArgs {
    fn descriptor(&self, fallback_dim: usize) -> EmbeddingBackendDescriptor {
        match self.backend {
            EmbedKind::LocalHash => EmbeddingBackendDescriptor::LocalHash {
                dim: self.dim.unwrap_or(fallback_dim),
            },
            EmbedKind::Remote => EmbeddingBackendDescriptor::Remote {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                batch_size: self.batch_size,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub bom: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Directory of `.txt` datasheets. Omit for an empty pool.
    #[arg(long)]
    pub datasheets: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long, value_enum, default_value = "remote")]
    pub llm: LlmKind,
    /// JSON-lines fixtures for `--llm canned`.
    #[arg(long)]
    pub llm_fixtures: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_LLM_ENDPOINT)]
    pub llm_endpoint: String,
    #[arg(long, default_value = DEFAULT_LLM_MODEL)]
    pub llm_model: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Include per-stage timings in the report (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run report; repeat to compare modes.
    #[arg(long, required = true)]
    pub report: Vec<PathBuf>,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub n: Vec<usize>,
    /// LCA database to check gold labels against.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Write one JSON record per mode and cutoff.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, requires_all = ["bom", "db"])]
    pub report: Option<PathBuf>,
    #[arg(long, requires = "report")]
    pub bom: Option<PathBuf>,
    #[arg(long, requires = "report")]
    pub db: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Directory holding the decisions logs.
    #[arg(long, default_value = "ecolink-data")]
    pub data: PathBuf,
    /// Static frontend bundle to serve alongside the API.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value = ecolink_service::DEFAULT_REVIEWER)]
    pub reviewer: String,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ecolink_core::fixtures::DEMO_SEED)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index(a) => index(&a),
        Command::Match(a) => run_match(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(&a),
        Command::Demo(a) => demo(&a),
    }
}

fn index(a: &IndexArgs) -> Result<(), CliError> {
    let db = ingest::parse_lca_db(&ingest::read_text(&a.db)?)?;
    let descriptor = a.embed.descriptor(DEFAULT_LOCAL_DIM);
    descriptor.validate().map_err(CliError::Usage)?;
    let backend = descriptor.build::<f32>()?;
    let index = build_index(&db, backend.as_ref())?;
    save_index(&index, &a.out)?;
    println!("indexed {} activities", index.len());
    println!("fingerprint {}", index.fingerprint());
    Ok(())
}

fn run_match(a: &MatchArgs) -> Result<(), CliError> {
    let bom = ingest::parse_bom(&ingest::read_text(&a.bom)?, BomDelimiter::Auto)?;
    let sheets = match &a.datasheets {
        Some(dir) => ingest::load_datasheets(dir)?,
        None => Vec::new(),
    };
    // Peek at the stored dimension so local-hash queries match the index.
    let stored = ecolink_core::index::load_index(&a.index)?;
    let descriptor = a.embed.descriptor(stored.dim());
    descriptor.validate().map_err(CliError::Usage)?;
    let embedder = descriptor.build::<f32>()?;
    let loaded = load_index_for(&a.index, &embedder.fingerprint())?;
    if let Some(w) = &loaded.fingerprint_warning {
        eprintln!("warning: {w}");
    }

    let llm: Option<Box<dyn LlmBackend>> = if a.mode.uses_llm() {
        let descriptor = match (a.llm, &a.llm_fixtures) {
            (LlmKind::Canned, Some(fixtures)) => LlmBackendDescriptor::Canned {
                fixtures: fixtures.clone(),
            },
            (LlmKind::Canned, None) => {
                return Err(CliError::Usage("--llm canned needs --llm-fixtures".into()));
            }
            (LlmKind::Remote, _) => LlmBackendDescriptor::Remote {
                endpoint: a.llm_endpoint.clone(),
                model: a.llm_model.clone(),
            },
        };
        Some(descriptor.build()?)
    } else {
        None
    };

    let config = PipelineConfig {
        datasheet_threshold: a.threshold,
        top_k: a.top_k,
        embedding: descriptor,
        parallelism: a.parallelism,
        ..PipelineConfig::default()
    };
    let backends = Backends {
        embedder: embedder.as_ref(),
        llm: llm.as_deref(),
    };
    let pipeline = Pipeline::new(&loaded.index, &sheets, &config, backends)?;
    let report = pipeline.run_bom(&bom, a.mode)?;
    write_file(&a.report, &report.to_jsonl(a.timings))?;

    for r in &report.records {
        match (&r.error, r.candidates.first()) {
            (Some(e), _) => println!("{}\tFAILED\t{e}", r.component_id),
            (None, Some(top)) => {
                println!("{}\t{}\t{:.4}", r.component_id, top.activity_id, top.score)
            }
            (None, None) => println!("{}\t-", r.component_id),
        }
    }
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!(
            "{failed} of {} components failed; see {}",
            report.records.len(),
            a.report.display()
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let gold = ingest::parse_gold_labels(&ingest::read_text(&a.gold)?)?;
    if let Some(db) = &a.db {
        let db = ingest::parse_lca_db(&ingest::read_text(db)?)?;
        check_gold_labels(&gold, &db, None)?;
    }
    let mut table = EvalTable::default();
    for path in &a.report {
        let report = RunReport::from_jsonl(&ingest::read_text(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mode = report
            .records
            .first()
            .map(|r| r.mode)
            .ok_or_else(|| CliError::Input(format!("{}: empty run report", path.display())))?;
        table
            .rows
            .push(hits_at(mode, &report.rankings(), &gold, &a.n)?);
    }
    print!("{}", table.render_text());
    if let Some(out) = &a.out {
        write_file(out, &table.render_records())?;
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let session = match (&a.report, &a.bom, &a.db) {
        (Some(report), Some(bom), Some(db)) => {
            let inputs = SessionInputs::load(report, bom, db)?;
            Some(ReviewSession::open(inputs, &a.data)?)
        }
        _ => None,
    };
    match &session {
        Some(s) => eprintln!(
            "session {} ({} components, {} decisions replayed from {})",
            s.id(),
            s.bom().len(),
            s.history().len(),
            s.log_path().display()
        ),
        None => eprintln!("no run loaded; component routes answer 409"),
    }
    let state = AppState::new(session).with_reviewer(&a.reviewer);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Backend(e.to_string()))?;
    runtime.block_on(async {
        let listener = ecolink_service::bind(a.listen)
            .await
            .map_err(|e| CliError::Input(e.to_string()))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Input(e.to_string()))?;
        println!("listening on http://{addr}");
        let app = ecolink_service::app(state, a.ui.clone());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        ecolink_service::serve(listener, app, shutdown)
            .await
            .map_err(|e| CliError::Backend(e.to_string()))
    })
}

fn demo(a: &DemoArgs) -> Result<(), CliError> {
    let corpus = generate_demo_corpus(a.seed);
    corpus.write_to(&a.out)?;
    println!(
        "wrote {} components, {} activities, {} datasheets, {} labels to {}",
        corpus.bom.len(),
        corpus.activities.len(),
        corpus.datasheets.len(),
        corpus.gold.len(),
        a.out.display()
    );
    Ok(())
}
