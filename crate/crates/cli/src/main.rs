use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use async_trait::async_trait;
use clap::{Args, Parser, Subcommand, ValueEnum};
use surveyforge::agents::{
    replay, AgentError, AutoApprove, GateRequest, GateResponder, Resolution, RunOutcome, Runtime, Session, SessionStore,
};
use surveyforge::config::{Backend, Config, ConfigError};
use surveyforge::servers::{FixtureIndex, Retriever};
use surveyforge::service::Service;
use surveyforge::state::{PipelineState, ReferenceDocument, Stage};

const EXIT_PIPELINE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PLANNING: u8 = 3;
const EXIT_TRANSCRIPT: u8 = 4;

#[derive(Parser)]
#[command(name = "surveyforge", version, about = "Generate cited literature surveys with a planner-driven set of tool servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline for one topic.
    Run(RunArgs),
    /// Serve the session HTTP API.
    Serve(ServeArgs),
    /// Re-execute a transcript and compare it with what was recorded.
    Replay {
        /// Path to a transcript.jsonl inside a session directory.
        transcript: PathBuf,
    },
    /// Inspect configured tool servers.
    Servers {
        #[command(subcommand)]
        command: ServersCommand,
    },
}

#[derive(Subcommand)]
enum ServersCommand {
    /// List servers, their tools and the agents allowed to call them.
    List {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model backend; overrides the config and SF_BACKEND.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Offline retrieval index (JSON list of {url, title, body}).
    #[arg(long)]
    fixture_index: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Consensus,
    Analysis,
    Skeletonizing,
    Writing,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Consensus => Stage::Consensus,
            StageArg::Analysis => Stage::Analysis,
            StageArg::Skeletonizing => Stage::Skeletonizing,
            StageArg::Writing => Stage::Writing,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Survey topic (required unless --resume is given).
    #[arg(long)]
    topic: Option<String>,
    /// Free-text writing goals.
    #[arg(long, default_value = "")]
    goals: String,
    /// Auto-approve every gate (the default).
    #[arg(long, conflicts_with = "interactive")]
    headless: bool,
    /// Answer gates at the terminal.
    #[arg(long)]
    interactive: bool,
    /// Session directory for checkpoints and artifacts.
    #[arg(long, default_value = "surveyforge-session")]
    out: PathBuf,
    /// Session identifier recorded in the state.
    #[arg(long, default_value = "session")]
    session_id: String,
    /// Text or markdown files added to the corpus.
    #[arg(long = "upload")]
    uploads: Vec<PathBuf>,
    /// Planner budget: consults plus planner-chosen steps.
    #[arg(long)]
    max_planner_steps: Option<usize>,
    /// Maximum refinement layers.
    #[arg(long)]
    max_layers: Option<u32>,
    /// Stop after the given stage has been checkpointed.
    #[arg(long, value_enum)]
    halt_after: Option<StageArg>,
    /// Continue the session in --out from its latest checkpoint.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8700")]
    addr: SocketAddr,
    /// Directory holding one subdirectory per session.
    #[arg(long, default_value = "surveyforge-sessions")]
    root: PathBuf,
    #[command(flatten)]
    common: Common,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        let code = match &e {
            AgentError::Config(_) => EXIT_CONFIG,
            AgentError::TranscriptMismatch { .. } => EXIT_TRANSCRIPT,
            e if e.is_planning() => EXIT_PLANNING,
            _ => EXIT_PIPELINE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply_env()?;
    if let Some(b) = common.backend {
        config.model.backend = match b {
            BackendArg::Scripted => Backend::Scripted,
            BackendArg::Live => Backend::Live,
        };
    }
    Ok(config)
}

fn retriever(common: &Common) -> Result<Arc<dyn Retriever>, Failure> {
    let index = match &common.fixture_index {
        Some(p) => FixtureIndex::from_file(p),
        None => FixtureIndex::from_env(),
    };
    let index = index.map_err(|e| Failure { code: EXIT_CONFIG, message: e.to_string() })?;
    Ok(Arc::new(index))
}

async fn runtime(config: Config, common: &Common) -> Result<Runtime, Failure> {
    let model = config.build_model()?;
    Ok(Runtime::new(config, model, retriever(common)?).await?)
}

/// Gates rendered as terminal prompts. An empty line approves; `g`
/// regenerates; `q` aborts; any other text is sent as a revision.
struct TerminalGates;

#[async_trait]
impl GateResponder for TerminalGates {
    async fn respond(&self, request: &GateRequest) -> Resolution {
        let request = request.clone();
        tokio::task::spawn_blocking(move || {
            let mut err = std::io::stderr();
            let _ = writeln!(err, "\n== gate {} ({:?}) ==", request.gate_id, request.kind);
            let payload = serde_json::to_string_pretty(&request.payload).unwrap_or_default();
            let _ = writeln!(err, "{payload}");
            let _ = write!(err, "[enter] approve, g regenerate, q abort, or type a revision: ");
            let _ = err.flush();
            let mut line = String::new();
            if std::io::stdin().lock().read_line(&mut line).unwrap_or(0) == 0 {
                return Resolution::Abort;
            }
            match line.trim() {
                "" | "a" | "approve" => Resolution::Approve,
                "g" | "regenerate" => Resolution::Regenerate,
                "q" | "abort" => Resolution::Abort,
                text => Resolution::revise(text),
            }
        })
        .await
        .unwrap_or(Resolution::Abort)
    }
}

fn read_upload(path: &Path) -> Result<ReferenceDocument, Failure> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Failure { code: EXIT_CONFIG, message: format!("upload {}: {e}", path.display()) })?;
    let filename = path.file_name().and_then(|n| n.to_str()).unwrap_or("upload").to_string();
    let title = body
        .lines()
        .map(|l| l.trim_start_matches('#').trim())
        .find(|l| !l.is_empty())
        .unwrap_or(&filename)
        .to_string();
    Ok(ReferenceDocument::upload(filename, title, body))
}

async fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.max_planner_steps {
        config.limits.max_planner_steps = n;
    }
    if let Some(n) = args.max_layers {
        config.limits.max_layers = n;
    }
    config.validate()?;
    let gates: Arc<dyn GateResponder> = if args.interactive { Arc::new(TerminalGates) } else { Arc::new(AutoApprove) };
    let rt = runtime(config, &args.common).await?;
    let mut session = if args.resume {
        Session::resume(rt, SessionStore::open(&args.out)?, gates)?
    } else {
        let Some(topic) = args.topic.as_deref().map(str::trim).filter(|t| !t.is_empty()) else {
            return Err(Failure { code: EXIT_CONFIG, message: "--topic is required".into() });
        };
        let mut state = PipelineState::new(args.session_id.clone(), topic, args.goals.trim());
        for p in &args.uploads {
            state.uploads.push(read_upload(p)?);
        }
        if args.out.join("state-0.json").exists() {
            return Err(Failure {
                code: EXIT_CONFIG,
                message: format!("{} already holds a session; use --resume or another --out", args.out.display()),
            });
        }
        Session::new(rt, state, gates, Some(SessionStore::create(&args.out)?))?
    };
    match session.run(args.halt_after.map(Stage::from)).await? {
        RunOutcome::Completed => println!("{}", args.out.join("survey.md").display()),
        RunOutcome::Halted(stage) => eprintln!("halted after the {stage:?} stage; continue with --resume"),
    }
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<(), Failure> {
    let config = load_config(&args.common)?;
    let rt = runtime(config, &args.common).await?;
    let svc = Service::open(&args.root, rt).map_err(|e| Failure { code: EXIT_PIPELINE, message: e.to_string() })?;
    let (addr, task) = svc.serve(args.addr).await.map_err(|e| Failure { code: EXIT_PIPELINE, message: e.to_string() })?;
    println!("listening on http://{addr}");
    tokio::select! {
        _ = task => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

async fn servers_list(common: Common) -> Result<(), Failure> {
    let config = load_config(&common)?;
    let bindings = config.bindings.clone();
    let rt = runtime(config, &common).await?;
    for child in rt.registry.children() {
        let agents: Vec<&str> =
            bindings.iter().filter(|(_, s)| s.contains(&child.server_id().to_string())).map(|(a, _)| a.as_str()).collect();
        println!("{} ({:?}, {:?}) agents: {}", child.server_id(), child.transport(), child.origin(), agents.join(", "));
        for t in child.tools() {
            println!("  {}.{}", child.server_id(), t.name);
        }
    }
    Ok(())
}

fn replay_cmd(transcript: &Path) -> Result<(), Failure> {
    let report = replay(transcript)?;
    println!(
        "replayed {} steps ({} entries), {} checkpoints match",
        report.steps, report.entries, report.checkpoints_checked
    );
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("SF_LOG"))
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).await,
        Command::Serve(args) => serve(args).await,
        Command::Replay { transcript } => replay_cmd(&transcript),
        Command::Servers { command: ServersCommand::List { common } } => servers_list(common).await,
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
