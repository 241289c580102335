//! Argument parsing and dispatch for the `blocks` binary.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use blocks_analytics::{parse_log, summarize, DEFAULT_SYNC_WINDOW_MS};
use blocks_core::{Millis, WorldId};
use blocks_protocol::LogRecord;
use blocks_server::http::{now_ms, serve, AppState};
use blocks_server::{default_worlds, load_config, EventStore, FileStore, Hub, HubConfig, WorldSpec};
use blocks_sim::{run_scenario, Scenario};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "blocks", version, about = "Collaborative voxel worlds: server, simulator and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the server: WebSocket at /ws, snapshots and exports over HTTP.
    Serve(ServeArgs),
    /// Run a scenario file and write the server log, replicas and ground truth.
    Simulate(SimulateArgs),
    /// Print the collaboration report for an exported log.
    Analyze(AnalyzeArgs),
    /// Print a world's event log from a data directory.
    Export(ExportArgs),
    /// Put the starter structure into an empty shared world.
    Seed(SeedArgs),
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Directory holding world logs and snapshots.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Shared-world definitions (JSON). Without it, one seeded "ourworld".
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "BLOCKS_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[command(flatten)]
    store: StoreArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// NDJSON event log, as written by `export` or `simulate`.
    #[arg(long)]
    log: PathBuf,
    /// Adds by different users at most this far apart are simultaneous.
    #[arg(long, default_value_t = DEFAULT_SYNC_WINDOW_MS)]
    sync_window_ms: Millis,
    /// Print the full summary as JSON instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long)]
    world: String,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "ourworld")]
    world: String,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Serve(a) => cmd_serve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Export(a) => cmd_export(a),
        Command::Seed(a) => cmd_seed(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn worlds(config: Option<&Path>) -> Result<Vec<WorldSpec>, CliError> {
    match config {
        Some(p) => load_config(p).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => Ok(default_worlds()),
    }
}

fn open_store(dir: &Path) -> Result<FileStore, CliError> {
    FileStore::open(dir).map_err(|e| runtime(format!("cannot open data directory {}: {e}", dir.display())))
}

fn open_hub(store: &StoreArgs, specs: Vec<WorldSpec>) -> Result<Hub, CliError> {
    let hub = Hub::new(Box::new(open_store(&store.data_dir)?), HubConfig::default(), specs, now_ms())
        .map_err(runtime)?;
    Ok(hub)
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let mut hub = open_hub(&a.store, worlds(a.store.config.as_deref())?)?;
    for w in hub.take_warnings() {
        eprintln!("warning: {w}");
    }
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen)
            .await
            .map_err(|e| runtime(format!("cannot listen on {}: {e}", a.listen)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on {addr}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, AppState::new(hub), shutdown).await.map_err(runtime)
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut sc = Scenario::load(&a.scenario).map_err(|e| runtime(format!("{}: {e}", a.scenario.display())))?;
    if let Some(seed) = a.seed {
        sc = sc.with_seed(seed);
    }
    let out = run_scenario(&sc).map_err(runtime)?;
    let files = out.write_to(&a.out).map_err(|e| runtime(format!("cannot write to {}: {e}", a.out.display())))?;
    println!("scenario {} (seed {}): {} events in {}", out.scenario, out.seed, out.server_seq, out.world);
    print!("{}", out.truth_report());
    for f in files {
        println!("wrote {}", f.display());
    }
    if !out.converged() {
        return Err(runtime(format!("replicas did not converge: {}", out.problems.join("; "))));
    }
    let unmet = sc.unmet(&out.truth_report());
    if !unmet.is_empty() {
        return Err(runtime(format!("scenario expectations not met: {}", unmet.join("; "))));
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.log).map_err(|e| runtime(format!("cannot read {}: {e}", a.log.display())))?;
    let log = parse_log(&text).map_err(|e| runtime(format!("{}: {e}", a.log.display())))?;
    let summary = summarize(&log, a.sync_window_ms).map_err(|e| runtime(format!("{}: {e}", a.log.display())))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
    } else {
        print!("{}", summary.report);
        if let Some(b) = summary.participation_balance {
            println!("Participation balance  {b:.4}");
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<(), CliError> {
    let world = WorldId::new(a.world);
    if !world.is_valid() {
        return Err(runtime(format!("bad world id {world:?}")));
    }
    let mut store = open_store(&a.data_dir)?;
    if !store.log_path(&world).exists() {
        return Err(runtime(format!("no log for world {world} in {}", a.data_dir.display())));
    }
    let log = store.load(&world).map_err(runtime)?.log;
    for (i, line) in log.lines().enumerate() {
        serde_json::from_str::<LogRecord>(line)
            .map_err(|e| runtime(format!("{}: line {} is not a log record: {e}", store.log_path(&world).display(), i + 1)))?;
    }
    match a.out {
        Some(p) => std::fs::write(&p, log).map_err(|e| runtime(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout().write_all(log.as_bytes()).map_err(runtime),
    }
}

fn cmd_seed(a: SeedArgs) -> Result<(), CliError> {
    let world = WorldId::new(a.world);
    let specs: Vec<WorldSpec> = worlds(a.store.config.as_deref())?
        .into_iter()
        .map(|s| WorldSpec { seed_starter: false, ..s })
        .collect();
    if !specs.iter().any(|s| s.id == world) {
        return Err(runtime(format!("{world} is not a configured shared world")));
    }
    let mut hub = open_hub(&a.store, specs)?;
    let n = hub.seed(&world, now_ms()).map_err(runtime)?;
    println!("seeded {world} with {n} blocks");
    Ok(())
}
