use clap::{Args, Parser, Subcommand};
use darkhorse::config::{ConfigError, ExperimentConfig};
use darkhorse::metrics::export::{
    write_bootstrap, write_compare, write_session, write_sweep, ExportError, Format, SessionSummary,
};
use darkhorse::metrics::run::simulate;
use darkhorse::metrics::{bootstrap_bench, compare_run, concurrency_sweep, RunError};
use darkhorse::session::System;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "darkhorse",
    version,
    about = "Onion-service UDP data channel simulator and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One DarkHorse session and one transfer: session.json and trace.csv.
    Simulate(Common),
    /// Both systems over the configured sizes and seeds: compare.csv.
    Compare(Common),
    /// Many clients sharing one set of data relays: sweep.csv.
    Sweep(Common),
    /// Bootstrap time of both systems over the configured seeds.
    BootstrapBench(Common),
    /// Wire and crypto vectors: golden_vectors.json.
    GoldenVectors {
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the config's first seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Concurrent simulations; defaults to the available cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

enum Failure {
    Config(ConfigError),
    Sim(RunError),
    Io(ExportError),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Sim(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Sim(e) => write!(f, "simulation failed: {e}"),
            Failure::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Sim(e)
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        Failure::Io(e)
    }
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Failure::Io(ExportError::Io {
            path: dir.to_owned(),
            source,
        })
    })
}

fn load(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&c.config).map_err(Failure::Config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn jobs(c: &Common) -> usize {
    c.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn run(cmd: Command) -> Result<Vec<PathBuf>, Failure> {
    match cmd {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let size = cfg.sizes.first().map_or(1 << 20, |b| b.0);
            let (rec, trace) = simulate(System::Darkhorse, &cfg, cfg.seed, size)?;
            out_dir(&c.out)?;
            Ok(write_session(&SessionSummary::new(&cfg, &rec), &trace, &c.out)?)
        }
        Command::Compare(c) => {
            let cfg = load(&c)?;
            let report = compare_run(&cfg, jobs(&c))?;
            out_dir(&c.out)?;
            Ok(vec![write_compare(&report, &c.out, c.format)?])
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let report = concurrency_sweep(&cfg, jobs(&c))?;
            out_dir(&c.out)?;
            Ok(vec![write_sweep(&report, &c.out, c.format)?])
        }
        Command::BootstrapBench(c) => {
            let cfg = load(&c)?;
            let report = bootstrap_bench(&cfg, jobs(&c))?;
            out_dir(&c.out)?;
            Ok(vec![write_bootstrap(&report, &c.out, c.format)?])
        }
        Command::GoldenVectors { out } => {
            out_dir(&out)?;
            let path = out.join("golden_vectors.json");
            let text = darkhorse::golden::to_json(&darkhorse::golden::generate());
            std::fs::write(&path, text).map_err(|source| {
                Failure::Io(ExportError::Io {
                    path: path.clone(),
                    source,
                })
            })?;
            Ok(vec![path])
        }
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("DARKHORSE_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
