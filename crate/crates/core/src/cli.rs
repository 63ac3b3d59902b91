//! The `cavsim` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, SimConfig};
use crate::error::Error;
use crate::harness::experiments::{run as run_experiment, Experiment, ExperimentOutput, ExperimentSpec};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "cavsim", version = VERSION, about = "Monte-Carlo simulator for site-selective cavity readout of an atom array")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file; the built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; output is a pure function of config and seed.
    #[arg(long, global = true, default_value_t = 0, value_name = "U64")]
    seed: u64,

    /// Override the trial count configured for the experiment.
    #[arg(long, global = true, value_name = "N")]
    trials: Option<u64>,

    /// CSV output path (stdout when omitted). Metadata goes to `<PATH>.meta`.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Worker threads. Never changes the output.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Photon-count histograms for bright/dark atoms, full and adaptive intervals.
    Histogram,
    /// Per-site bright-state error during hidden sequential readout.
    DepumpScaling,
    /// Mean intervals to locate bright atoms for each search strategy.
    SearchCost,
    /// Per-round logical error versus physical error for each code distance.
    ErrorScaling,
    /// Logical error versus time and fitted lifetimes.
    Lifetime,
    /// Parse the configuration and report problems.
    ValidateConfig,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        match self {
            Command::Histogram => Some(Experiment::Histogram),
            Command::DepumpScaling => Some(Experiment::DepumpScaling),
            Command::SearchCost => Some(Experiment::SearchCost),
            Command::ErrorScaling => Some(Experiment::ErrorScaling),
            Command::Lifetime => Some(Experiment::LogicalLifetime),
            Command::ValidateConfig => None,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 on a
/// configuration error, 1 on any other failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(keys_help());
    let matches = match command.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Config(msg)) => {
            eprintln!("cavsim: {}", one_line(&msg));
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("cavsim: error: {}", one_line(&msg));
            1
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<SimConfig>()
        .map_err(|e| Failure::Config(format!("config error in {}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if cli.threads == Some(0) {
        return Err(Failure::Config("--threads must be >= 1".into()));
    }
    if cli.trials == Some(0) {
        return Err(Failure::Config("--trials must be >= 1".into()));
    }
    let config = load_config(cli.config.as_deref())?;
    let Some(experiment) = cli.command.experiment() else {
        println!("config ok: {} keys", config.canonical().len());
        return Ok(());
    };
    let spec = ExperimentSpec { experiment, trials: cli.trials, master_seed: cli.seed };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start thread pool: {e}")))?;
    let output = pool.install(|| run_experiment(&spec, &config))?;

    match &cli.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))?;
            output.write_csv(BufWriter::new(file))?;
            let meta = metadata_path(path);
            fs::write(&meta, render_metadata(cli, &spec, &config, &output))
                .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", meta.display())))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            output.write_csv(&mut lock)?;
            lock.flush().map_err(Error::from)?;
        }
    }
    Ok(())
}

/// `<out>.meta` next to the CSV.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn render_metadata(cli: &Cli, spec: &ExperimentSpec, config: &SimConfig, output: &ExperimentOutput) -> String {
    let mut s = String::new();
    s.push_str(&format!("version = {VERSION}\n"));
    s.push_str(&format!("experiment = {}\n", spec.experiment));
    s.push_str(&format!("seed = {}\n", spec.master_seed));
    match spec.trials {
        Some(n) => s.push_str(&format!("trials = {n}\n")),
        None => s.push_str("trials = configured\n"),
    }
    match &cli.config {
        Some(p) => s.push_str(&format!("config_file = {}\n", p.display())),
        None => s.push_str("config_file = built-in defaults\n"),
    }
    s.push_str("\n[config]\n");
    for (k, v) in config.canonical() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str("\n[results]\n");
    for (k, v) in &output.results {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}
