//! `hetmeg` command-line interface: simulate datasets, run the solvers,
//! evaluate results, and sweep parameters.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error (missing, corrupt,
//! or malformed files), 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hetmeg::harness::{self, ExperimentConfig, HarnessError, Method, Metrics};

#[derive(Parser)]
#[command(name = "hetmeg", version, about = "Heterogeneous-source MEG inversion harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Imaging,
    Patch,
    Hetero,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Imaging => Method::Imaging,
            MethodArg::Patch => Method::Patch,
            MethodArg::Hetero => Method::Hetero,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one inversion method on a dataset directory.
    Solve {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config overrides, e.g. --set solver.max_evals=4000 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare a result directory against its dataset's ground truth.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        result: PathBuf,
        /// Append one row to this metrics CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full factorial sweep over one config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep spec `section.key=v1,v2,...`.
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    Ok(ExperimentConfig::parse(&text)?)
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, String> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got '{s}'"))
        })
        .collect()
}

fn print_metrics(method: Method, m: &Metrics) {
    println!("method = {}", method.as_str());
    println!("center_error = {}", m.center_error);
    println!("radius_error = {}", m.radius_error);
    println!("amplitude_rel_error = {}", m.amplitude_rel_error);
    println!("dice = {}", m.dice);
    println!("background_corr = {}", m.background_corr);
    println!("residual_rel = {}", m.residual_rel);
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config)?;
            let resolved = harness::run_simulate(&cfg, &out)?;
            println!("dataset written to {}", out.display());
            println!("eps = {}", resolved.eps);
            println!("sigma_b = {}", resolved.sigma_b);
            println!("sigma_n = {}", resolved.sigma_n);
        }
        Command::Solve {
            method,
            data,
            out,
            set,
        } => {
            let overrides = match parse_overrides(&set) {
                Ok(o) => o,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    std::process::exit(2);
                }
            };
            let summary = harness::run_solve(&data, method.into(), &overrides, &out)?;
            println!("result written to {}", out.display());
            println!("wall_ms = {}", summary.wall_ms);
            if let Some(p) = summary.patch {
                println!("theta0 = {}", p.theta0);
                println!("phi0 = {}", p.phi0);
                println!("r0 = {}", p.r0);
                println!("j0_density = {}", p.j0_density);
            }
        }
        Command::Evaluate { data, result, csv } => {
            let (method, m) = harness::run_evaluate(&data, &result, csv.as_deref())?;
            print_metrics(method, &m);
        }
        Command::Sweep {
            config,
            sweep,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let (key, values) = match sweep.split_once('=') {
                Some((k, vs)) if !vs.is_empty() => (
                    k.trim().to_string(),
                    vs.split(',').map(|v| v.trim().to_string()).collect::<Vec<_>>(),
                ),
                _ => {
                    eprintln!("error: --sweep expects section.key=v1,v2,...");
                    std::process::exit(2);
                }
            };
            harness::run_sweep(&cfg, &key, &values, seeds, &out)?;
            println!("sweep written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    harness::init_thread_pool_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
