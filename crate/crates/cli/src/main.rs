mod config;
mod error;
mod experiments;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use error::{CliError, CliResult};

const THREADS_ENV: &str = "CLT_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "clt-lab", version = output::version(), about = "Monte Carlo CLT-rate experiments")]
struct Cli {
    /// Worker threads; overrides CLT_LAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output`, then `results/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget_secs: Option<f64>,
    },
    /// Summarize results.json files under a directory as a markdown table.
    Report { dir: PathBuf },
    /// Check the assignment solver against brute force.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn configure_threads(flag: Option<usize>) -> CliResult<usize> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => {
                Some(v.trim().parse().map_err(|_| CliError::validation(THREADS_ENV, format!("not a count: `{v}`")))?)
            }
            Err(_) => None,
        },
    };
    if let Some(n) = requested {
        if n == 0 {
            return Err(CliError::validation("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn run(config: PathBuf, out: Option<PathBuf>, overrides: Overrides, threads: usize) -> CliResult<bool> {
    let cfg = ExperimentConfig::load(&config, &overrides)?;
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
    let started = Instant::now();
    let (tx, rx) = mpsc::channel();
    let worker_cfg = cfg.clone();
    std::thread::spawn(move || {
        let _ = tx.send(experiments::run(&worker_cfg));
    });
    let outcome = match cfg.budget_secs {
        Some(b) => match rx.recv_timeout(Duration::from_secs_f64(b)) {
            Ok(r) => r?,
            Err(mpsc::RecvTimeoutError::Timeout) => return Err(CliError::BudgetExceeded(b)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(CliError::Other("experiment worker panicked".into()))
            }
        },
        None => rx.recv().map_err(|_| CliError::Other("experiment worker panicked".into()))??,
    };
    let wall = started.elapsed().as_secs_f64();
    output::write_artifacts(&dir, &cfg, &outcome, wall, threads)?;
    let r = &outcome.results;
    let status = match r.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "DONE",
    };
    println!("{status} {} ({}): {}", r.name, r.experiment, r.summary);
    println!("artifacts in {}", dir.display());
    Ok(r.passed != Some(false))
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    let threads = configure_threads(cli.threads)?;
    match cli.command {
        Command::Run { config, out, seed, budget_secs } => run(config, out, Overrides { seed, budget_secs }, threads),
        Command::Report { dir } => {
            let results = report::collect(&dir)?;
            let (table, any_fail) = report::render(&results);
            print!("{table}");
            Ok(!any_fail)
        }
        Command::Selftest { seed, instances } => {
            let r = clt_lab::transport::selftest(instances, seed)?;
            println!("{}", r.summary());
            for f in &r.failures {
                println!("  {f}");
            }
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
