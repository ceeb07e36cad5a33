use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bbq_core::error::Error;
use bbq_core::scenarios::metrics::{render_summary, write_run_csv, write_summary_csv, write_sweep_csv};
use bbq_core::scenarios::suites::{self, SUITE_NAMES};
use bbq_core::scenarios::{run_scenario, sweep, Axis, RunOutput, ScenarioConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_UNKNOWN_SUITE: u8 = 2;
const EXIT_OUT_DIR: u8 = 3;

#[derive(Parser)]
#[command(name = "bbqsim", version, about = "BBR / BBQ bottleneck simulator")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file; writes run.csv and summary.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in suite; writes one trace per run plus summary.csv.
    Suite {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter of a scenario file; writes summary.csv.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// KEY=V1,V2,...
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    UnknownSuite(String),
    OutDir(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::UnknownSuite(name)) => {
            eprintln!("error: unknown suite `{name}`; valid names: {}", SUITE_NAMES.join(", "));
            ExitCode::from(EXIT_UNKNOWN_SUITE)
        }
        Err(Failure::OutDir(dir, e)) => {
            eprintln!("error: cannot write to {}: {e}", dir.display());
            ExitCode::from(EXIT_OUT_DIR)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_toml(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Creates `dir` and checks that it accepts files before any work starts.
fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    let fail = |e| Failure::OutDir(dir.to_path_buf(), e);
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".bbqsim-write-test");
    File::create(&probe).map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    File::create(dir.join(name))
        .map(BufWriter::new)
        .map_err(|e| Failure::OutDir(dir.to_path_buf(), e))
}

fn write_csv<F, E>(dir: &Path, name: &str, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    E: std::fmt::Display,
{
    let mut w = create(dir, name)?;
    f(&mut w).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
    w.flush().map_err(|e| Failure::OutDir(dir.to_path_buf(), e))
}

fn report(quiet: bool, label: &str, out: &RunOutput) {
    if !quiet {
        println!("{label}: {} events", out.events);
        print!("{}", render_summary(&out.summary));
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { scenario, out } => {
            let cfg = load(scenario, cli.seed)?;
            prepare_out_dir(out)?;
            if !cli.quiet {
                eprintln!("running {} ({} flows)", scenario.display(), cfg.flows.len());
            }
            let result = run_scenario(&cfg).map_err(Error::from)?;
            write_csv(out, "run.csv", |w| write_run_csv(w, &result.samples))?;
            write_csv(out, "summary.csv", |w| write_summary_csv(w, &result.summary))?;
            report(cli.quiet, &scenario.display().to_string(), &result);
        }
        Command::Suite { name, out } => {
            let mut runs = suites::suite(name).ok_or_else(|| Failure::UnknownSuite(name.clone()))?;
            if let Some(s) = cli.seed {
                for r in &mut runs {
                    r.config.seed = s;
                }
            }
            prepare_out_dir(out)?;
            if !cli.quiet {
                eprintln!("suite {name}: {} runs", runs.len());
            }
            let results = suites::run_all(&runs).map_err(Error::from)?;
            let mut table = Vec::with_capacity(results.len());
            for (label, result) in results {
                write_csv(out, &format!("{label}.csv"), |w| write_run_csv(w, &result.samples))?;
                report(cli.quiet, &label, &result);
                table.push(("run".to_string(), label, result.summary));
            }
            write_csv(out, "summary.csv", |w| write_sweep_csv(w, &table))?;
        }
        Command::Sweep { scenario, axis, out } => {
            let cfg = load(scenario, cli.seed)?;
            let axis: Axis = axis.parse().map_err(|e| Failure::Config(format!("{e}")))?;
            prepare_out_dir(out)?;
            if !cli.quiet {
                eprintln!("sweeping {} over {} points", axis.key, axis.values.len());
            }
            let results = sweep(&cfg, &axis).map_err(Error::from)?;
            let mut table = Vec::with_capacity(results.len());
            for (value, result) in results {
                report(cli.quiet, &format!("{}={value}", axis.key), &result);
                table.push((axis.key.clone(), value, result.summary));
            }
            write_csv(out, "summary.csv", |w| write_sweep_csv(w, &table))?;
        }
    }
    Ok(())
}
