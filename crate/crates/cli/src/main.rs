use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fkeit_core::cli_io::{
    error_record, resolved_config, run_experiment, validate_config, write_error, write_outputs, ExperimentKind,
    RunConfig,
};
use fkeit_core::parallel::workers_from_env;
use fkeit_core::Error;

#[derive(Parser)]
#[command(name = "fkeit", version, about = "Monte Carlo EIT forward solves and effective conductivity estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and print it with defaults filled in.
    Validate { config: PathBuf },
    /// Potentials at probe points and electrode currents.
    Solve(RunArgs),
    /// Effective tensor and epsilon sweep.
    Homogenize(RunArgs),
    /// Mean squared displacement against a reference over a grid of horizons.
    Convergence(RunArgs),
    /// Deterministic finite-volume or cell-problem reference.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    validate_config(&text)
}

fn fail(err: &Error, out: Option<&Path>) -> ExitCode {
    eprintln!("{}", error_record(err));
    if let Some(dir) = out {
        write_error(dir, err);
    }
    ExitCode::from(err.exit_code() as u8)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> ExitCode {
    let cfg = match load(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e, args.out.as_deref()),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if cfg.experiment != kind {
        let err = Error::config(
            "experiment",
            format!("configuration is for `{}`, not `{}`", cfg.experiment.name(), kind.name()),
        );
        return fail(&err, Some(&out));
    }
    let default_workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let workers = workers_from_env(default_workers);
    match run_experiment(&cfg, workers).and_then(|r| write_outputs(&out, &r, workers)) {
        Ok(()) => {
            println!("{}", out.join("results.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&out)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate { config } => match load(config).and_then(|c| resolved_config(&c)) {
            Ok(v) => {
                println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, None),
        },
        Command::Solve(a) => run(ExperimentKind::Solve, a),
        Command::Homogenize(a) => run(ExperimentKind::Homogenize, a),
        Command::Convergence(a) => run(ExperimentKind::Convergence, a),
        Command::Oracle(a) => run(ExperimentKind::Oracle, a),
    }
}
