//! `cowboys`: run optimizers, geometry diagnostics and validation suites.
//!
//! Exit codes: 0 on success, 1 on runtime or validation failure, 2 on bad
//! arguments or configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cowboys::config::RunConfig;
use cowboys::decoder::Decoder;
use cowboys::diagnostics::{annulus_report, box_shell_overlap, shell_bounds};
use cowboys::optimizer::{run_with, Strategy};
use cowboys::trace::{append_csv_row, write_run};
use cowboys::validation::{run_suite, Suite};
use cowboys::Error;

#[derive(Parser)]
#[command(name = "cowboys", version, about = "Structure-space Bayesian optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimizer and write trace.csv, evaluations.jsonl and summary.txt.
    Run(RunArgs),
    /// Prior-geometry diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
    /// Run an oracle validation suite.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Cowboys,
    Lsbo,
    Random,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config with dotted keys.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed and COWBOYS_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Search-box half-width for lsbo; overrides lsbo.delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Maximum worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Write measured per-iteration wall time into trace.csv (breaks
    /// byte-identical traces).
    #[arg(long)]
    record_wall_clock: bool,
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Radial statistics of standard normal draws.
    Annulus {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a row to this diagnostics CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of a uniform box [−δ, δ]^d inside the prior's shell.
    Boxshell {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Kernel,
    Gp,
    Qei,
    Pcn,
    All,
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(value_enum)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    /// Errors caused by the inputs rather than the run itself.
    fn classify(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

const DIAG_HEADER: &str = "kind,dim,n,seed,delta,mean_radius,sd_radius,shell_fraction,overlap";

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("COWBOYS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("COWBOYS_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = RunConfig::from_toml_str(&text, env_seed()?).map_err(Failure::classify)?;
    if let Some(seed) = seed {
        config.seed = seed;
        config.validate().map_err(Failure::classify)?;
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_config(&args.config, args.seed)?;
    let strategy = match args.strategy {
        StrategyArg::Cowboys => Strategy::Cowboys,
        StrategyArg::Random => Strategy::Random,
        StrategyArg::Lsbo => {
            let delta = args
                .delta
                .or(config.lsbo.delta)
                .ok_or_else(|| Failure::Usage("lsbo needs --delta or lsbo.delta in the config".into()))?;
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Failure::Usage(format!("delta must be positive, got {delta}")));
            }
            Strategy::Lsbo { delta }
        }
    };
    let spec = config.decoder_spec().map_err(|e| Failure::Usage(e.to_string()))?;
    let decoder = Decoder::launch(spec, config.chains()).map_err(Failure::classify)?;
    let objective = config.objective_spec(&decoder).map_err(Failure::classify)?;
    let record =
        run_with(strategy, &config, &decoder, &objective, args.workers).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_run(&args.out, &record, args.record_wall_clock).map_err(|e| Failure::Runtime(e.to_string()))?;
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} evaluations, final best {}, decoder calls {}, GP predictions {}; wrote {}",
        record.strategy.as_str(),
        record.evaluations.len(),
        record.final_best(),
        record.decoder_calls,
        record.gp_predicts,
        args.out.display()
    );
    Ok(())
}

fn cmd_diag(cmd: DiagCommand) -> Result<(), Failure> {
    match cmd {
        DiagCommand::Annulus { dim, n, seed, out } => {
            if dim == 0 || n == 0 {
                return Err(Failure::Usage("--dim and --n must be at least 1".into()));
            }
            let stats = annulus_report(dim, n, seed).map_err(Failure::classify)?;
            let (lo, hi) = shell_bounds(dim);
            let frac = stats.reference_shell_fraction();
            println!("dim = {dim}");
            println!("n = {n}");
            println!("mean_radius = {}", stats.mean_radius);
            println!("sd_radius = {}", stats.sd_radius);
            println!("sqrt_dim = {}", (dim as f64).sqrt());
            println!("shell = [{lo}, {hi}]");
            println!("shell_fraction = {frac}");
            if let Some(path) = out {
                let row = format!("annulus,{dim},{n},{seed},,{},{},{frac},", stats.mean_radius, stats.sd_radius);
                append_csv_row(&path, DIAG_HEADER, &row).map_err(|e| Failure::Runtime(e.to_string()))?;
            }
        }
        DiagCommand::Boxshell { dim, delta, n, seed, out } => {
            if dim == 0 || n == 0 || !(delta > 0.0 && delta.is_finite()) {
                return Err(Failure::Usage("--dim and --n must be at least 1 and --delta positive".into()));
            }
            let overlap = box_shell_overlap(dim, delta, n, seed);
            let (lo, hi) = shell_bounds(dim);
            println!("dim = {dim}");
            println!("delta = {delta}");
            println!("n = {n}");
            println!("shell = [{lo}, {hi}]");
            println!("typical_box_radius = {}", (dim as f64 / 3.0).sqrt() * delta);
            println!("overlap = {overlap}");
            if let Some(path) = out {
                let row = format!("boxshell,{dim},{n},{seed},{delta},,,,{overlap}");
                append_csv_row(&path, DIAG_HEADER, &row).map_err(|e| Failure::Runtime(e.to_string()))?;
            }
        }
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let suite = match args.suite {
        SuiteArg::Kernel => Suite::Kernel,
        SuiteArg::Gp => Suite::Gp,
        SuiteArg::Qei => Suite::Qei,
        SuiteArg::Pcn => Suite::Pcn,
        SuiteArg::All => Suite::All,
    };
    let checks = run_suite(suite, args.seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("failing checks: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Diag(cmd) => cmd_diag(cmd),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
