//! `occupancy`: reproducible occupation-time experiments from the command line.
//!
//! Exit codes: 0 success, 1 tolerance breach, 2 invalid configuration,
//! 3 numerical failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occupancy_core::analysis::Regime;

use config::{CommandKind, ExperimentConfig, Format, Which};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "occupancy", version, about = "Occupation times of binary splitting trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo; results do not depend on it.
    #[arg(long, global = true, env = "OCCUPANCY_WORKERS")]
    workers: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON config (or an earlier report); its values override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact E(A_K) from the killed Markov chain against the closed form.
    Verify(ModelArgs),
    /// Monte Carlo estimates of E(A_K) against the closed form.
    Simulate(ModelArgs),
    /// Solve for the w vector of the population process.
    SolveW(ModelArgs),
    /// Invert an observed extinction time or occupation time for δ.
    Estimate(EstimateArgs),
    /// Batch-birth or age-varying fertility runs that break insensitivity.
    Counterexample(CounterexampleArgs),
    /// Growth of the time spent below N+1 against ln N.
    TnGrowth(TnGrowthArgs),
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Built-in name (exp1, gamma22, mix, det1) or spec file; comma-separated for several.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    ntrunc: Option<usize>,
    #[command(flatten)]
    caps: CapArgs,
}

#[derive(Args, Default)]
struct CapArgs {
    /// 0 disables the population cap.
    #[arg(long)]
    population_cap: Option<u64>,
    #[arg(long)]
    event_cap: Option<u64>,
    #[arg(long)]
    time_cap: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Observed mean extinction time.
    #[arg(long)]
    from_t: Option<f64>,
    /// Observed mean occupation time of level `--level`.
    #[arg(long)]
    from_ak: Option<f64>,
    #[arg(long)]
    level: Option<usize>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
}

#[derive(Args)]
struct CounterexampleArgs {
    #[arg(long, value_enum)]
    which: Option<Which>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[command(flatten)]
    caps: CapArgs,
}

#[derive(Args)]
struct TnGrowthArgs {
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    reps: Option<u64>,
    /// Truncation levels N, comma-separated.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u64>>,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    match s {
        "subcritical" | "sub" => Ok(Regime::Subcritical),
        "supercritical" | "super" => Ok(Regime::Supercritical),
        "critical" => Ok(Regime::Critical),
        _ => Err(format!("unknown regime `{s}`")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ModelArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        c.dist = self.dist.or(c.dist.take());
        c.delta = self.delta.or(c.delta);
        set(&mut c.kmax, self.kmax);
        set(&mut c.reps, self.reps);
        set(&mut c.ntrunc, self.ntrunc);
        self.caps.apply(c);
    }
}

impl CapArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        set(&mut c.population_cap, self.population_cap);
        set(&mut c.event_cap, self.event_cap);
        c.time_cap = self.time_cap.or(c.time_cap);
    }
}

fn resolve(cli: Cli) -> Result<(ExperimentConfig, usize, Option<PathBuf>), CliError> {
    let kind = match &cli.command {
        Command::Verify(_) => CommandKind::Verify,
        Command::Simulate(_) => CommandKind::Simulate,
        Command::SolveW(_) => CommandKind::SolveW,
        Command::Estimate(_) => CommandKind::Estimate,
        Command::Counterexample(_) => CommandKind::Counterexample,
        Command::TnGrowth(_) => CommandKind::TnGrowth,
    };
    let mut c = ExperimentConfig::new(kind);
    set(&mut c.seed, cli.seed);
    set(&mut c.format, cli.format);
    match cli.command {
        Command::Verify(a) | Command::Simulate(a) | Command::SolveW(a) => a.apply(&mut c),
        Command::Estimate(a) => {
            c.from_t = a.from_t;
            c.from_ak = a.from_ak;
            set(&mut c.level, a.level);
            c.regime = a.regime;
        }
        Command::Counterexample(a) => {
            c.which = a.which;
            c.delta = a.delta;
            set(&mut c.reps, a.reps);
            set(&mut c.kmax, a.kmax);
            set(&mut c.batch_size, a.batch_size);
            a.caps.apply(&mut c);
        }
        Command::TnGrowth(a) => {
            c.dist = a.dist;
            c.delta = a.delta;
            set(&mut c.reps, a.reps);
            set(&mut c.levels, a.levels);
        }
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        c = c.overlay(&text)?;
    }
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Invalid("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok((c, workers, cli.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = resolve(cli).and_then(|(config, workers, out)| {
        let report = commands::run(&config, workers)?;
        let text = report.render();
        match out {
            Some(path) => std::fs::write(&path, text)
                .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?,
            None => print!("{text}"),
        }
        Ok(report.pass)
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("tolerance breach; see the report summary");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
