//! `gapsvt`: run sparse vector mechanisms on workload files and verify
//! their privacy alignments.
//!
//! Exit codes: 0 on success or a passing verdict, 1 when a verification
//! suite finds a counterexample, 2 on usage or data errors.

mod counting;
mod record;
mod verify;
mod workload;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gapsvt::{AdaptiveBudget, Mechanism, Side, SvtBudget};
use rayon::prelude::*;
use thiserror::Error;

use record::RunRecord;
use workload::{data_error, load_tape, WorkloadFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed")]
    Verification,
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gapsvt", version, about = "Sparse vector mechanisms with executable alignment checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a mechanism on a workload with seeded noise, one JSON line per run.
    Run(RunArgs),
    /// Run verification suites and print one JSON report per suite.
    Verify(verify::VerifyArgs),
    /// Print the budget split for a mechanism.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SideArg {
    D,
    Dprime,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::D => Side::D,
            SideArg::Dprime => Side::DPrime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// svt, svt-gap or adaptive-gap.
    #[arg(long)]
    mechanism: Mechanism,
    /// Workload JSON file.
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, value_enum, default_value = "d")]
    side: SideArg,
    /// Noise seed; run `r` uses `seed + r`.
    #[arg(long, env = "GAPSVT_SEED", required_unless_present = "tape")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Explicit noise tape (JSON) in place of seeded noise.
    #[arg(long, hide = true, conflicts_with = "runs")]
    tape: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    mechanism: Mechanism,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let file = WorkloadFile::load(&args.workload)?;
    let w = file.workload()?;
    let side = Side::from(args.side);
    let mechanism = args.mechanism;

    let records: Vec<RunRecord> = match (&args.tape, args.seed) {
        (Some(path), _) => {
            let tape = load_tape(path)?;
            let budget = mechanism.budget_for(&w).map_err(data_error)?;
            let exec = mechanism.execute(&w, side, &budget, &tape).map_err(data_error)?;
            vec![RunRecord::new(mechanism, None, side, &exec)]
        }
        (None, Some(seed)) => (0..args.runs)
            .into_par_iter()
            .map(|r| {
                let seed = seed.wrapping_add(r);
                let (_, exec) = gapsvt::run_sampled(mechanism, &w, side, file.noise(), seed).map_err(data_error)?;
                Ok(RunRecord::new(mechanism, Some(seed), side, &exec))
            })
            .collect::<Result<_, CliError>>()?,
        (None, None) => return Err(CliError::Usage("--seed or GAPSVT_SEED is required".into())),
    };

    let mut out = io::BufWriter::new(io::stdout().lock());
    for record in &records {
        match args.format {
            Format::Json => serde_json::to_writer(&mut out, record).map_err(io::Error::from)?,
            Format::Text => out.write_all(record.to_text().as_bytes())?,
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// The split sums are checked in exact arithmetic; when they hold the sum
/// is `epsilon` itself.
fn identity(holds: bool, epsilon: f64) -> String {
    if holds {
        epsilon.to_string()
    } else {
        format!("{epsilon} FAILS")
    }
}

fn cmd_budget(args: BudgetArgs) -> Result<(), CliError> {
    let line = match args.mechanism {
        Mechanism::Svt | Mechanism::SvtGap => {
            let b = SvtBudget::split(args.epsilon, args.k).map_err(data_error)?;
            format!("ε0={} ε1={}; ε0+2kε1={}", b.epsilon0(), b.epsilon1(), identity(b.identity_holds(), args.epsilon))
        }
        Mechanism::AdaptiveGap => {
            let b = AdaptiveBudget::split(args.epsilon, args.k).map_err(data_error)?;
            let holds = b.split_identity_holds(args.k);
            format!(
                "ε0={} ε1={} ε2={}; ε0+2kε2={}",
                b.epsilon0(),
                b.epsilon1(),
                b.epsilon2(),
                identity(holds, args.epsilon)
            )
        }
    };
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => verify::cmd_verify(args),
        Command::Budget(args) => cmd_budget(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Verification) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
