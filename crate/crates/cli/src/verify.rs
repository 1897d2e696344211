use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use gapsvt::verify::{
    check_alignment_soundness, check_cost_bound, check_exact_dp, check_structural_conditions, mc_privacy_estimate,
    EnumerationConfig, McConfig, PrivacyReport, TrialPlan,
};
use gapsvt::{Error, Mechanism, Mutation};

use crate::workload::{data_error, WorkloadFile};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Align,
    Cost,
    Structural,
    DpExact,
    DpMc,
    All,
}

/// `threshold-shift=C`, `branch-shift=C` or `missing-j-term`.
#[derive(Debug, Clone, Copy)]
pub struct MutationArg(Mutation);

impl FromStr for MutationArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let value = |v: &str| v.parse::<f64>().map_err(|e| format!("bad shift `{v}`: {e}"));
        match s.split_once('=') {
            Some(("threshold-shift", v)) => Ok(MutationArg(Mutation::ThresholdShift(value(v)?))),
            Some(("branch-shift", v)) => Ok(MutationArg(Mutation::BranchShift(value(v)?))),
            None if s == "missing-j-term" => Ok(MutationArg(Mutation::MissingSecondTerm)),
            _ => Err(format!("unknown mutation `{s}`")),
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    /// Mechanism to verify; all three when omitted.
    #[arg(long)]
    mechanism: Option<Mechanism>,
    /// Random trials for the align, cost and structural suites.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, env = "GAPSVT_SEED")]
    seed: u64,
    /// Largest tape grid the dp-exact suite will enumerate.
    #[arg(long, default_value_t = 100_000_000)]
    grid_budget: u128,
    /// Integer workload for dp-exact, any workload for dp-mc.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Samples per side for dp-mc.
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    /// Gap bucket width for dp-mc.
    #[arg(long)]
    gap_bucket: Option<f64>,
    #[arg(long, hide = true)]
    inject_mutation: Option<MutationArg>,
}

fn trial_suites(args: &VerifyArgs, mechanism: Mechanism, suites: &[Suite]) -> Vec<PrivacyReport> {
    let mut plan = TrialPlan::new(mechanism, args.trials, args.seed);
    let clean = plan.clone();
    if let Some(MutationArg(m)) = args.inject_mutation {
        plan = plan.with_mutation(m);
    }
    suites
        .iter()
        .map(|suite| match suite {
            Suite::Align => check_alignment_soundness(&plan),
            Suite::Cost => check_cost_bound(&plan),
            _ => check_structural_conditions(&clean),
        })
        .collect()
}

fn workload_suite(args: &VerifyArgs, mechanism: Mechanism, suite: Suite) -> Result<PrivacyReport, CliError> {
    let path = args
        .workload
        .as_ref()
        .ok_or_else(|| CliError::Usage("--workload is required for dp-exact and dp-mc".into()))?;
    let file = WorkloadFile::load(path)?;
    let w = file.workload()?;
    if suite == Suite::DpExact {
        let config = EnumerationConfig { grid_budget: args.grid_budget, ..Default::default() };
        check_exact_dp(mechanism, &w, &config).map_err(|e| match e {
            Error::GridBudgetExceeded { points, budget } => CliError::Usage(format!(
                "enumeration grid has {points} points, budget is {budget}; \
                 raise --grid-budget to at least {points}, or use fewer queries or a larger epsilon"
            )),
            other => data_error(other),
        })
    } else {
        let mut config = McConfig::new(args.samples, args.seed);
        config.noise = file.noise();
        config.gap_bucket = args.gap_bucket;
        Ok(mc_privacy_estimate(mechanism, &w, &config).map_err(data_error)?.to_privacy_report())
    }
}

pub fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let mechanisms = match args.mechanism {
        Some(m) => vec![m],
        None => Mechanism::ALL.to_vec(),
    };
    let (trial, workload): (Vec<Suite>, Vec<Suite>) = match args.suite {
        Suite::All if args.workload.is_some() => {
            (vec![Suite::Align, Suite::Cost, Suite::Structural], vec![Suite::DpExact, Suite::DpMc])
        }
        Suite::All => (vec![Suite::Align, Suite::Cost, Suite::Structural], vec![]),
        s @ (Suite::DpExact | Suite::DpMc) => (vec![], vec![s]),
        s => (vec![s], vec![]),
    };

    let mut reports = Vec::new();
    for &m in &mechanisms {
        reports.extend(trial_suites(&args, m, &trial));
        for &s in &workload {
            reports.push(workload_suite(&args, m, s)?);
        }
    }

    let mut out = io::stdout().lock();
    for r in &reports {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    if reports.iter().all(PrivacyReport::passed) {
        Ok(())
    } else {
        Err(CliError::Verification)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mutations() {
        assert!(matches!("threshold-shift=2".parse::<MutationArg>().unwrap().0, Mutation::ThresholdShift(2.0)));
        assert!(matches!("branch-shift=0.5".parse::<MutationArg>().unwrap().0, Mutation::BranchShift(0.5)));
        assert!(matches!("missing-j-term".parse::<MutationArg>().unwrap().0, Mutation::MissingSecondTerm));
        assert!("threshold-shift".parse::<MutationArg>().is_err());
        assert!("nope=1".parse::<MutationArg>().is_err());
    }
}
