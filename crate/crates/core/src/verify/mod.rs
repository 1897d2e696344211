//! Executable privacy checks.
//!
//! Three families of checks live here:
//!
//! * randomized trial suites ([`check_alignment_soundness`],
//!   [`check_cost_bound`], [`check_structural_conditions`]) that draw
//!   workloads and tapes from a [`TrialPlan`] and test the alignment
//!   obligations on each one;
//! * an exact oracle ([`enumerate_output_dist`], [`max_privacy_loss`]) that
//!   enumerates every discrete Laplace tape in a box and compares the output
//!   distributions on `D` and `D'` against `e^epsilon`;
//! * a sampling heuristic ([`mc_privacy_estimate`]) for instances too big to
//!   enumerate.
//!
//! Trials are independent and run in parallel. Trial `i` draws from its own
//! ChaCha stream `(master seed, i)`, so any witness can be regenerated from
//! the plan and its trial index alone.

mod cost;
mod enumerate;
mod montecarlo;
mod soundness;
mod structural;
mod trials;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::Mutation;
use crate::mechanism::Mechanism;
use crate::model::{NoiseTape, OutputSequence, Side, Workload};
use crate::noise::NoiseKind;

pub use cost::check_cost_bound;
pub use enumerate::{
    check_exact_dp, enumerate_output_dist, grid_points, max_privacy_loss, sample_output_dist, total_variation, BoxSpec,
    EmpiricalDistribution, EnumerationConfig, OutputDistribution, PrivacyLoss, LOSS_TOLERANCE,
};
pub use montecarlo::{mc_privacy_estimate, FlaggedOutput, McConfig, McReport};
pub use soundness::{check_alignment_soundness, replay_soundness_witness};
pub use structural::check_structural_conditions;
pub use trials::{Trial, WorkloadGenerator};

/// Absolute slack on the alignment cost bound.
pub const COST_TOLERANCE: f64 = 1e-12;

/// Per-gap tolerance when comparing outputs of non-integer workloads.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// A randomized verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub mechanism: Mechanism,
    pub generator: WorkloadGenerator,
    pub trials: u64,
    pub seed: u64,
    /// Tape distribution. Integer workloads default to discrete Laplace so
    /// that every comparison is exact.
    pub noise: NoiseKind,
    /// Deliberately broken alignment, for harness self-tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

impl TrialPlan {
    pub fn new(mechanism: Mechanism, trials: u64, seed: u64) -> Self {
        let generator = WorkloadGenerator::default();
        Self { mechanism, noise: generator.default_noise(), generator, trials, seed, mutation: None }
    }

    pub fn with_generator(mut self, generator: WorkloadGenerator) -> Self {
        self.noise = generator.default_noise();
        self.generator = generator;
        self
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = Some(mutation);
        self
    }

    /// Outputs must match exactly when both workload and tape are integral.
    pub fn exact(&self) -> bool {
        self.generator.integral && self.noise == NoiseKind::DiscreteLaplace
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// A concrete counterexample. `workload` is already oriented: the failing
/// check ran the mechanism on side `D` of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub trial: u64,
    pub tape_seed: u64,
    /// Side of the original workload that played the role of `D`.
    pub orientation: Side,
    pub workload: Workload,
    pub tape: NoiseTape,
    pub omega: OutputSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned_tape: Option<NoiseTape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<OutputSequence>,
    pub detail: String,
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub verdict: Verdict,
    pub suite: String,
    pub mechanism: Mechanism,
    pub trials: u64,
    pub checks: u64,
    pub violations: u64,
    pub max_cost: Option<f64>,
    pub max_log_ratio: Option<f64>,
    pub truncation_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Per-trial findings, merged associatively across trials.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tally {
    pub checks: u64,
    pub violations: u64,
    pub max_cost: Option<f64>,
    pub witness: Option<Witness>,
}

impl Tally {
    pub fn check(&mut self, ok: bool, witness: impl FnOnce() -> Witness) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    pub fn observe_cost(&mut self, cost: f64) {
        self.max_cost = Some(self.max_cost.map_or(cost, |m| m.max(cost)));
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        self.checks += other.checks;
        self.violations += other.violations;
        self.max_cost = match (self.max_cost, other.max_cost) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        // First witness by trial index keeps reports independent of
        // scheduling.
        self.witness = match (self.witness, other.witness) {
            (Some(a), Some(b)) => Some(if b.trial < a.trial { b } else { a }),
            (a, b) => a.or(b),
        };
        self
    }

    pub fn into_report(self, suite: &str, plan: &TrialPlan, mut notes: Vec<String>) -> PrivacyReport {
        notes.push(if plan.exact() {
            "comparison: exact".to_string()
        } else {
            format!("comparison: gaps within {GAP_TOLERANCE:e}")
        });
        PrivacyReport {
            verdict: if self.violations == 0 { Verdict::Pass } else { Verdict::Fail },
            suite: suite.to_string(),
            mechanism: plan.mechanism,
            trials: plan.trials,
            checks: self.checks,
            violations: self.violations,
            max_cost: self.max_cost,
            max_log_ratio: None,
            truncation_loss: None,
            witness: self.witness,
            notes,
        }
    }
}

/// Runs `per_trial` over every trial of the plan in parallel.
pub(crate) fn run_trials<F>(plan: &TrialPlan, per_trial: F) -> Tally
where
    F: Fn(&Trial, &mut Tally) + Sync,
{
    (0..plan.trials)
        .into_par_iter()
        .map(|index| {
            let mut tally = Tally::default();
            match Trial::generate(plan, index) {
                Ok(trial) => per_trial(&trial, &mut tally),
                Err(e) => tally.check(false, || Witness {
                    trial: index,
                    tape_seed: 0,
                    orientation: Side::D,
                    workload: Workload::new(vec![], 0.0, 1, 1.0),
                    tape: NoiseTape::single(0.0, vec![]),
                    omega: OutputSequence::default(),
                    aligned_tape: None,
                    replay: None,
                    detail: format!("trial generation failed: {e}"),
                }),
            }
            tally
        })
        .reduce(Tally::default, Tally::merge)
}

/// What the trial suites deliberately leave unchecked.
pub(crate) fn uncovered_condition_note() -> String {
    "termination, tape consumption and shift structure are checked; \
     side conditions of the alignment argument without an executable form are not"
        .to_string()
}
