//! Tape-driven sparse vector mechanisms.
//!
//! Every mechanism here is a pure function of a workload side and a noise
//! tape. Sampling lives in [`run_sampled`], which draws a tape from the
//! mechanism's budget split and then calls the deterministic run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::CostWeights;
use crate::budget::{AdaptiveBudget, CostLedger, SvtBudget};
use crate::error::{Error, Result};
use crate::model::{check_workload, Answer, Branch, Layout, NoiseTape, OutputSequence, Side, Workload};
use crate::noise::{sample_tape, NoiseKind, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// Classic sparse vector: above/below answers only.
    #[serde(rename = "svt")]
    Svt,
    /// Sparse vector releasing the noisy gap with every positive answer.
    #[serde(rename = "svt-gap")]
    SvtGap,
    /// Two-attempt sparse vector with gap and a running cost ledger.
    #[serde(rename = "adaptive-gap")]
    AdaptiveGap,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Svt, Mechanism::SvtGap, Mechanism::AdaptiveGap];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Svt => "svt",
            Mechanism::SvtGap => "svt-gap",
            Mechanism::AdaptiveGap => "adaptive-gap",
        }
    }

    pub fn layout(self) -> Layout {
        match self {
            Mechanism::Svt | Mechanism::SvtGap => Layout::Single,
            Mechanism::AdaptiveGap => Layout::Paired,
        }
    }

    /// Default budget split for `(epsilon, k)`.
    pub fn default_budget(self, epsilon: f64, k: u32) -> Result<Budget> {
        match self {
            Mechanism::Svt | Mechanism::SvtGap => SvtBudget::split(epsilon, k).map(Budget::Svt),
            Mechanism::AdaptiveGap => AdaptiveBudget::split(epsilon, k).map(Budget::Adaptive),
        }
    }

    pub fn budget_for(self, w: &Workload) -> Result<Budget> {
        self.default_budget(w.epsilon, w.k)
    }

    /// Validates the workload, then runs the mechanism on `side`.
    pub fn execute(self, w: &Workload, side: Side, budget: &Budget, tape: &NoiseTape) -> Result<Execution> {
        check_workload(w)?;
        let mut answers = Vec::with_capacity(w.len());
        let trace = self.execute_into(w, side, budget, tape, &mut answers)?;
        Ok(Execution {
            output: OutputSequence::new(answers),
            processed: trace.processed,
            consumed: trace.consumed,
            ledger: trace.ledger,
        })
    }

    /// Runs without validating `w`, appending answers to a cleared `out`.
    pub(crate) fn execute_into(
        self,
        w: &Workload,
        side: Side,
        budget: &Budget,
        tape: &NoiseTape,
        out: &mut Vec<Answer>,
    ) -> Result<Trace> {
        out.clear();
        match (self, budget) {
            (Mechanism::Svt, _) => svt_core(w, side, tape, false, out),
            (Mechanism::SvtGap, _) => svt_core(w, side, tape, true, out),
            (Mechanism::AdaptiveGap, Budget::Adaptive(b)) => adaptive_core(w, side, b, tape, out),
            (Mechanism::AdaptiveGap, Budget::Svt(_)) => {
                Err(Error::InvalidParameter { name: "budget", reason: "adaptive-gap needs an adaptive budget".into() })
            }
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::InvalidParameter {
            name: "mechanism",
            reason: format!("unknown mechanism `{s}` (expected svt, svt-gap or adaptive-gap)"),
        })
    }
}

/// Budget of either mechanism family.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Budget {
    Svt(SvtBudget),
    Adaptive(AdaptiveBudget),
}

impl Budget {
    pub fn epsilon(&self) -> f64 {
        match self {
            Budget::Svt(b) => b.epsilon(),
            Budget::Adaptive(b) => b.epsilon(),
        }
    }

    pub fn noise_spec(&self, kind: NoiseKind) -> NoiseSpec {
        match self {
            Budget::Svt(b) => b.noise_spec(kind),
            Budget::Adaptive(b) => b.noise_spec(kind),
        }
    }

    /// Per-unit-shift weights of the alignment cost.
    pub fn cost_weights(&self) -> CostWeights {
        match self {
            Budget::Svt(b) => CostWeights::single(b.epsilon0(), b.epsilon1()),
            Budget::Adaptive(b) => CostWeights::paired(b.epsilon0(), b.epsilon1(), b.epsilon2()),
        }
    }

    pub fn adaptive(&self) -> Option<&AdaptiveBudget> {
        match self {
            Budget::Adaptive(b) => Some(b),
            Budget::Svt(_) => None,
        }
    }
}

/// Result of one deterministic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub output: OutputSequence,
    /// Queries examined before stopping.
    pub processed: usize,
    /// Tape coordinates read, threshold included.
    pub consumed: usize,
    /// Present for the adaptive mechanism only.
    pub ledger: Option<CostLedger>,
}

#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub processed: usize,
    pub consumed: usize,
    pub ledger: Option<CostLedger>,
}

fn svt_core(w: &Workload, side: Side, tape: &NoiseTape, with_gap: bool, out: &mut Vec<Answer>) -> Result<Trace> {
    let noisy_threshold = w.threshold + tape.threshold_noise;
    let mut count = 0u32;
    let mut processed = 0;
    for i in 0..w.len() {
        let eta = tape.single_at(i)?;
        let gap = w.value(i, side) + eta - noisy_threshold;
        processed += 1;
        if gap >= 0.0 {
            out.push(if with_gap { Answer::TopGap { gap, branch: Branch::Plain } } else { Answer::Top });
            count += 1;
            if count >= w.k {
                break;
            }
        } else {
            out.push(Answer::Bot);
        }
    }
    Ok(Trace { processed, consumed: 1 + processed, ledger: None })
}

fn adaptive_core(
    w: &Workload,
    side: Side,
    budget: &AdaptiveBudget,
    tape: &NoiseTape,
    out: &mut Vec<Answer>,
) -> Result<Trace> {
    let sigma = w.sigma.ok_or(Error::InvalidParameter { name: "sigma", reason: "required by adaptive-gap".into() })?;
    let noisy_threshold = w.threshold + tape.threshold_noise;
    let mut ledger = CostLedger::new(budget);
    let mut processed = 0;
    for i in 0..w.len() {
        let (xi, eta) = tape.paired_at(i)?;
        let q = w.value(i, side);
        processed += 1;
        let first = q + xi - noisy_threshold;
        let branch = if first >= sigma {
            out.push(Answer::TopGap { gap: first, branch: Branch::First });
            Some(Branch::First)
        } else {
            let second = q + eta - noisy_threshold;
            if second >= 0.0 {
                out.push(Answer::TopGap { gap: second, branch: Branch::Second });
                Some(Branch::Second)
            } else {
                out.push(Answer::Bot);
                None
            }
        };
        ledger.record(budget, i, branch);
        if !budget.guard_allows(ledger.first_count, ledger.second_count) {
            break;
        }
    }
    if !budget.within_total(ledger.first_count, ledger.second_count) {
        return Err(Error::BudgetInvariantViolation(format!(
            "ledger ended at {} > epsilon {}",
            ledger.running_cost,
            budget.epsilon()
        )));
    }
    Ok(Trace { processed, consumed: 1 + 2 * processed, ledger: Some(ledger) })
}

/// Sparse vector with gap on `side`.
pub fn svt_gap_run(w: &Workload, side: Side, tape: &NoiseTape) -> Result<OutputSequence> {
    let budget = Mechanism::SvtGap.budget_for(w)?;
    Ok(Mechanism::SvtGap.execute(w, side, &budget, tape)?.output)
}

/// Classic sparse vector on `side`: the gap run with gaps withheld.
pub fn svt_classic_run(w: &Workload, side: Side, tape: &NoiseTape) -> Result<OutputSequence> {
    let budget = Mechanism::Svt.budget_for(w)?;
    Ok(Mechanism::Svt.execute(w, side, &budget, tape)?.output)
}

/// Adaptive sparse vector with gap on `side`.
pub fn adaptive_svt_gap_run(
    w: &Workload,
    side: Side,
    budget: &AdaptiveBudget,
    tape: &NoiseTape,
) -> Result<(OutputSequence, CostLedger)> {
    let exec = Mechanism::AdaptiveGap.execute(w, side, &Budget::Adaptive(budget.clone()), tape)?;
    Ok((exec.output, exec.ledger.expect("adaptive runs carry a ledger")))
}

/// Draws a tape of length `w.len()` at the default budget's scales and runs
/// the mechanism. Returns the tape alongside the execution for replay.
pub fn run_sampled(
    mechanism: Mechanism,
    w: &Workload,
    side: Side,
    kind: NoiseKind,
    seed: u64,
) -> Result<(NoiseTape, Execution)> {
    check_workload(w)?;
    let budget = mechanism.budget_for(w)?;
    let spec = budget.noise_spec(kind);
    let tape = sample_tape(&spec, mechanism.layout(), w.len(), seed)?;
    let exec = mechanism.execute(w, side, &budget, &tape)?;
    Ok((tape, exec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn same(values: &[f64], threshold: f64, k: u32, epsilon: f64) -> Workload {
        let pairs: Vec<_> = values.iter().map(|&v| (v, v)).collect();
        Workload::from_values(&pairs, threshold, k, epsilon)
    }

    fn gap(g: f64) -> Answer {
        Answer::TopGap { gap: g, branch: Branch::Plain }
    }

    #[test]
    fn svt_gap_zero_noise_traces() {
        let w = same(&[5.0, 3.0, 7.0], 4.0, 2, 1.0);
        let tape = NoiseTape::zeros(Layout::Single, 3);
        assert_eq!(svt_gap_run(&w, Side::D, &tape).unwrap().answers, vec![gap(1.0), Answer::Bot, gap(3.0)]);
        let w = same(&[5.0, 3.0, 7.0], 4.0, 1, 1.0);
        assert_eq!(svt_gap_run(&w, Side::D, &tape).unwrap().answers, vec![gap(1.0)]);
    }

    #[test]
    fn svt_gap_uses_threshold_noise() {
        let w = same(&[5.0], 4.0, 1, 1.0);
        let tape = NoiseTape::single(-2.0, vec![0.0]);
        assert_eq!(svt_gap_run(&w, Side::D, &tape).unwrap().answers, vec![gap(3.0)]);
    }

    #[test]
    fn comparison_is_inclusive() {
        let w = same(&[4.0], 4.0, 1, 1.0);
        let tape = NoiseTape::zeros(Layout::Single, 1);
        assert_eq!(svt_gap_run(&w, Side::D, &tape).unwrap().answers, vec![gap(0.0)]);
    }

    #[test]
    fn classic_erases_gaps() {
        let w = same(&[5.0, 3.0, 7.0], 4.0, 2, 1.0);
        let tape = NoiseTape::zeros(Layout::Single, 3);
        assert_eq!(svt_classic_run(&w, Side::D, &tape).unwrap().answers, vec![Answer::Top, Answer::Bot, Answer::Top]);
        let w = same(&[5.0, 3.0, 7.0], 4.0, 1, 1.0);
        assert_eq!(svt_classic_run(&w, Side::D, &tape).unwrap().answers, vec![Answer::Top]);
    }

    #[test]
    fn runs_on_the_requested_side() {
        let w = Workload::from_values(&[(5.0, 4.0)], 4.0, 1, 1.0);
        let tape = NoiseTape::zeros(Layout::Single, 1);
        assert_eq!(svt_gap_run(&w, Side::DPrime, &tape).unwrap().answers, vec![gap(0.0)]);
    }

    #[test]
    fn short_tape_is_an_error() {
        let w = same(&[0.0, 0.0, 0.0], 4.0, 1, 1.0);
        let tape = NoiseTape::zeros(Layout::Single, 2);
        assert_eq!(svt_gap_run(&w, Side::D, &tape), Err(Error::TapeExhausted { requested: 2, available: 2 }));
        // A tape that is only as long as the consumed prefix is fine.
        let w = same(&[9.0, 0.0, 0.0], 4.0, 1, 1.0);
        assert!(svt_gap_run(&w, Side::D, &NoiseTape::zeros(Layout::Single, 1)).is_ok());
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let w = same(&[0.0], 4.0, 1, 1.0);
        assert!(matches!(
            svt_gap_run(&w, Side::D, &NoiseTape::zeros(Layout::Paired, 1)),
            Err(Error::LayoutMismatch { .. })
        ));
        let w = w.with_sigma(1.0);
        let b = AdaptiveBudget::split(1.0, 1).unwrap();
        assert!(matches!(
            adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Single, 1)),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn sensitivity_gate_precedes_noise() {
        let w = Workload::from_values(&[(5.0, 3.0)], 4.0, 1, 1.0);
        // Empty tape would otherwise fail with TapeExhausted.
        let tape = NoiseTape::single(0.0, vec![]);
        assert!(matches!(svt_gap_run(&w, Side::D, &tape), Err(Error::SensitivityViolation { index: 0, .. })));
    }

    #[test]
    fn adaptive_first_branch_then_guard_stops() {
        let w = same(&[10.0, 10.0], 4.0, 1, 1.0).with_sigma(2.0);
        let b = AdaptiveBudget::split(1.0, 1).unwrap();
        let (out, ledger) = adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Paired, 2)).unwrap();
        assert_eq!(out.answers, vec![Answer::TopGap { gap: 6.0, branch: Branch::First }]);
        assert_eq!(ledger.running_cost, 0.75);
    }

    #[test]
    fn adaptive_second_branch() {
        let w = same(&[5.0], 4.0, 1, 1.0).with_sigma(2.0);
        let b = AdaptiveBudget::split(1.0, 1).unwrap();
        let (out, ledger) = adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Paired, 1)).unwrap();
        assert_eq!(out.answers, vec![Answer::TopGap { gap: 1.0, branch: Branch::Second }]);
        assert_eq!(ledger.running_cost, 1.0);
    }

    #[test]
    fn adaptive_all_below() {
        let w = same(&[0.0, 0.0], 4.0, 1, 1.0).with_sigma(2.0);
        let b = AdaptiveBudget::split(1.0, 1).unwrap();
        let (out, ledger) = adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Paired, 2)).unwrap();
        assert_eq!(out.answers, vec![Answer::Bot, Answer::Bot]);
        assert_eq!(ledger.running_cost, 0.5);
        assert_eq!(ledger.events.len(), 2);
    }

    #[test]
    fn adaptive_needs_sigma() {
        let w = same(&[0.0], 4.0, 1, 1.0);
        let b = AdaptiveBudget::split(1.0, 1).unwrap();
        assert!(matches!(
            adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Paired, 1)),
            Err(Error::InvalidParameter { name: "sigma", .. })
        ));
    }

    #[test]
    fn adaptive_second_branch_answers_exhaust_budget_at_k() {
        // With the default split k second-branch answers spend exactly epsilon.
        let w = same(&[5.0; 6], 4.0, 3, 1.0).with_sigma(100.0);
        let b = AdaptiveBudget::split(1.0, 3).unwrap();
        let (out, ledger) = adaptive_svt_gap_run(&w, Side::D, &b, &NoiseTape::zeros(Layout::Paired, 6)).unwrap();
        assert_eq!(out.top_count(), 3);
        assert_eq!(ledger.second_count, 3);
    }

    #[test]
    fn consumed_counts_coordinates() {
        let w = same(&[5.0, 3.0, 7.0, 9.0], 4.0, 2, 1.0);
        let budget = Mechanism::SvtGap.budget_for(&w).unwrap();
        let exec = Mechanism::SvtGap.execute(&w, Side::D, &budget, &NoiseTape::zeros(Layout::Single, 4)).unwrap();
        assert_eq!((exec.processed, exec.consumed), (3, 4));
        let w = w.with_sigma(1.0);
        let budget = Mechanism::AdaptiveGap.budget_for(&w).unwrap();
        let exec = Mechanism::AdaptiveGap.execute(&w, Side::D, &budget, &NoiseTape::zeros(Layout::Paired, 4)).unwrap();
        assert_eq!(exec.consumed, 1 + 2 * exec.processed);
    }

    #[test]
    fn run_sampled_is_deterministic() {
        let w = Workload::from_values(&[(3.0, 2.0), (8.0, 8.0), (1.0, 2.0)], 4.0, 2, 1.0).with_sigma(1.0);
        for m in Mechanism::ALL {
            for kind in [NoiseKind::ContinuousLaplace, NoiseKind::DiscreteLaplace] {
                let a = run_sampled(m, &w, Side::D, kind, 99).unwrap();
                let b = run_sampled(m, &w, Side::D, kind, 99).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        assert!("noisy-max".parse::<Mechanism>().is_err());
    }
}
