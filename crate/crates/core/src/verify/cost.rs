use super::soundness::orientations;
use super::{run_trials, uncovered_condition_note, PrivacyReport, Witness, COST_TOLERANCE};
use crate::alignment::{align, alignment_cost, closed_form_cost, index_sets};
use crate::budget::{AdaptiveBudget, CostLedger};
use crate::model::{Branch, OutputSequence, Side};
use crate::verify::TrialPlan;

/// Checks, per trial and orientation, that the alignment cost stays within
/// `epsilon`, that it equals the closed form
/// `e0 + sum_I e1 |1 + delta_i| (+ sum_J e2 |1 + delta_i|)`, and for the
/// adaptive mechanism that the ledger matches `e0 + 2 e1 |I| + 2 e2 |J|`,
/// respects the guard before every processed query and ends within
/// `epsilon`.
pub fn check_cost_bound(plan: &TrialPlan) -> PrivacyReport {
    let exact = plan.exact();
    let tally = run_trials(plan, |trial, tally| {
        let budget = &trial.budget;
        let epsilon = budget.epsilon();
        let weights = budget.cost_weights();
        let layout = plan.mechanism.layout();
        for (orientation, w) in orientations(&trial.workload) {
            let witness = |omega: &OutputSequence, detail: String| Witness {
                trial: trial.index,
                tape_seed: trial.tape_seed,
                orientation,
                workload: w.clone(),
                tape: trial.tape.clone(),
                omega: omega.clone(),
                aligned_tape: None,
                replay: None,
                detail,
            };
            let exec = match plan.mechanism.execute(&w, Side::D, budget, &trial.tape) {
                Ok(e) => e,
                Err(e) => {
                    tally.check(false, || witness(&OutputSequence::default(), format!("run failed: {e}")));
                    continue;
                }
            };
            let omega = &exec.output;
            let sets = index_sets(omega);
            let costs = align(plan.mechanism, &trial.tape, omega, &w, plan.mutation).and_then(|aligned| {
                let generic = alignment_cost(&trial.tape, &aligned, &weights)?;
                let closed = closed_form_cost(layout, &sets, &w, trial.tape.len(), &weights)?;
                Ok((generic, closed))
            });
            let (generic, closed) = match costs {
                Ok(c) => c,
                Err(e) => {
                    tally.check(false, || witness(omega, format!("cost evaluation failed: {e}")));
                    continue;
                }
            };
            tally.observe_cost(generic);
            tally.check(generic <= epsilon + COST_TOLERANCE, || {
                witness(omega, format!("alignment cost {generic} exceeds epsilon {epsilon}"))
            });
            let agree = if exact { generic == closed } else { (generic - closed).abs() <= COST_TOLERANCE };
            tally.check(agree, || {
                witness(omega, format!("weighted L1 cost {generic} differs from closed form {closed}"))
            });
            if let (Some(ledger), Some(ab)) = (&exec.ledger, budget.adaptive()) {
                let formula = ab.ledger_cost(sets.top_first.len(), sets.top_second.len());
                tally.check(ledger.running_cost == formula, || {
                    witness(omega, format!("ledger {} differs from formula {formula}", ledger.running_cost))
                });
                let guard = ledger_guard_violation(ab, ledger);
                tally.check(guard.is_none(), || witness(omega, guard.clone().unwrap_or_default()));
                tally.check(ab.within_total(ledger.first_count, ledger.second_count), || {
                    witness(omega, format!("ledger ends at {} above epsilon", ledger.running_cost))
                });
            }
        }
    });
    let mut notes = vec![uncovered_condition_note()];
    if let Some(m) = plan.mutation {
        notes.push(format!("self-test: alignment mutated with {m:?}"));
    }
    tally.into_report("cost", plan, notes)
}

/// Replays the ledger events and returns a description of the first event
/// whose pre-query cost broke `cost <= e - 2 e2` or disagreed with the
/// count formula.
pub(crate) fn ledger_guard_violation(budget: &AdaptiveBudget, ledger: &CostLedger) -> Option<String> {
    let (mut first, mut second) = (0, 0);
    for event in &ledger.events {
        if event.cost_before != budget.ledger_cost(first, second) {
            return Some(format!("ledger before query {} is off the formula", event.index));
        }
        if !budget.guard_allows(first, second) {
            return Some(format!("query {} processed with cost {} above the guard", event.index, event.cost_before));
        }
        match event.branch {
            Some(Branch::First) => first += 1,
            Some(Branch::Second) => second += 1,
            _ => {}
        }
    }
    (first, second)
        .ne(&(ledger.first_count, ledger.second_count))
        .then(|| "ledger counts disagree with its events".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Mutation;
    use crate::mechanism::Mechanism;
    use crate::verify::{Verdict, WorkloadGenerator};

    #[test]
    fn costs_stay_within_budget() {
        for m in Mechanism::ALL {
            let report = check_cost_bound(&TrialPlan::new(m, 3000, 21));
            assert!(report.passed(), "{m}: {:?}", report.witness);
            let max = report.max_cost.unwrap();
            assert!((0.5..=1.0 + COST_TOLERANCE).contains(&max), "{m}: {max}");
        }
    }

    #[test]
    fn single_top_at_full_sensitivity_costs_epsilon() {
        let g = WorkloadGenerator {
            max_queries: 1,
            k_range: (1, 1),
            fixed_delta: Some(1.0),
            value_range: (100, 100),
            boundary_fraction: 0.0,
            ..Default::default()
        };
        let report = check_cost_bound(&TrialPlan::new(Mechanism::SvtGap, 50, 3).with_generator(g));
        assert!(report.passed());
        assert_eq!(report.max_cost, Some(1.0));
    }

    #[test]
    fn all_below_costs_half_epsilon() {
        let g = WorkloadGenerator { value_range: (-100, -100), boundary_fraction: 0.0, ..Default::default() };
        let report = check_cost_bound(&TrialPlan::new(Mechanism::SvtGap, 50, 4).with_generator(g));
        assert!(report.passed());
        assert_eq!(report.max_cost, Some(0.5));
    }

    #[test]
    fn inflated_shift_breaks_the_bound() {
        let plan = TrialPlan::new(Mechanism::SvtGap, 500, 5).with_mutation(Mutation::ThresholdShift(3.0));
        assert_eq!(check_cost_bound(&plan).verdict, Verdict::Fail);
    }
}
