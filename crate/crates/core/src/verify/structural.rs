use super::soundness::{orientations, outputs_match};
use super::{run_trials, uncovered_condition_note, PrivacyReport, Witness, GAP_TOLERANCE};
use crate::alignment::{align, index_sets, AlignmentShift, QueryShift};
use crate::mechanism::Mechanism;
use crate::model::{Answer, Branch, Layout, OutputSequence, Side};
use crate::verify::TrialPlan;

/// Extra tapes drawn per trial for the countability check.
const RESAMPLES: u64 = 4;

fn shifts_match(a: &AlignmentShift, b: &AlignmentShift, exact: bool) -> bool {
    if exact {
        return a == b;
    }
    let close = |x: f64, y: f64| (x - y).abs() <= GAP_TOLERANCE;
    close(a.threshold_shift, b.threshold_shift)
        && a.per_query.len() == b.per_query.len()
        && a.per_query.iter().zip(&b.per_query).all(|(x, y)| match (x, y) {
            (QueryShift::Single(p), QueryShift::Single(q)) => close(*p, *q),
            (QueryShift::Paired(p1, p2), QueryShift::Paired(q1, q2)) => close(*p1, *q1) && close(*p2, *q2),
            _ => false,
        })
}

/// Per trial and orientation:
///
/// * termination: at most `n` queries processed, one answer each;
/// * tape consumption: `1 + processed` coordinates (single layout, which is
///   `1 + |omega|`) or `1 + 2 processed` (paired);
/// * prefix determinism: the consumed prefix of the tape reproduces omega;
/// * output invariants: gaps nonnegative, first-branch gaps at least sigma,
///   at most `k` positives for the plain mechanisms;
/// * the measured shift `phi(H) - H` equals the shift rebuilt from
///   `(I, J, delta)` alone, and other tapes with the same output induce
///   the same shift;
/// * classic/gap coupling on the trial tape for the plain mechanisms.
pub fn check_structural_conditions(plan: &TrialPlan) -> PrivacyReport {
    let exact = plan.exact();
    let mechanism = plan.mechanism;
    let layout = mechanism.layout();
    let tally = run_trials(plan, |trial, tally| {
        let budget = &trial.budget;
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
            let exec = match mechanism.execute(&w, Side::D, budget, &trial.tape) {
                Ok(e) => e,
                Err(e) => {
                    tally.check(false, || witness(&OutputSequence::default(), format!("run failed: {e}")));
                    continue;
                }
            };
            let omega = &exec.output;

            tally.check(exec.processed <= w.len() && omega.len() == exec.processed, || {
                witness(omega, format!("processed {} of {} queries", exec.processed, w.len()))
            });
            let expected = match layout {
                Layout::Single => 1 + omega.len(),
                Layout::Paired => 1 + 2 * exec.processed,
            };
            tally.check(exec.consumed == expected, || {
                witness(omega, format!("consumed {} coordinates, expected {expected}", exec.consumed))
            });

            let prefix = trial.tape.truncated(exec.processed);
            let replay = mechanism.execute(&w, Side::D, budget, &prefix);
            tally.check(matches!(&replay, Ok(r) if r.output == *omega), || {
                witness(omega, "consumed tape prefix does not reproduce the output".into())
            });

            let sigma = w.sigma.unwrap_or(0.0);
            let answers_ok = omega.answers.iter().all(|a| match a {
                Answer::TopGap { gap, branch: Branch::First } => *gap >= sigma,
                Answer::TopGap { gap, .. } => *gap >= 0.0,
                _ => true,
            });
            tally.check(answers_ok, || witness(omega, "gap below its branch bound".into()));
            if layout == Layout::Single {
                tally.check(omega.top_count() <= w.k as usize, || {
                    witness(omega, format!("{} positives exceed k = {}", omega.top_count(), w.k))
                });
            }

            let sets = index_sets(omega);
            let rebuilt = AlignmentShift::from_index_sets(layout, &sets, &w, trial.tape.len(), None);
            let measured = align(mechanism, &trial.tape, omega, &w, None)
                .and_then(|aligned| AlignmentShift::between(&trial.tape, &aligned));
            let (rebuilt, measured) = match (rebuilt, measured) {
                (Ok(r), Ok(m)) => (r, m),
                (Err(e), _) | (_, Err(e)) => {
                    tally.check(false, || witness(omega, format!("shift construction failed: {e}")));
                    continue;
                }
            };
            tally.check(sets.is_disjoint() && shifts_match(&measured, &rebuilt, exact), || {
                witness(omega, "shift is not determined by the index sets and deltas".into())
            });

            for j in 0..RESAMPLES {
                let Ok(other) = trial.resample(j) else { continue };
                let Ok(other_exec) = mechanism.execute(&w, Side::D, budget, &other) else {
                    continue;
                };
                if !outputs_match(&other_exec.output, omega, exact) {
                    continue;
                }
                let other_shift = align(mechanism, &other, &other_exec.output, &w, None)
                    .and_then(|aligned| AlignmentShift::between(&other, &aligned));
                tally.check(matches!(&other_shift, Ok(s) if shifts_match(s, &measured, exact)), || {
                    witness(omega, format!("resampled tape {j} with the same output has a different shift"))
                });
            }

            if mechanism != Mechanism::AdaptiveGap {
                let gap = Mechanism::SvtGap.execute(&w, Side::D, budget, &trial.tape);
                let classic = Mechanism::Svt.execute(&w, Side::D, budget, &trial.tape);
                tally.check(matches!((&gap, &classic), (Ok(g), Ok(c)) if g.output.erase_gaps() == c.output), || {
                    witness(omega, "erasing gaps does not give the classic output".into())
                });
            }
        }
    });
    tally.into_report("structural", plan, vec![uncovered_condition_note()])
}
