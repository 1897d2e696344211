use super::{run_trials, uncovered_condition_note, PrivacyReport, Tally, Trial, TrialPlan, Witness, GAP_TOLERANCE};
use crate::alignment::{align, Mutation};
use crate::error::Result;
use crate::mechanism::{Budget, Mechanism};
use crate::model::{OutputSequence, Side, Workload};

/// Both orientations of a trial: `(side playing D, oriented workload)`.
pub(crate) fn orientations(w: &Workload) -> [(Side, Workload); 2] {
    [(Side::D, w.clone()), (Side::DPrime, w.swapped())]
}

pub(crate) fn outputs_match(a: &OutputSequence, b: &OutputSequence, exact: bool) -> bool {
    if exact {
        a == b
    } else {
        a.approx_eq(b, GAP_TOLERANCE)
    }
}

/// For every trial and both orientations: run on `D`, align the tape for the
/// observed output, run on `D'` with the aligned tape, and require the same
/// output (same length, tags, branches and gaps).
pub fn check_alignment_soundness(plan: &TrialPlan) -> PrivacyReport {
    let exact = plan.exact();
    let tally = run_trials(plan, |trial, tally| {
        for (orientation, w) in orientations(&trial.workload) {
            soundness_case(plan.mechanism, &trial.budget, trial, orientation, &w, plan.mutation, exact, tally);
        }
    });
    let mut notes = vec![uncovered_condition_note()];
    if let Some(m) = plan.mutation {
        notes.push(format!("self-test: alignment mutated with {m:?}"));
    }
    tally.into_report("align", plan, notes)
}

#[allow(clippy::too_many_arguments)]
fn soundness_case(
    mechanism: Mechanism,
    budget: &Budget,
    trial: &Trial,
    orientation: Side,
    w: &Workload,
    mutation: Option<Mutation>,
    exact: bool,
    tally: &mut Tally,
) {
    let witness = |omega: OutputSequence, aligned, replay, detail: String| Witness {
        trial: trial.index,
        tape_seed: trial.tape_seed,
        orientation,
        workload: w.clone(),
        tape: trial.tape.clone(),
        omega,
        aligned_tape: aligned,
        replay,
        detail,
    };
    let source = match mechanism.execute(w, Side::D, budget, &trial.tape) {
        Ok(e) => e,
        Err(e) => {
            tally.check(false, || witness(OutputSequence::default(), None, None, format!("run on D failed: {e}")));
            return;
        }
    };
    let aligned = match align(mechanism, &trial.tape, &source.output, w, mutation) {
        Ok(t) => t,
        Err(e) => {
            tally.check(false, || witness(source.output.clone(), None, None, format!("alignment failed: {e}")));
            return;
        }
    };
    match mechanism.execute(w, Side::DPrime, budget, &aligned) {
        Ok(replay) => {
            let ok = outputs_match(&source.output, &replay.output, exact);
            tally.check(ok, || {
                witness(
                    source.output.clone(),
                    Some(aligned.clone()),
                    Some(replay.output.clone()),
                    "aligned tape changes the output on D'".into(),
                )
            });
        }
        Err(e) => tally.check(false, || {
            witness(source.output.clone(), Some(aligned.clone()), None, format!("run on D' failed: {e}"))
        }),
    }
}

/// Re-runs a soundness witness from its recorded workload and tape. Returns
/// `true` when the violation reproduces.
pub fn replay_soundness_witness(
    mechanism: Mechanism,
    witness: &Witness,
    mutation: Option<Mutation>,
    exact: bool,
) -> Result<bool> {
    let budget = mechanism.budget_for(&witness.workload)?;
    let source = mechanism.execute(&witness.workload, Side::D, &budget, &witness.tape)?;
    let aligned = align(mechanism, &witness.tape, &source.output, &witness.workload, mutation)?;
    let replay = mechanism.execute(&witness.workload, Side::DPrime, &budget, &aligned)?;
    Ok(source.output == witness.omega && !outputs_match(&source.output, &replay.output, exact))
}
