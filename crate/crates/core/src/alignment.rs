//! Local alignments for the gap mechanisms.
//!
//! For adjacent `D ~ D'` and an output `omega`, a local alignment maps every
//! tape `H` with `M(D, H) = omega` to a tape `H'` with `M(D', H') = omega`.
//! Both alignments here are translations: the shift `H' - H` depends only on
//! which queries were answered positively (and through which branch) and on
//! `delta_i = q_i(D) - q_i(D')`:
//!
//! * the threshold noise moves up by one, so every below-threshold answer
//!   stays below on `D'` (whose values are at most one larger);
//! * the noise of a positively answered query moves by `1 + delta_i`, which
//!   keeps `q_i + noise_i - (T + threshold_noise)` and hence the released gap
//!   unchanged;
//! * for the adaptive mechanism the shift goes to `xi_i` when the first
//!   attempt fired and to `eta_i` when the second one did.
//!
//! The cost of an alignment is the weighted L1 distance between `H` and
//! `H'`, each coordinate weighted by the privacy budget of its noise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::Mechanism;
use crate::model::{Answer, Branch, Layout, NoiseTape, OutputSequence, QueryNoise, Workload};

/// Positively answered queries, split by branch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSets {
    /// Plain or first-branch positives (`I`).
    pub top_first: BTreeSet<usize>,
    /// Second-branch positives (`J`); empty for the plain mechanisms.
    pub top_second: BTreeSet<usize>,
}

impl IndexSets {
    pub fn is_disjoint(&self) -> bool {
        self.top_first.is_disjoint(&self.top_second)
    }
}

pub fn index_sets(omega: &OutputSequence) -> IndexSets {
    let mut sets = IndexSets::default();
    for (i, a) in omega.answers.iter().enumerate() {
        match a {
            Answer::Bot => {}
            Answer::Top | Answer::TopGap { branch: Branch::Plain | Branch::First, .. } => {
                sets.top_first.insert(i);
            }
            Answer::TopGap { branch: Branch::Second, .. } => {
                sets.top_second.insert(i);
            }
        }
    }
    sets
}

/// Shift of one query's noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryShift {
    Single(f64),
    /// `(xi' - xi, eta' - eta)`.
    Paired(f64, f64),
}

/// `H' - H` for a translation alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentShift {
    pub threshold_shift: f64,
    pub per_query: Vec<QueryShift>,
}

/// Deliberately wrong alignments for harness self-tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Shift the threshold noise by this amount instead of 1.
    ThresholdShift(f64),
    /// Shift plain/first-branch positives by `c + delta_i` instead of
    /// `1 + delta_i`.
    BranchShift(f64),
    /// Leave second-branch positives unshifted.
    MissingSecondTerm,
}

impl AlignmentShift {
    /// Builds the shift from the index sets and the workload deltas, for a
    /// tape with `len` per-query entries.
    pub fn from_index_sets(
        layout: Layout,
        sets: &IndexSets,
        w: &Workload,
        len: usize,
        mutation: Option<Mutation>,
    ) -> Result<Self> {
        if layout == Layout::Single && !sets.top_second.is_empty() {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: "second-branch answers cannot come from a single-layout mechanism".into(),
            });
        }
        if let Some(&i) = sets.top_first.iter().chain(&sets.top_second).find(|&&i| i >= w.len().min(len)) {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: format!("positive answer at index {i} is outside the workload or tape"),
            });
        }
        let (threshold_shift, first_offset) = match mutation {
            Some(Mutation::ThresholdShift(s)) => (s, 1.0),
            Some(Mutation::BranchShift(c)) => (1.0, c),
            _ => (1.0, 1.0),
        };
        let drop_second = mutation == Some(Mutation::MissingSecondTerm);
        let per_query = (0..len)
            .map(|i| {
                let first = if sets.top_first.contains(&i) { first_offset + w.delta(i) } else { 0.0 };
                let second = if sets.top_second.contains(&i) && !drop_second { 1.0 + w.delta(i) } else { 0.0 };
                match layout {
                    Layout::Single => QueryShift::Single(first),
                    Layout::Paired => QueryShift::Paired(first, second),
                }
            })
            .collect();
        Ok(Self { threshold_shift, per_query })
    }

    pub fn apply(&self, tape: &NoiseTape) -> Result<NoiseTape> {
        if tape.len() != self.per_query.len() {
            return Err(Error::InvalidParameter {
                name: "tape",
                reason: format!("shift covers {} queries, tape has {}", self.per_query.len(), tape.len()),
            });
        }
        let per_query = tape
            .per_query
            .iter()
            .zip(&self.per_query)
            .map(|(noise, shift)| match (*noise, *shift) {
                (QueryNoise::Single(eta), QueryShift::Single(s)) => Ok(QueryNoise::Single(eta + s)),
                (QueryNoise::Paired(xi, eta), QueryShift::Paired(s1, s2)) => Ok(QueryNoise::Paired(xi + s1, eta + s2)),
                (noise, _) => Err(Error::LayoutMismatch {
                    expected: match shift {
                        QueryShift::Single(_) => "single",
                        QueryShift::Paired(..) => "paired",
                    },
                    found: noise.layout().name(),
                }),
            })
            .collect::<Result<_>>()?;
        Ok(NoiseTape { threshold_noise: tape.threshold_noise + self.threshold_shift, per_query })
    }

    /// Measured `aligned - tape`.
    pub fn between(tape: &NoiseTape, aligned: &NoiseTape) -> Result<Self> {
        check_same_shape(tape, aligned)?;
        let per_query = tape
            .per_query
            .iter()
            .zip(&aligned.per_query)
            .map(|(a, b)| match (*a, *b) {
                (QueryNoise::Single(x), QueryNoise::Single(y)) => QueryShift::Single(y - x),
                (QueryNoise::Paired(x1, x2), QueryNoise::Paired(y1, y2)) => QueryShift::Paired(y1 - x1, y2 - x2),
                _ => unreachable!("shapes checked"),
            })
            .collect();
        Ok(Self { threshold_shift: aligned.threshold_noise - tape.threshold_noise, per_query })
    }
}

fn check_same_shape(a: &NoiseTape, b: &NoiseTape) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter {
            name: "tape",
            reason: format!("tapes have {} and {} entries", a.len(), b.len()),
        });
    }
    for (x, y) in a.per_query.iter().zip(&b.per_query) {
        if x.layout() != y.layout() {
            return Err(Error::LayoutMismatch { expected: x.layout().name(), found: y.layout().name() });
        }
    }
    Ok(())
}

fn require_layout(tape: &NoiseTape, layout: Layout) -> Result<()> {
    match tape.per_query.iter().find(|q| q.layout() != layout) {
        Some(q) => Err(Error::LayoutMismatch { expected: layout.name(), found: q.layout().name() }),
        None => Ok(()),
    }
}

/// Alignment of `mechanism`, optionally mutated.
pub fn align(
    mechanism: Mechanism,
    tape: &NoiseTape,
    omega: &OutputSequence,
    w: &Workload,
    mutation: Option<Mutation>,
) -> Result<NoiseTape> {
    let layout = mechanism.layout();
    require_layout(tape, layout)?;
    let shift = AlignmentShift::from_index_sets(layout, &index_sets(omega), w, tape.len(), mutation)?;
    shift.apply(tape)
}

/// `eta' = eta + 1`; `eta_i' = eta_i + 1 + delta_i` for positive answers.
pub fn align_svt_gap(tape: &NoiseTape, omega: &OutputSequence, w: &Workload) -> Result<NoiseTape> {
    align(Mechanism::SvtGap, tape, omega, w, None)
}

/// `eta' = eta + 1`; first-branch positives shift `xi_i` by `1 + delta_i`,
/// second-branch positives shift `eta_i` by `1 + delta_i`.
pub fn align_adaptive(tape: &NoiseTape, omega: &OutputSequence, w: &Workload) -> Result<NoiseTape> {
    align(Mechanism::AdaptiveGap, tape, omega, w, None)
}

/// Privacy weight of a unit shift in each tape role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub threshold: f64,
    /// `eta_i` of the single layout, `xi_i` of the paired layout.
    pub query: f64,
    /// `eta_i` of the paired layout.
    pub query_second: Option<f64>,
}

impl CostWeights {
    pub fn single(threshold: f64, query: f64) -> Self {
        Self { threshold, query, query_second: None }
    }

    pub fn paired(threshold: f64, first: f64, second: f64) -> Self {
        Self { threshold, query: first, query_second: Some(second) }
    }

    fn second(&self) -> Result<f64> {
        self.query_second.ok_or(Error::LayoutMismatch { expected: "single", found: "paired" })
    }
}

/// Weighted L1 distance between two tapes of the same shape.
pub fn alignment_cost(tape: &NoiseTape, aligned: &NoiseTape, weights: &CostWeights) -> Result<f64> {
    check_same_shape(tape, aligned)?;
    let mut cost = weights.threshold * (aligned.threshold_noise - tape.threshold_noise).abs();
    for (a, b) in tape.per_query.iter().zip(&aligned.per_query) {
        match (*a, *b) {
            (QueryNoise::Single(x), QueryNoise::Single(y)) => cost += weights.query * (y - x).abs(),
            (QueryNoise::Paired(x1, x2), QueryNoise::Paired(y1, y2)) => {
                cost += weights.query * (y1 - x1).abs();
                cost += weights.second()? * (y2 - x2).abs();
            }
            _ => unreachable!("shapes checked"),
        }
    }
    Ok(cost)
}

/// `e0 + sum_I e1 |1 + delta_i| + sum_J e2 |1 + delta_i|`, summed in query
/// order over `len` queries so that it matches [`alignment_cost`] term by
/// term on integer tapes.
pub fn closed_form_cost(
    layout: Layout,
    sets: &IndexSets,
    w: &Workload,
    len: usize,
    weights: &CostWeights,
) -> Result<f64> {
    let mut cost = weights.threshold * 1.0;
    for i in 0..len {
        let first = if sets.top_first.contains(&i) { (1.0 + w.delta(i)).abs() } else { 0.0 };
        cost += weights.query * first;
        if layout == Layout::Paired {
            let second = if sets.top_second.contains(&i) { (1.0 + w.delta(i)).abs() } else { 0.0 };
            cost += weights.second()? * second;
        }
    }
    Ok(cost)
}
