//! Privacy budget splits and the adaptive cost ledger.
//!
//! Budgets are held as exact rationals. Every finite `f64` is a dyadic
//! rational, so converting the caller's `epsilon` loses nothing, and the
//! split identities (`e0 + 2k e1 = e` and friends) hold exactly rather than
//! up to rounding. The `f64` accessors return the nearest double and are
//! what the noise scales and cost weights are computed from.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Branch;
use crate::noise::{NoiseKind, NoiseSpec};

fn exact(name: &'static str, value: f64) -> Result<BigRational> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(if name == "epsilon" {
            Error::NonPositiveBudget(value)
        } else {
            Error::InvalidParameter { name, reason: format!("must be positive and finite, got {value}") }
        });
    }
    Ok(BigRational::from_float(value).expect("finite"))
}

fn approx(r: &BigRational) -> f64 {
    r.to_f64().expect("rational budgets convert to f64")
}

fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Threshold / per-query split of the plain mechanisms:
/// `e0 = e/2`, `e1 = e/(4k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvtBudget {
    k: u32,
    epsilon: BigRational,
    epsilon0: BigRational,
    epsilon1: BigRational,
    view: SvtBudgetView,
}

/// `f64` snapshot of a [`SvtBudget`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvtBudgetView {
    pub epsilon: f64,
    pub k: u32,
    pub epsilon0: f64,
    pub epsilon1: f64,
}

pub fn budget_split_svt(epsilon: f64, k: u32) -> Result<SvtBudget> {
    SvtBudget::split(epsilon, k)
}

impl SvtBudget {
    pub fn split(epsilon: f64, k: u32) -> Result<Self> {
        let eps = exact("epsilon", epsilon)?;
        if k == 0 {
            return Err(Error::InvalidParameter { name: "k", reason: "must be at least 1".into() });
        }
        let epsilon0 = &eps / int(2);
        let epsilon1 = &eps / int(4 * u64::from(k));
        Ok(Self::from_parts(k, eps, epsilon0, epsilon1))
    }

    fn from_parts(k: u32, epsilon: BigRational, epsilon0: BigRational, epsilon1: BigRational) -> Self {
        let view =
            SvtBudgetView { epsilon: approx(&epsilon), k, epsilon0: approx(&epsilon0), epsilon1: approx(&epsilon1) };
        Self { k, epsilon, epsilon0, epsilon1, view }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.view.epsilon
    }

    pub fn epsilon0(&self) -> f64 {
        self.view.epsilon0
    }

    pub fn epsilon1(&self) -> f64 {
        self.view.epsilon1
    }

    pub fn view(&self) -> SvtBudgetView {
        self.view
    }

    /// `e0 + 2k e1`, exactly.
    pub fn worst_case_cost(&self) -> BigRational {
        &self.epsilon0 + int(2 * u64::from(self.k)) * &self.epsilon1
    }

    /// `e0 + 2k e1 == e` in exact arithmetic.
    pub fn identity_holds(&self) -> bool {
        self.worst_case_cost() == self.epsilon
    }

    /// Laplace scales `1/e0` (threshold) and `1/e1` (queries).
    pub fn noise_spec(&self, kind: NoiseKind) -> NoiseSpec {
        NoiseSpec::single(kind, approx(&self.epsilon0.recip()), approx(&self.epsilon1.recip()))
            .expect("positive budgets give positive scales")
    }
}

/// Budget of the adaptive mechanism: `e0` for the threshold, `e1` for the
/// first-attempt noise `xi`, `e2` for the second-attempt noise `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveBudget {
    epsilon: BigRational,
    epsilon0: BigRational,
    epsilon1: BigRational,
    epsilon2: BigRational,
    /// `e - 2 e2`: the most the ledger may hold before a query is processed.
    guard: BigRational,
    scaled: Option<ScaledBudget>,
    view: AdaptiveBudgetView,
}

/// The adaptive budgets as integer multiples of a common unit `1/D`, when
/// they fit. Ledger comparisons then need no allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ScaledBudget {
    epsilon: i128,
    epsilon0: i128,
    epsilon1: i128,
    epsilon2: i128,
    guard: i128,
}

impl ScaledBudget {
    fn new(values: [&BigRational; 5]) -> Option<Self> {
        let denom = values.iter().fold(BigInt::from(1), |d, v| d.lcm(v.denom()));
        let mut n = [0i128; 5];
        for (slot, v) in n.iter_mut().zip(values) {
            *slot = (v.numer() * (&denom / v.denom())).to_i128()?;
        }
        // Leave headroom for `2 e1 first + 2 e2 second` on any workload.
        if n.iter().any(|x| x.unsigned_abs() > 1 << 80) {
            return None;
        }
        Some(Self { epsilon: n[0], epsilon0: n[1], epsilon1: n[2], epsilon2: n[3], guard: n[4] })
    }

    fn cost(&self, first: usize, second: usize) -> Option<i128> {
        let a = 2 * self.epsilon1.checked_mul(first as i128)?;
        let b = 2 * self.epsilon2.checked_mul(second as i128)?;
        self.epsilon0.checked_add(a)?.checked_add(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveBudgetView {
    pub epsilon: f64,
    pub epsilon0: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

/// Default split `e0 = e/2`, `e2 = e/(4k)`, `e1 = e2/2`.
pub fn budget_split_adaptive(epsilon: f64, k: u32) -> Result<AdaptiveBudget> {
    AdaptiveBudget::split(epsilon, k)
}

impl AdaptiveBudget {
    pub fn split(epsilon: f64, k: u32) -> Result<Self> {
        let eps = exact("epsilon", epsilon)?;
        if k == 0 {
            return Err(Error::InvalidParameter { name: "k", reason: "must be at least 1".into() });
        }
        let epsilon0 = &eps / int(2);
        let epsilon2 = &eps / int(4 * u64::from(k));
        let epsilon1 = &epsilon2 / int(2);
        Self::from_exact(eps, epsilon0, epsilon1, epsilon2)
    }

    /// Caller-chosen split. Requires `0 < e1 <= e2` and `e0 + 2 e2 <= e`.
    pub fn new(epsilon0: f64, epsilon1: f64, epsilon2: f64, epsilon: f64) -> Result<Self> {
        Self::from_exact(
            exact("epsilon", epsilon)?,
            exact("epsilon0", epsilon0)?,
            exact("epsilon1", epsilon1)?,
            exact("epsilon2", epsilon2)?,
        )
    }

    fn from_exact(
        epsilon: BigRational,
        epsilon0: BigRational,
        epsilon1: BigRational,
        epsilon2: BigRational,
    ) -> Result<Self> {
        if epsilon1 > epsilon2 {
            return Err(Error::InvalidParameter {
                name: "epsilon1",
                reason: "first-attempt budget must not exceed the second-attempt budget".into(),
            });
        }
        let guard = &epsilon - int(2) * &epsilon2;
        if epsilon0 > guard {
            return Err(Error::InvalidParameter {
                name: "epsilon0",
                reason: "epsilon0 + 2 epsilon2 exceeds epsilon; no query could be processed".into(),
            });
        }
        let scaled = ScaledBudget::new([&epsilon, &epsilon0, &epsilon1, &epsilon2, &guard]);
        let view = AdaptiveBudgetView {
            epsilon: approx(&epsilon),
            epsilon0: approx(&epsilon0),
            epsilon1: approx(&epsilon1),
            epsilon2: approx(&epsilon2),
        };
        Ok(Self { epsilon, epsilon0, epsilon1, epsilon2, guard, scaled, view })
    }

    pub fn epsilon(&self) -> f64 {
        self.view.epsilon
    }

    pub fn epsilon0(&self) -> f64 {
        self.view.epsilon0
    }

    pub fn epsilon1(&self) -> f64 {
        self.view.epsilon1
    }

    pub fn epsilon2(&self) -> f64 {
        self.view.epsilon2
    }

    pub fn view(&self) -> AdaptiveBudgetView {
        self.view
    }

    /// `e0 + 2k e2 == e` and `e1 <= e2`, exactly.
    pub fn split_identity_holds(&self, k: u32) -> bool {
        &self.epsilon0 + int(2 * u64::from(k)) * &self.epsilon2 == self.epsilon && self.epsilon1 <= self.epsilon2
    }

    /// Ledger value after `first` first-branch and `second` second-branch
    /// answers: `e0 + 2 e1 first + 2 e2 second`.
    pub fn ledger_cost(&self, first: usize, second: usize) -> f64 {
        self.view.epsilon0 + 2.0 * self.view.epsilon1 * first as f64 + 2.0 * self.view.epsilon2 * second as f64
    }

    pub fn ledger_cost_exact(&self, first: usize, second: usize) -> BigRational {
        &self.epsilon0 + int(2 * first as u64) * &self.epsilon1 + int(2 * second as u64) * &self.epsilon2
    }

    /// Whether another query may be processed: `cost <= e - 2 e2`, exactly.
    pub fn guard_allows(&self, first: usize, second: usize) -> bool {
        if let Some(s) = &self.scaled {
            if let Some(cost) = s.cost(first, second) {
                return cost <= s.guard;
            }
        }
        let rhs = self.view.epsilon - 2.0 * self.view.epsilon2;
        self.ledger_le(first, second, rhs, &self.guard)
    }

    /// `cost <= e`, exactly.
    pub fn within_total(&self, first: usize, second: usize) -> bool {
        if let Some(s) = &self.scaled {
            if let Some(cost) = s.cost(first, second) {
                return cost <= s.epsilon;
            }
        }
        self.ledger_le(first, second, self.view.epsilon, &self.epsilon)
    }

    fn ledger_le(&self, first: usize, second: usize, rhs: f64, rhs_exact: &BigRational) -> bool {
        let lhs = self.ledger_cost(first, second);
        // Floats decide unless the two sides are within rounding of each other.
        if (lhs - rhs).abs() > 1e-9 * self.view.epsilon {
            return lhs <= rhs;
        }
        &self.ledger_cost_exact(first, second) <= rhs_exact
    }

    /// Scales `1/e0`, `1/e1` (xi) and `1/e2` (eta).
    pub fn noise_spec(&self, kind: NoiseKind) -> NoiseSpec {
        NoiseSpec::paired(
            kind,
            approx(&self.epsilon0.recip()),
            approx(&self.epsilon1.recip()),
            approx(&self.epsilon2.recip()),
        )
        .expect("positive budgets give positive scales")
    }
}

/// One processed query in a [`CostLedger`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub index: usize,
    /// `None` for a below-threshold answer.
    pub branch: Option<Branch>,
    /// Ledger value when the query was reached.
    pub cost_before: f64,
    pub increment: f64,
}

/// Running privacy cost of one adaptive run.
///
/// `running_cost` is always `e0 + 2 e1 |I| + 2 e2 |J|` evaluated from the
/// branch counts, never an accumulated float sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub running_cost: f64,
    pub first_count: usize,
    pub second_count: usize,
    pub events: Vec<LedgerEvent>,
}

impl CostLedger {
    pub fn new(budget: &AdaptiveBudget) -> Self {
        Self { running_cost: budget.ledger_cost(0, 0), first_count: 0, second_count: 0, events: Vec::new() }
    }

    pub(crate) fn record(&mut self, budget: &AdaptiveBudget, index: usize, branch: Option<Branch>) {
        let before = self.running_cost;
        match branch {
            Some(Branch::First) => self.first_count += 1,
            Some(Branch::Second) => self.second_count += 1,
            _ => {}
        }
        self.running_cost = budget.ledger_cost(self.first_count, self.second_count);
        self.events.push(LedgerEvent { index, branch, cost_before: before, increment: self.running_cost - before });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svt_split_examples() {
        let b = budget_split_svt(1.0, 1).unwrap();
        assert_eq!((b.epsilon0(), b.epsilon1()), (0.5, 0.25));
        assert!(b.identity_holds());
        let b = budget_split_svt(2.0, 5).unwrap();
        assert_eq!((b.epsilon0(), b.epsilon1()), (1.0, 0.1));
        assert!(b.identity_holds());
    }

    #[test]
    fn svt_split_errors() {
        assert_eq!(budget_split_svt(0.0, 1), Err(Error::NonPositiveBudget(0.0)));
        assert!(matches!(budget_split_svt(-1.0, 1), Err(Error::NonPositiveBudget(_))));
        assert!(matches!(budget_split_svt(f64::INFINITY, 1), Err(Error::NonPositiveBudget(_))));
        assert!(budget_split_svt(1.0, 0).is_err());
    }

    #[test]
    fn adaptive_split_examples() {
        let b = budget_split_adaptive(1.0, 1).unwrap();
        assert_eq!((b.epsilon0(), b.epsilon1(), b.epsilon2()), (0.5, 0.125, 0.25));
        assert!(b.split_identity_holds(1));
        let b = budget_split_adaptive(1.0, 2).unwrap();
        assert_eq!((b.epsilon0(), b.epsilon1(), b.epsilon2()), (0.5, 0.0625, 0.125));
        assert!(b.split_identity_holds(2));
    }

    #[test]
    fn adaptive_budget_invariants() {
        assert!(AdaptiveBudget::new(0.5, 0.3, 0.2, 1.0).is_err());
        assert!(AdaptiveBudget::new(0.7, 0.1, 0.2, 1.0).is_err());
        assert!(AdaptiveBudget::new(0.6, 0.1, 0.2, 1.0).is_ok());
        assert!(AdaptiveBudget::new(0.5, 0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn guard_is_exact_at_ties() {
        // k = 3: e2 = 1/12 is not a double, the tie after two J answers must
        // still allow the third.
        let b = budget_split_adaptive(1.0, 3).unwrap();
        assert!(b.guard_allows(0, 2));
        assert!(!b.guard_allows(0, 3));
        assert!(b.within_total(0, 3));
        assert!(!b.within_total(0, 4));
    }

    #[test]
    fn integer_path_agrees_with_rationals() {
        for (epsilon, k) in [(1.0, 1), (1.0, 3), (0.1, 7), (2.5, 1000), (1e-3, 9), (1e300, 2)] {
            let b = budget_split_adaptive(epsilon, k).unwrap();
            for first in 0..12 {
                for second in 0..12 {
                    let cost = b.ledger_cost_exact(first, second);
                    assert_eq!(b.guard_allows(first, second), cost <= b.guard, "{epsilon} {k} {first} {second}");
                    assert_eq!(b.within_total(first, second), cost <= b.epsilon);
                }
            }
        }
        // Denominators too large for i128 fall back to rationals.
        let b = AdaptiveBudget::new(1e-300, 1e-300, 0.25, 1.0).unwrap();
        assert!(b.scaled.is_none());
        assert!(b.guard_allows(0, 0) && !b.guard_allows(0, 1));
        assert!(b.within_total(0, 1) && !b.within_total(0, 2));
    }

    #[test]
    fn ledger_tracks_formula() {
        let b = budget_split_adaptive(1.0, 2).unwrap();
        let mut l = CostLedger::new(&b);
        l.record(&b, 0, Some(Branch::First));
        l.record(&b, 1, None);
        l.record(&b, 2, Some(Branch::Second));
        assert_eq!(l.running_cost, 0.5 + 2.0 * 0.0625 + 2.0 * 0.125);
        assert_eq!(l.events[1].increment, 0.0);
        assert_eq!(l.events[2].cost_before, 0.625);
    }

    #[test]
    fn noise_scales_are_reciprocals() {
        let s = budget_split_svt(1.0, 1).unwrap().noise_spec(NoiseKind::DiscreteLaplace);
        assert_eq!(s.threshold, 2.0);
        assert_eq!(s.scale(crate::noise::Role::Query), 4.0);
        let a = budget_split_adaptive(1.0, 1).unwrap().noise_spec(NoiseKind::DiscreteLaplace);
        assert_eq!(a.scale(crate::noise::Role::QueryFirst), 8.0);
        assert_eq!(a.scale(crate::noise::Role::QuerySecond), 4.0);
    }
}
