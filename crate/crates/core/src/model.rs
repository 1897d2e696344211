//! Workloads, noise tapes and output sequences.
//!
//! A mechanism in this crate is a deterministic function `M(D, H)` of a
//! database side and a [`NoiseTape`]. Databases are never materialized:
//! a [`Workload`] carries the answer of every query on both adjacent
//! databases, which is all the privacy argument ever looks at.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Answers of one sensitivity-1 query on two adjacent databases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryPair {
    pub value_d: f64,
    pub value_dprime: f64,
}

impl QueryPair {
    pub fn new(value_d: f64, value_dprime: f64) -> Self {
        Self { value_d, value_dprime }
    }

    /// `q(D) - q(D')`, the sign convention used by every alignment.
    pub fn delta(&self) -> f64 {
        self.value_d - self.value_dprime
    }

    pub fn value(&self, side: Side) -> f64 {
        match side {
            Side::D => self.value_d,
            Side::DPrime => self.value_dprime,
        }
    }
}

/// Which of the two adjacent databases a mechanism runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    D,
    #[serde(rename = "dprime")]
    DPrime,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::D => Side::DPrime,
            Side::DPrime => Side::D,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::D => "d",
            Side::DPrime => "dprime",
        })
    }
}

/// An adjacent pair of query sequences plus the mechanism parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub pairs: Vec<QueryPair>,
    pub threshold: f64,
    pub k: u32,
    pub epsilon: f64,
    /// Gap required by the first branch of the adaptive mechanism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl Workload {
    pub fn new(pairs: Vec<QueryPair>, threshold: f64, k: u32, epsilon: f64) -> Self {
        Self { pairs, threshold, k, epsilon, sigma: None }
    }

    /// Builds a workload from `(q(D), q(D'))` tuples.
    pub fn from_values(values: &[(f64, f64)], threshold: f64, k: u32, epsilon: f64) -> Self {
        let pairs = values.iter().map(|&(d, dp)| QueryPair::new(d, dp)).collect();
        Self::new(pairs, threshold, k, epsilon)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn value(&self, index: usize, side: Side) -> f64 {
        self.pairs[index].value(side)
    }

    pub fn delta(&self, index: usize) -> f64 {
        self.pairs[index].delta()
    }

    /// The same workload with `D` and `D'` exchanged.
    pub fn swapped(&self) -> Workload {
        Workload {
            pairs: self.pairs.iter().map(|p| QueryPair::new(p.value_dprime, p.value_d)).collect(),
            ..self.clone()
        }
    }

    /// True when every query value on both sides is an integer.
    pub fn is_integral(&self) -> bool {
        self.pairs.iter().all(|p| p.value_d.fract() == 0.0 && p.value_dprime.fract() == 0.0)
    }

    pub fn check(&self) -> Result<()> {
        check_workload(self)
    }
}

/// Validates structure first, then the sensitivity-1 contract.
pub fn check_workload(w: &Workload) -> Result<()> {
    if w.pairs.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    if !(w.epsilon > 0.0 && w.epsilon.is_finite()) {
        return Err(Error::NonPositiveBudget(w.epsilon));
    }
    if w.k == 0 {
        return Err(Error::InvalidParameter { name: "k", reason: "must be at least 1".into() });
    }
    if !w.threshold.is_finite() {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: format!("must be finite, got {}", w.threshold),
        });
    }
    if let Some(sigma) = w.sigma {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be finite and nonnegative, got {sigma}"),
            });
        }
    }
    for (index, p) in w.pairs.iter().enumerate() {
        if !(p.value_d.is_finite() && p.value_dprime.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "pairs",
                reason: format!("query {index} has a non-finite value"),
            });
        }
        if (p.value_d - p.value_dprime).abs() > 1.0 {
            return Err(Error::SensitivityViolation { index, value_d: p.value_d, value_dprime: p.value_dprime });
        }
    }
    Ok(())
}

/// Per-query noise layout of a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One draw per query (`eta_i`), used by both plain SVT variants.
    Single,
    /// Two draws per query (`xi_i`, `eta_i`), used by the adaptive variant.
    Paired,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Single => "single",
            Layout::Paired => "paired",
        }
    }

    pub fn draws_per_query(self) -> usize {
        match self {
            Layout::Single => 1,
            Layout::Paired => 2,
        }
    }
}

/// Noise reserved for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryNoise {
    Single(f64),
    /// `(xi_i, eta_i)`: first-attempt noise, then second-attempt noise.
    Paired(f64, f64),
}

impl QueryNoise {
    pub fn layout(&self) -> Layout {
        match self {
            QueryNoise::Single(_) => Layout::Single,
            QueryNoise::Paired(..) => Layout::Paired,
        }
    }
}

/// The randomness `H` a mechanism consumes: threshold noise followed by
/// per-query noise.
///
/// Tapes are finite; a mechanism that reads past the end fails with
/// [`Error::TapeExhausted`] rather than drawing fresh noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTape {
    pub threshold_noise: f64,
    pub per_query: Vec<QueryNoise>,
}

impl NoiseTape {
    pub fn single(threshold_noise: f64, per_query: Vec<f64>) -> Self {
        Self { threshold_noise, per_query: per_query.into_iter().map(QueryNoise::Single).collect() }
    }

    pub fn paired(threshold_noise: f64, per_query: Vec<(f64, f64)>) -> Self {
        Self {
            threshold_noise,
            per_query: per_query.into_iter().map(|(xi, eta)| QueryNoise::Paired(xi, eta)).collect(),
        }
    }

    pub fn zeros(layout: Layout, len: usize) -> Self {
        match layout {
            Layout::Single => Self::single(0.0, vec![0.0; len]),
            Layout::Paired => Self::paired(0.0, vec![(0.0, 0.0); len]),
        }
    }

    /// Rebuilds a tape from its flattened coordinates, the inverse of
    /// [`NoiseTape::coordinates`].
    pub fn from_coordinates(layout: Layout, coords: &[f64]) -> Result<Self> {
        let Some((&threshold, rest)) = coords.split_first() else {
            return Err(Error::InvalidParameter {
                name: "coords",
                reason: "a tape has at least the threshold coordinate".into(),
            });
        };
        match layout {
            Layout::Single => Ok(Self::single(threshold, rest.to_vec())),
            Layout::Paired => {
                if rest.len() % 2 != 0 {
                    return Err(Error::InvalidParameter {
                        name: "coords",
                        reason: "paired tape needs an even number of query coordinates".into(),
                    });
                }
                Ok(Self::paired(threshold, rest.chunks_exact(2).map(|c| (c[0], c[1])).collect()))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }

    /// Layout of the tape, or `None` for an empty or mixed tape.
    pub fn layout(&self) -> Option<Layout> {
        let first = self.per_query.first()?.layout();
        self.per_query.iter().all(|q| q.layout() == first).then_some(first)
    }

    /// Flattened coordinates: threshold first, then queries in order with
    /// `xi_i` before `eta_i` for paired tapes.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.per_query.len());
        out.push(self.threshold_noise);
        for q in &self.per_query {
            match *q {
                QueryNoise::Single(eta) => out.push(eta),
                QueryNoise::Paired(xi, eta) => {
                    out.push(xi);
                    out.push(eta);
                }
            }
        }
        out
    }

    /// Number of coordinates in [`NoiseTape::coordinates`].
    pub fn dimension(&self) -> usize {
        1 + self.per_query.iter().map(|q| q.layout().draws_per_query()).sum::<usize>()
    }

    /// Keeps only the first `len` per-query entries.
    pub fn truncated(&self, len: usize) -> NoiseTape {
        NoiseTape {
            threshold_noise: self.threshold_noise,
            per_query: self.per_query[..len.min(self.per_query.len())].to_vec(),
        }
    }

    /// Overwrites flattened coordinate `index`; panics when out of range.
    pub(crate) fn set_coordinate(&mut self, index: usize, value: f64) {
        if index == 0 {
            self.threshold_noise = value;
            return;
        }
        match self.per_query.first().map(QueryNoise::layout) {
            Some(Layout::Paired) => {
                let (q, slot) = ((index - 1) / 2, (index - 1) % 2);
                if let QueryNoise::Paired(xi, eta) = &mut self.per_query[q] {
                    if slot == 0 {
                        *xi = value;
                    } else {
                        *eta = value;
                    }
                }
            }
            _ => self.per_query[index - 1] = QueryNoise::Single(value),
        }
    }

    pub(crate) fn single_at(&self, index: usize) -> Result<f64> {
        match self.per_query.get(index) {
            Some(QueryNoise::Single(eta)) => Ok(*eta),
            Some(QueryNoise::Paired(..)) => Err(Error::LayoutMismatch { expected: "single", found: "paired" }),
            None => Err(Error::TapeExhausted { requested: index, available: self.per_query.len() }),
        }
    }

    pub(crate) fn paired_at(&self, index: usize) -> Result<(f64, f64)> {
        match self.per_query.get(index) {
            Some(QueryNoise::Paired(xi, eta)) => Ok((*xi, *eta)),
            Some(QueryNoise::Single(_)) => Err(Error::LayoutMismatch { expected: "paired", found: "single" }),
            None => Err(Error::TapeExhausted { requested: index, available: self.per_query.len() }),
        }
    }
}

/// Which test produced a positive answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// The single test of the plain mechanisms.
    Plain,
    /// Adaptive first attempt: `q + xi - T~ >= sigma`.
    First,
    /// Adaptive second attempt: `q + eta - T~ >= 0`.
    Second,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Plain => "plain",
            Branch::First => "first",
            Branch::Second => "second",
        }
    }
}

/// One released answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Answer {
    /// Below the noisy threshold.
    Bot,
    /// Above the noisy threshold with the gap withheld (classic SVT).
    Top,
    /// Above the noisy threshold together with the nonnegative gap.
    TopGap { gap: f64, branch: Branch },
}

impl Answer {
    pub fn is_top(&self) -> bool {
        !matches!(self, Answer::Bot)
    }

    pub fn gap(&self) -> Option<f64> {
        match self {
            Answer::TopGap { gap, .. } => Some(*gap),
            _ => None,
        }
    }

    pub fn erase_gap(self) -> Answer {
        match self {
            Answer::TopGap { .. } => Answer::Top,
            other => other,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Bot => f.write_str("⊥"),
            Answer::Top => f.write_str("⊤"),
            Answer::TopGap { gap, branch: Branch::Plain } => write!(f, "⊤({gap})"),
            Answer::TopGap { gap, branch } => write!(f, "⊤{}({gap})", branch.name()),
        }
    }
}

/// The output `omega` of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputSequence {
    pub answers: Vec<Answer>,
}

impl OutputSequence {
    pub fn new(answers: Vec<Answer>) -> Self {
        Self { answers }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn top_count(&self) -> usize {
        self.answers.iter().filter(|a| a.is_top()).count()
    }

    /// Classic SVT view of a gap output.
    pub fn erase_gaps(&self) -> OutputSequence {
        OutputSequence::new(self.answers.iter().map(|a| a.erase_gap()).collect())
    }

    /// Same length, same tags and branches, gaps within `tol`.
    pub fn approx_eq(&self, other: &OutputSequence, tol: f64) -> bool {
        self.len() == other.len()
            && self.answers.iter().zip(&other.answers).all(|(a, b)| match (a, b) {
                (Answer::Bot, Answer::Bot) | (Answer::Top, Answer::Top) => true,
                (Answer::TopGap { gap: g1, branch: b1 }, Answer::TopGap { gap: g2, branch: b2 }) => {
                    b1 == b2 && (g1 - g2).abs() <= tol
                }
                _ => false,
            })
    }

    pub fn key(&self) -> OutputKey {
        OutputKey::from_answers(&self.answers)
    }
}

impl fmt::Display for OutputSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.answers.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Gaps are keyed in units of this resolution.
pub const GAP_RESOLUTION: f64 = 1e-9;

/// Hashable canonical form of one answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerKey {
    Bot,
    Top,
    /// Gap in units of [`GAP_RESOLUTION`]; integer gaps are exact.
    Gap {
        branch: Branch,
        ticks: i64,
    },
}

impl AnswerKey {
    pub fn from_answer(a: &Answer) -> Self {
        match *a {
            Answer::Bot => AnswerKey::Bot,
            Answer::Top => AnswerKey::Top,
            Answer::TopGap { gap, branch } => AnswerKey::Gap { branch, ticks: (gap / GAP_RESOLUTION).round() as i64 },
        }
    }
}

/// Canonical, hashable encoding of an [`OutputSequence`], used as the key of
/// output distributions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputKey(pub Vec<AnswerKey>);

impl OutputKey {
    pub fn from_answers(answers: &[Answer]) -> Self {
        OutputKey(answers.iter().map(AnswerKey::from_answer).collect())
    }
}

impl std::borrow::Borrow<[AnswerKey]> for OutputKey {
    fn borrow(&self) -> &[AnswerKey] {
        &self.0
    }
}

impl fmt::Display for OutputKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match a {
                AnswerKey::Bot => f.write_str("⊥")?,
                AnswerKey::Top => f.write_str("⊤")?,
                AnswerKey::Gap { branch, ticks } => {
                    let per_unit = (1.0 / GAP_RESOLUTION).round() as i64;
                    let gap = if ticks % per_unit == 0 {
                        (ticks / per_unit).to_string()
                    } else {
                        (*ticks as f64 * GAP_RESOLUTION).to_string()
                    };
                    match branch {
                        Branch::Plain => write!(f, "⊤({gap})")?,
                        b => write!(f, "⊤{}({gap})", b.name())?,
                    }
                }
            }
        }
        f.write_str("]")
    }
}
