use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PrivacyReport, Verdict};
use crate::error::{Error, Result};
use crate::mechanism::{Budget, Mechanism};
use crate::model::{check_workload, AnswerKey, NoiseTape, OutputKey, Side, Workload};
use crate::noise::{
    discrete_laplace_box, discrete_laplace_pmf, discrete_laplace_tail, NoiseKind, NoiseSampler, NoiseSpec,
};

/// Slack on the padded log-ratio before a violation is reported.
pub const LOSS_TOLERANCE: f64 = 1e-9;

/// How far each tape coordinate is enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSpec {
    /// Every coordinate ranges over `-B..=B`.
    Uniform(u64),
    /// Each coordinate gets the smallest box whose two-sided tail mass is
    /// below this target.
    TailTarget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationConfig {
    pub bounds: BoxSpec,
    /// Largest grid, in tape points, that will be enumerated.
    pub grid_budget: u128,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self { bounds: BoxSpec::TailTarget(1e-12), grid_budget: 100_000_000 }
    }
}

/// Output probabilities restricted to a box, plus the tape mass outside it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputDistribution {
    pub masses: BTreeMap<OutputKey, f64>,
    /// Probability that some coordinate falls outside the box. Every output
    /// probability is at most this much above its listed mass.
    pub truncation_loss: f64,
}

impl OutputDistribution {
    pub fn mass(&self, key: &OutputKey) -> f64 {
        self.masses.get(key).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }
}

struct Grid {
    /// `pmf[j][i]` is the probability of value `i - bound[j]` at coordinate `j`.
    pmf: Vec<Vec<f64>>,
    bound: Vec<i64>,
    /// `suffix_mass[j]` is the in-box mass of coordinates `j..`.
    suffix_mass: Vec<f64>,
    truncation: f64,
}

fn build_grid(spec: &NoiseSpec, dimension: usize, config: &EnumerationConfig) -> Result<Grid> {
    let mut pmf = Vec::with_capacity(dimension);
    let mut bound = Vec::with_capacity(dimension);
    let mut log_inside = 0.0;
    let mut points: u128 = 1;
    for j in 0..dimension {
        let scale = spec.scale(spec.role_of_coordinate(j));
        let b = match config.bounds {
            BoxSpec::Uniform(b) => b,
            BoxSpec::TailTarget(t) => discrete_laplace_box(scale, t),
        };
        points = points.saturating_mul(2 * b as u128 + 1);
        log_inside += (-discrete_laplace_tail(b, scale)).ln_1p();
        let b = b as i64;
        pmf.push((-b..=b).map(|x| discrete_laplace_pmf(x, scale)).collect::<Vec<_>>());
        bound.push(b);
    }
    if points > config.grid_budget {
        return Err(Error::GridBudgetExceeded { points, budget: config.grid_budget });
    }
    let mut suffix_mass = vec![1.0; dimension + 1];
    for j in (0..dimension).rev() {
        suffix_mass[j] = suffix_mass[j + 1] * pmf[j].iter().sum::<f64>();
    }
    Ok(Grid { pmf, bound, suffix_mass, truncation: -log_inside.exp_m1() })
}

/// Number of tape points enumerated for `w` under `spec` and `config`.
pub fn grid_points(mechanism: Mechanism, w: &Workload, spec: &NoiseSpec, config: &EnumerationConfig) -> u128 {
    let dimension = 1 + w.len() * mechanism.layout().draws_per_query();
    (0..dimension)
        .map(|j| {
            let scale = spec.scale(spec.role_of_coordinate(j));
            let b = match config.bounds {
                BoxSpec::Uniform(b) => b,
                BoxSpec::TailTarget(t) => discrete_laplace_box(scale, t),
            };
            2 * b as u128 + 1
        })
        .fold(1u128, u128::saturating_mul)
}

/// Exact output distribution of `mechanism` on `side` of `w`, summed over
/// every discrete Laplace tape in the box. Once a run stops, the unread
/// coordinates are summed out in closed form.
pub fn enumerate_output_dist(
    mechanism: Mechanism,
    w: &Workload,
    side: Side,
    budget: &Budget,
    spec: &NoiseSpec,
    config: &EnumerationConfig,
) -> Result<OutputDistribution> {
    check_workload(w)?;
    if !w.is_integral() {
        return Err(Error::InvalidParameter {
            name: "workload",
            reason: "enumeration needs integer query values and threshold".into(),
        });
    }
    if spec.kind != NoiseKind::DiscreteLaplace {
        return Err(Error::InvalidParameter {
            name: "noise",
            reason: "enumeration needs discrete Laplace noise".into(),
        });
    }
    let layout = mechanism.layout();
    if spec.layout() != layout {
        return Err(Error::LayoutMismatch { expected: layout.name(), found: spec.layout().name() });
    }
    let dimension = 1 + w.len() * layout.draws_per_query();
    let grid = build_grid(spec, dimension, config)?;

    let partials: Vec<Result<HashMap<OutputKey, f64>>> = (0..grid.pmf[0].len())
        .into_par_iter()
        .map(|t| {
            let mut tape = NoiseTape::zeros(layout, w.len());
            tape.set_coordinate(0, (t as i64 - grid.bound[0]) as f64);
            let mut masses: HashMap<OutputKey, f64> = HashMap::new();
            let mut answers = Vec::with_capacity(w.len());
            let mut key = Vec::with_capacity(w.len());
            let mut idx = vec![0usize; dimension];
            // prefix[j] is the weight of coordinates 0..=j.
            let mut prefix = vec![0.0; dimension];
            prefix[0] = grid.pmf[0][t];
            for j in 1..dimension {
                tape.set_coordinate(j, -grid.bound[j] as f64);
                prefix[j] = prefix[j - 1] * grid.pmf[j][0];
            }
            loop {
                let trace = mechanism.execute_into(w, side, budget, &tape, &mut answers)?;
                let read = trace.consumed.min(dimension);
                let weight = prefix[read - 1] * grid.suffix_mass[read];
                key.clear();
                key.extend(answers.iter().map(AnswerKey::from_answer));
                match masses.get_mut(key.as_slice()) {
                    Some(m) => *m += weight,
                    None => {
                        masses.insert(OutputKey(key.clone()), weight);
                    }
                }

                // Advance the odometer over coordinates 1..read; the rest
                // were summed out above.
                let mut j = read;
                loop {
                    if j == 1 {
                        return Ok(masses);
                    }
                    j -= 1;
                    if idx[j] + 1 < grid.pmf[j].len() {
                        break;
                    }
                    idx[j] = 0;
                    tape.set_coordinate(j, -grid.bound[j] as f64);
                }
                for (r, slot) in idx.iter_mut().enumerate().skip(read) {
                    *slot = 0;
                    tape.set_coordinate(r, -grid.bound[r] as f64);
                }
                idx[j] += 1;
                tape.set_coordinate(j, (idx[j] as i64 - grid.bound[j]) as f64);
                for r in j..dimension {
                    prefix[r] = prefix[r - 1] * grid.pmf[r][idx[r]];
                }
            }
        })
        .collect();

    let mut masses = BTreeMap::new();
    for partial in partials {
        let mut partial: Vec<_> = partial?.into_iter().collect();
        partial.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        for (key, mass) in partial {
            *masses.entry(key).or_insert(0.0) += mass;
        }
    }
    Ok(OutputDistribution { masses, truncation_loss: grid.truncation })
}

/// Largest log-ratio between two truncated output distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLoss {
    /// `max ln(p(w) / (q(w) + tau_q))` over outputs and both directions,
    /// floored at zero. Any true loss is at least this large, so a value
    /// above `epsilon` is a certified violation.
    pub padded: f64,
    /// `max ln(p(w) / q(w))` over outputs with positive mass on both sides.
    pub raw: f64,
    pub argmax: Option<OutputKey>,
    /// Outputs with mass on one side only.
    pub unmatched: usize,
    pub tau_p: f64,
    pub tau_q: f64,
}

fn family(key: &OutputKey) -> u8 {
    key.0.iter().fold(0, |acc, a| {
        acc | match a {
            AnswerKey::Bot => 0,
            AnswerKey::Top => 1,
            AnswerKey::Gap { .. } => 2,
        }
    })
}

pub fn max_privacy_loss(p: &OutputDistribution, q: &OutputDistribution) -> Result<PrivacyLoss> {
    let families = |d: &OutputDistribution| d.masses.keys().fold(0, |acc, k| acc | family(k));
    if families(p) | families(q) == 3 {
        return Err(Error::DomainMismatch("one distribution has gap-free positives and the other has gaps".into()));
    }
    let mut loss = PrivacyLoss {
        padded: 0.0,
        raw: 0.0,
        argmax: None,
        unmatched: 0,
        tau_p: p.truncation_loss,
        tau_q: q.truncation_loss,
    };
    for (a, b) in [(p, q), (q, p)] {
        for (key, &pa) in &a.masses {
            let pb = b.mass(key);
            if pa <= 0.0 {
                continue;
            }
            if pb > 0.0 {
                loss.raw = loss.raw.max((pa / pb).ln());
            }
            let padded = (pa / (pb + b.truncation_loss)).ln();
            if padded > loss.padded {
                loss.padded = padded;
                loss.argmax = Some(key.clone());
            }
        }
    }
    loss.unmatched = p.masses.keys().filter(|k| !q.masses.contains_key(*k)).count()
        + q.masses.keys().filter(|k| !p.masses.contains_key(*k)).count();
    Ok(loss)
}

/// Enumerates both sides of `w` under its default budget and discrete
/// Laplace noise and compares the distributions against `e^epsilon`.
pub fn check_exact_dp(mechanism: Mechanism, w: &Workload, config: &EnumerationConfig) -> Result<PrivacyReport> {
    let budget = mechanism.budget_for(w)?;
    let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
    let p = enumerate_output_dist(mechanism, w, Side::D, &budget, &spec, config)?;
    let q = enumerate_output_dist(mechanism, w, Side::DPrime, &budget, &spec, config)?;
    let loss = max_privacy_loss(&p, &q)?;
    let bound = w.epsilon + LOSS_TOLERANCE;
    let violations = [&p, &q]
        .iter()
        .zip([&q, &p])
        .map(|(a, b)| {
            a.masses.iter().filter(|(k, &m)| m > 0.0 && (m / (b.mass(k) + b.truncation_loss)).ln() > bound).count()
                as u64
        })
        .sum();
    let mut notes = vec![format!(
        "{} outputs, raw loss {:.6}, {} unmatched",
        p.masses.len().max(q.masses.len()),
        loss.raw,
        loss.unmatched
    )];
    if let Some(key) = &loss.argmax {
        notes.push(format!("largest padded ratio at {key}"));
    }
    Ok(PrivacyReport {
        verdict: if loss.padded <= bound { Verdict::Pass } else { Verdict::Fail },
        suite: "dp-exact".into(),
        mechanism,
        trials: 1,
        checks: (p.masses.len() + q.masses.len()) as u64,
        violations,
        max_cost: None,
        max_log_ratio: Some(loss.padded),
        truncation_loss: Some(p.truncation_loss.max(q.truncation_loss)),
        witness: None,
        notes,
    })
}

/// Output frequencies of a sampled run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub counts: BTreeMap<OutputKey, u64>,
    pub samples: u64,
}

impl EmpiricalDistribution {
    pub fn frequency(&self, key: &OutputKey) -> f64 {
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.samples.max(1) as f64
    }

    pub fn to_distribution(&self) -> OutputDistribution {
        OutputDistribution {
            masses: self.counts.keys().map(|k| (k.clone(), self.frequency(k))).collect(),
            truncation_loss: 0.0,
        }
    }
}

const CHUNK: u64 = 1 << 16;

/// Runs the mechanism on `samples` fresh tapes. Chunk `c` of
/// `CHUNK` samples draws from ChaCha stream `(seed, c)`, so the result does
/// not depend on the thread count.
pub fn sample_output_dist(
    mechanism: Mechanism,
    w: &Workload,
    side: Side,
    budget: &Budget,
    spec: &NoiseSpec,
    samples: u64,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    check_workload(w)?;
    let sampler = NoiseSampler::new(*spec)?;
    let layout = mechanism.layout();
    if spec.layout() != layout {
        return Err(Error::LayoutMismatch { expected: layout.name(), found: spec.layout().name() });
    }
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<Result<HashMap<OutputKey, u64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut tape = NoiseTape::zeros(layout, w.len());
            let mut answers = Vec::with_capacity(w.len());
            let mut counts = HashMap::new();
            for _ in 0..n {
                sampler.refill(&mut tape, &mut rng);
                mechanism.execute_into(w, side, budget, &tape, &mut answers)?;
                *counts.entry(OutputKey::from_answers(&answers)).or_insert(0) += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut counts = BTreeMap::new();
    for partial in partials {
        for (key, n) in partial? {
            *counts.entry(key).or_insert(0) += n;
        }
    }
    Ok(EmpiricalDistribution { counts, samples })
}

/// `0.5 * sum |p(w) - q(w)|` over the union of outputs.
pub fn total_variation(p: &OutputDistribution, q: &OutputDistribution) -> f64 {
    let left: f64 = p.masses.iter().map(|(k, &m)| (m - q.mass(k)).abs()).sum();
    let right: f64 = q.masses.iter().filter(|(k, _)| !p.masses.contains_key(*k)).map(|(_, &m)| m).sum();
    0.5 * (left + right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Answer, Branch, OutputSequence};

    fn key(answers: Vec<Answer>) -> OutputKey {
        OutputSequence::new(answers).key()
    }

    #[test]
    fn single_query_matches_closed_form() {
        // One query, k = 1: Top iff q + eta_1 >= T + eta_0, i.e.
        // eta_1 - eta_0 >= T - q.
        let w = Workload::from_values(&[(10.0, 9.0)], 10.0, 1, 1.0);
        let budget = Mechanism::Svt.budget_for(&w).unwrap();
        let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
        let dist =
            enumerate_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, &EnumerationConfig::default()).unwrap();
        let (s0, s1) = (2.0, 4.0);
        let mut top = 0.0;
        for a in -200i64..=200 {
            for b in -400i64..=400 {
                if b >= a {
                    top += discrete_laplace_pmf(a, s0) * discrete_laplace_pmf(b, s1);
                }
            }
        }
        assert!((dist.mass(&key(vec![Answer::Top])) - top).abs() < 1e-10);
        assert!((dist.total() + dist.truncation_loss - 1.0).abs() < 1e-10);
        assert!(dist.truncation_loss < 1e-9);
    }

    #[test]
    fn early_stop_summation_matches_full_grid() {
        // Uniform box, tiny scales: the closed-form suffix sums must give
        // the same masses as brute force over the whole grid.
        let w = Workload::from_values(&[(3.0, 2.0), (1.0, 2.0), (2.0, 2.0)], 2.0, 1, 6.0);
        let config = EnumerationConfig { bounds: BoxSpec::Uniform(4), grid_budget: 1 << 23 };
        for m in [Mechanism::SvtGap, Mechanism::AdaptiveGap] {
            let w = w.clone().with_sigma(1.0);
            let budget = m.budget_for(&w).unwrap();
            let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
            let fast = enumerate_output_dist(m, &w, Side::D, &budget, &spec, &config).unwrap();
            let dimension = 1 + w.len() * m.layout().draws_per_query();
            let mut brute: BTreeMap<OutputKey, f64> = BTreeMap::new();
            let total = 9usize.pow(dimension as u32);
            for code in 0..total {
                let coords: Vec<f64> =
                    (0..dimension).map(|j| ((code / 9usize.pow(j as u32)) % 9) as f64 - 4.0).collect();
                let tape = NoiseTape::from_coordinates(m.layout(), &coords).unwrap();
                let weight: f64 = coords
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| discrete_laplace_pmf(x as i64, spec.scale(spec.role_of_coordinate(j))))
                    .product();
                let out = m.execute(&w, Side::D, &budget, &tape).unwrap().output;
                *brute.entry(out.key()).or_insert(0.0) += weight;
            }
            assert_eq!(fast.masses.len(), brute.len(), "{m}");
            for (k, v) in &brute {
                assert!((fast.mass(k) - v).abs() < 1e-12, "{m} {k}: {} vs {v}", fast.mass(k));
            }
        }
    }

    #[test]
    fn grid_budget_is_enforced() {
        let w = Workload::from_values(&[(1.0, 1.0); 4], 0.0, 1, 1.0);
        let budget = Mechanism::SvtGap.budget_for(&w).unwrap();
        let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
        let config = EnumerationConfig::default();
        assert!(grid_points(Mechanism::SvtGap, &w, &spec, &config) > config.grid_budget);
        let err = enumerate_output_dist(Mechanism::SvtGap, &w, Side::D, &budget, &spec, &config).unwrap_err();
        assert!(matches!(err, Error::GridBudgetExceeded { .. }));
    }

    #[test]
    fn rejects_real_values_and_continuous_noise() {
        let w = Workload::from_values(&[(1.5, 1.0)], 0.0, 1, 1.0);
        let budget = Mechanism::Svt.budget_for(&w).unwrap();
        let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
        let config = EnumerationConfig::default();
        assert!(enumerate_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, &config).is_err());
        let w = Workload::from_values(&[(1.0, 1.0)], 0.0, 1, 1.0);
        let spec = budget.noise_spec(NoiseKind::ContinuousLaplace);
        assert!(enumerate_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, &config).is_err());
    }

    #[test]
    fn small_instances_are_private() {
        let cases = [
            (Mechanism::Svt, vec![(10.0, 9.0), (9.0, 10.0)], 1.0),
            (Mechanism::SvtGap, vec![(10.0, 11.0), (11.0, 10.0)], 1.0),
            (Mechanism::AdaptiveGap, vec![(10.0, 9.0)], 1.0),
        ];
        for (m, values, eps) in cases {
            let w = Workload::from_values(&values, 10.0, 1, eps).with_sigma(2.0);
            let report = check_exact_dp(m, &w, &EnumerationConfig::default()).unwrap();
            assert!(report.passed(), "{m}: {:?}", report);
            assert!(report.max_log_ratio.unwrap() > 0.0);
            assert!(report.truncation_loss.unwrap() < 1e-9);
        }
    }

    #[test]
    fn mismatched_families_are_rejected() {
        let mut p = OutputDistribution::default();
        p.masses.insert(key(vec![Answer::Top]), 1.0);
        let mut q = OutputDistribution::default();
        q.masses.insert(key(vec![Answer::TopGap { gap: 1.0, branch: Branch::Plain }]), 1.0);
        assert!(matches!(max_privacy_loss(&p, &q), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn loss_and_distance_of_known_distributions() {
        let (a, b) = (key(vec![Answer::Bot]), key(vec![Answer::Top]));
        let p = OutputDistribution { masses: [(a.clone(), 0.75), (b.clone(), 0.25)].into(), truncation_loss: 0.0 };
        let q = OutputDistribution { masses: [(a.clone(), 0.5), (b.clone(), 0.5)].into(), truncation_loss: 0.0 };
        let loss = max_privacy_loss(&p, &q).unwrap();
        assert!((loss.padded - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss.argmax, Some(b));
        assert!((total_variation(&p, &q) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_reproducible_and_close() {
        let w = Workload::from_values(&[(10.0, 9.0), (8.0, 8.0)], 10.0, 1, 2.0);
        let budget = Mechanism::Svt.budget_for(&w).unwrap();
        let spec = budget.noise_spec(NoiseKind::DiscreteLaplace);
        let a = sample_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, 200_000, 9).unwrap();
        let b = sample_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, 200_000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.values().sum::<u64>(), 200_000);
        let exact =
            enumerate_output_dist(Mechanism::Svt, &w, Side::D, &budget, &spec, &EnumerationConfig::default()).unwrap();
        assert!(total_variation(&exact, &a.to_distribution()) < 5e-3);
    }
}
