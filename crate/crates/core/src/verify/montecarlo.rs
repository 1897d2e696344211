use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::enumerate::{sample_output_dist, EmpiricalDistribution};
use super::{PrivacyReport, Verdict};
use crate::error::{Error, Result};
use crate::mechanism::Mechanism;
use crate::model::{AnswerKey, OutputKey, Side, Workload, GAP_RESOLUTION};
use crate::noise::NoiseKind;

const LABEL: &str = "falsification heuristic";

/// Settings for [`mc_privacy_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Samples per side; at least `10_000`.
    pub samples: u64,
    pub seed: u64,
    pub noise: NoiseKind,
    /// Width of the Wilson intervals in standard deviations.
    pub z: f64,
    /// Gaps are floored to multiples of this width before counting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_bucket: Option<f64>,
    /// Noise is calibrated to `budget_multiplier * epsilon`. Values above
    /// one under-noise the mechanism on purpose.
    pub budget_multiplier: f64,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self { samples, seed, noise: NoiseKind::DiscreteLaplace, z: 4.0, gap_bucket: None, budget_multiplier: 1.0 }
    }
}

/// An output whose interval-based log-ratio exceeds `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedOutput {
    pub output: OutputKey,
    /// Side whose probability is larger.
    pub heavier: Side,
    pub count_d: u64,
    pub count_dprime: u64,
    /// `ln(lower(p) / upper(q))` with `p` on the heavier side.
    pub lower_log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub label: String,
    pub mechanism: Mechanism,
    pub samples: u64,
    pub epsilon: f64,
    /// Distinct outputs seen on either side.
    pub outputs: usize,
    /// Largest `ln(lower(p) / upper(q))` over outputs and directions.
    pub max_lower_log_ratio: f64,
    pub flagged: Vec<FlaggedOutput>,
    pub verdict: Verdict,
}

impl McReport {
    /// The common report shape, with `trials` counting samples per side
    /// and `checks` counting distinct outputs.
    pub fn to_privacy_report(&self) -> PrivacyReport {
        let mut notes = vec![format!("{}; passing proves nothing", self.label)];
        if let Some(f) = self.flagged.first() {
            notes.push(format!(
                "{} seen {} times on D and {} on D', lower log-ratio {:.4}",
                f.output, f.count_d, f.count_dprime, f.lower_log_ratio
            ));
        }
        PrivacyReport {
            verdict: self.verdict,
            suite: "dp-mc".into(),
            mechanism: self.mechanism,
            trials: self.samples,
            checks: self.outputs as u64,
            violations: self.flagged.len() as u64,
            max_cost: None,
            max_log_ratio: Some(self.max_lower_log_ratio).filter(|r| r.is_finite()),
            truncation_loss: None,
            witness: None,
            notes,
        }
    }
}

/// Wilson score interval for `count` successes out of `n`.
fn wilson(count: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = count as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn bucketed(dist: EmpiricalDistribution, width: Option<f64>) -> BTreeMap<OutputKey, u64> {
    let Some(width) = width else { return dist.counts };
    let mut out = BTreeMap::new();
    for (key, n) in dist.counts {
        let key = OutputKey(
            key.0
                .into_iter()
                .map(|a| match a {
                    AnswerKey::Gap { branch, ticks } => {
                        let gap = ((ticks as f64 * GAP_RESOLUTION) / width).floor() * width;
                        AnswerKey::Gap { branch, ticks: (gap / GAP_RESOLUTION).round() as i64 }
                    }
                    other => other,
                })
                .collect(),
        );
        *out.entry(key).or_insert(0) += n;
    }
    out
}

/// Samples the mechanism on both sides and flags outputs whose Wilson
/// intervals cannot be reconciled with `e^epsilon`. A flag is strong
/// evidence of a violation; no flag proves nothing.
pub fn mc_privacy_estimate(mechanism: Mechanism, w: &Workload, config: &McConfig) -> Result<McReport> {
    if config.samples < 10_000 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("need at least 10000 samples per side, got {}", config.samples),
        });
    }
    if !(config.z > 0.0 && config.budget_multiplier > 0.0) {
        return Err(Error::InvalidParameter { name: "mc", reason: "z and budget_multiplier must be positive".into() });
    }
    if let Some(width) = config.gap_bucket {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gap_bucket",
                reason: format!("bucket width must be positive, got {width}"),
            });
        }
    }
    let budget = mechanism.budget_for(w)?;
    let mut spec = budget.noise_spec(config.noise);
    if config.budget_multiplier != 1.0 {
        spec = spec.scaled_budget(config.budget_multiplier);
    }
    let n = config.samples;
    let on_d = sample_output_dist(mechanism, w, Side::D, &budget, &spec, n, config.seed)?;
    let on_dprime = sample_output_dist(mechanism, w, Side::DPrime, &budget, &spec, n, !config.seed)?;
    let on_d = bucketed(on_d, config.gap_bucket);
    let on_dprime = bucketed(on_dprime, config.gap_bucket);

    let mut keys: Vec<&OutputKey> = on_d.keys().chain(on_dprime.keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut max_lower = f64::NEG_INFINITY;
    let mut flagged = Vec::new();
    for key in &keys {
        let count_d = on_d.get(*key).copied().unwrap_or(0);
        let count_dprime = on_dprime.get(*key).copied().unwrap_or(0);
        let (lo_d, hi_d) = wilson(count_d, n, config.z);
        let (lo_dp, hi_dp) = wilson(count_dprime, n, config.z);
        for (heavier, lo, hi) in [(Side::D, lo_d, hi_dp), (Side::DPrime, lo_dp, hi_d)] {
            if lo <= 0.0 {
                continue;
            }
            let ratio = (lo / hi).ln();
            max_lower = max_lower.max(ratio);
            if ratio > w.epsilon {
                flagged.push(FlaggedOutput {
                    output: (*key).clone(),
                    heavier,
                    count_d,
                    count_dprime,
                    lower_log_ratio: ratio,
                });
            }
        }
    }
    flagged.sort_by(|a, b| b.lower_log_ratio.total_cmp(&a.lower_log_ratio));
    Ok(McReport {
        label: LABEL.into(),
        mechanism,
        samples: n,
        epsilon: w.epsilon,
        outputs: keys.len(),
        max_lower_log_ratio: max_lower,
        verdict: if flagged.is_empty() { Verdict::Pass } else { Verdict::Fail },
        flagged,
    })
}
