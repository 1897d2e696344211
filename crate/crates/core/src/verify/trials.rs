use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrialPlan;
use crate::error::Result;
use crate::mechanism::Budget;
use crate::model::{NoiseTape, QueryPair, Workload};
use crate::noise::{sample_tape, NoiseKind, NoiseSpec};

/// Distribution of random workloads for trial suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadGenerator {
    pub max_queries: usize,
    /// Inclusive range of `q(D)` away from the boundary.
    pub value_range: (i64, i64),
    pub threshold: f64,
    /// Inclusive range of `k`.
    pub k_range: (u32, u32),
    pub epsilon: f64,
    pub sigma: f64,
    /// Integer query values (and, by default, integer noise).
    pub integral: bool,
    /// Share of workloads with `delta_i = +-1` and values straddling the
    /// threshold.
    pub boundary_fraction: f64,
    /// Forces every `delta_i` to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_delta: Option<f64>,
}

impl Default for WorkloadGenerator {
    fn default() -> Self {
        Self {
            max_queries: 8,
            value_range: (0, 20),
            threshold: 10.0,
            k_range: (1, 3),
            epsilon: 1.0,
            sigma: 2.0,
            integral: true,
            boundary_fraction: 0.25,
            fixed_delta: None,
        }
    }
}

impl WorkloadGenerator {
    pub fn default_noise(&self) -> NoiseKind {
        if self.integral {
            NoiseKind::DiscreteLaplace
        } else {
            NoiseKind::ContinuousLaplace
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Workload {
        let n = rng.random_range(1..=self.max_queries.max(1));
        let k = rng.random_range(self.k_range.0.max(1)..=self.k_range.1.max(self.k_range.0).max(1));
        let boundary = rng.random_bool(self.boundary_fraction.clamp(0.0, 1.0));
        let (lo, hi) = self.value_range;
        let pairs = (0..n)
            .map(|_| {
                let (value_d, delta) = if self.integral {
                    let v = if boundary {
                        self.threshold.round() as i64 + rng.random_range(-2..=2)
                    } else {
                        rng.random_range(lo..=hi)
                    };
                    let d = if boundary {
                        if rng.random_bool(0.5) {
                            1
                        } else {
                            -1
                        }
                    } else {
                        rng.random_range(-1..=1)
                    };
                    (v as f64, d as f64)
                } else {
                    let v = if boundary {
                        self.threshold + rng.random_range(-2.0..2.0)
                    } else {
                        rng.random_range(lo as f64..=hi as f64)
                    };
                    let d = if boundary {
                        if rng.random_bool(0.5) {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        rng.random_range(-1.0..=1.0)
                    };
                    (v, d)
                };
                let delta = self.fixed_delta.unwrap_or(delta);
                QueryPair::new(value_d, value_d - delta)
            })
            .collect();
        Workload::new(pairs, self.threshold, k, self.epsilon).with_sigma(self.sigma)
    }
}

/// One generated trial: a workload, its budget, and the tape `H`.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: u64,
    pub workload: Workload,
    pub budget: Budget,
    pub spec: NoiseSpec,
    pub tape_seed: u64,
    pub tape: NoiseTape,
}

impl Trial {
    /// Regenerates trial `index` of `plan`.
    pub fn generate(plan: &TrialPlan, index: u64) -> Result<Trial> {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(index);
        let workload = plan.generator.generate(&mut rng);
        let tape_seed: u64 = rng.random();
        let budget = plan.mechanism.budget_for(&workload)?;
        let spec = budget.noise_spec(plan.noise);
        let tape = sample_tape(&spec, plan.mechanism.layout(), workload.len(), tape_seed)?;
        Ok(Trial { index, workload, budget, spec, tape_seed, tape })
    }

    /// An independent tape for the same workload, the `j`-th resample.
    pub fn resample(&self, j: u64) -> Result<NoiseTape> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.tape_seed);
        rng.set_stream(j + 1);
        sample_tape(&self.spec, self.spec.layout(), self.workload.len(), rng.random())
    }
}
