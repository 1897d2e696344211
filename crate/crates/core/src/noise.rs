//! Laplace and discrete Laplace noise, and seeded tape sampling.
//!
//! Continuous Laplace draws use the inverse CDF applied to a uniform on the
//! open interval `(0, 1)`. Discrete Laplace draws are differences of two
//! geometric variables. Both are driven by a ChaCha stream seeded from a
//! single `u64`, so a `(spec, length, seed)` triple names a tape exactly.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layout, NoiseTape, QueryNoise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    ContinuousLaplace,
    DiscreteLaplace,
}

/// Position of a draw on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Threshold,
    /// The only per-query draw of the single layout.
    Query,
    /// `xi_i` of the paired layout.
    QueryFirst,
    /// `eta_i` of the paired layout.
    QuerySecond,
}

/// Per-query scales; the variant fixes the tape layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryScales {
    Single(f64),
    Paired { first: f64, second: f64 },
}

/// Distribution family and the scale `b = 1/epsilon_role` of every role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub threshold: f64,
    pub query: QueryScales,
}

impl NoiseSpec {
    pub fn single(kind: NoiseKind, threshold: f64, query: f64) -> Result<Self> {
        let spec = NoiseSpec { kind, threshold, query: QueryScales::Single(query) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn paired(kind: NoiseKind, threshold: f64, first: f64, second: f64) -> Result<Self> {
        let spec = NoiseSpec { kind, threshold, query: QueryScales::Paired { first, second } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for &role in self.roles() {
            let b = self.scale(role);
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "scale",
                    reason: format!("scale of {role:?} must be positive and finite, got {b}"),
                });
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        match self.query {
            QueryScales::Single(_) => Layout::Single,
            QueryScales::Paired { .. } => Layout::Paired,
        }
    }

    pub fn roles(&self) -> &'static [Role] {
        match self.layout() {
            Layout::Single => &[Role::Threshold, Role::Query],
            Layout::Paired => &[Role::Threshold, Role::QueryFirst, Role::QuerySecond],
        }
    }

    /// Scale of `role`; roles foreign to the layout fall back to the
    /// nearest per-query scale.
    pub fn scale(&self, role: Role) -> f64 {
        match (role, self.query) {
            (Role::Threshold, _) => self.threshold,
            (_, QueryScales::Single(b)) => b,
            (Role::QuerySecond, QueryScales::Paired { second, .. }) => second,
            (_, QueryScales::Paired { first, .. }) => first,
        }
    }

    /// Role of flattened tape coordinate `index` (see
    /// [`NoiseTape::coordinates`]).
    pub fn role_of_coordinate(&self, index: usize) -> Role {
        match (index, self.layout()) {
            (0, _) => Role::Threshold,
            (_, Layout::Single) => Role::Query,
            (i, Layout::Paired) if i % 2 == 1 => Role::QueryFirst,
            _ => Role::QuerySecond,
        }
    }

    /// Same spec with every scale divided by `factor` (noise budget scaled
    /// up by `factor`). Used by the mutation self-tests.
    pub fn scaled_budget(&self, factor: f64) -> NoiseSpec {
        let query = match self.query {
            QueryScales::Single(b) => QueryScales::Single(b / factor),
            QueryScales::Paired { first, second } => {
                QueryScales::Paired { first: first / factor, second: second / factor }
            }
        };
        NoiseSpec { kind: self.kind, threshold: self.threshold / factor, query }
    }
}

/// Inverse CDF of the zero-mean Laplace distribution with scale `scale`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::DomainError(u));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "scale",
            reason: format!("must be positive and finite, got {scale}"),
        });
    }
    let centered = u - 0.5;
    if centered == 0.0 {
        return Ok(0.0);
    }
    // ln(1 - 2|c|) via ln_1p keeps precision near the median.
    Ok(-scale * centered.signum() * (-2.0 * centered.abs()).ln_1p())
}

/// `(1 - a)/(1 + a) * a^|x|` with `a = exp(-1/scale)`.
pub fn discrete_laplace_pmf(x: i64, scale: f64) -> f64 {
    let rate = 1.0 / scale;
    // (1 - a)/(1 + a) = tanh(rate / 2)
    (0.5 * rate).tanh() * (-(x.unsigned_abs() as f64) * rate).exp()
}

/// `P(|X| > bound)` for discrete Laplace `X`, i.e. `2 a^(B+1) / (1 + a)`.
pub fn discrete_laplace_tail(bound: u64, scale: f64) -> f64 {
    let rate = 1.0 / scale;
    let alpha = (-rate).exp();
    2.0 * (-((bound + 1) as f64) * rate).exp() / (1.0 + alpha)
}

/// Smallest `B` with `P(|X| > B) < target`.
pub fn discrete_laplace_box(scale: f64, target: f64) -> u64 {
    let rate = 1.0 / scale;
    let alpha = (-rate).exp();
    // 2 a^(B+1)/(1+a) < t  <=>  B + 1 > ln(t (1+a) / 2) / ln a
    let estimate = ((target * (1.0 + alpha) / 2.0).ln() / -rate - 1.0).floor().max(0.0) as u64;
    let mut b = estimate.saturating_sub(2);
    while discrete_laplace_tail(b, scale) >= target {
        b += 1;
    }
    b
}

/// Draws single values of one distribution family.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spec: NoiseSpec,
    geometric: Vec<(Role, Geometric)>,
}

impl NoiseSampler {
    pub fn new(spec: NoiseSpec) -> Result<Self> {
        spec.validate()?;
        let mut geometric = Vec::new();
        if spec.kind == NoiseKind::DiscreteLaplace {
            for &role in spec.roles() {
                let p = -(-1.0 / spec.scale(role)).exp_m1();
                let g =
                    Geometric::new(p).map_err(|e| Error::InvalidParameter { name: "scale", reason: e.to_string() })?;
                geometric.push((role, g));
            }
        }
        Ok(Self { spec, geometric })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn draw<R: Rng + ?Sized>(&self, role: Role, rng: &mut R) -> f64 {
        match self.spec.kind {
            NoiseKind::ContinuousLaplace => {
                let u: f64 = Open01.sample(rng);
                laplace_inverse_cdf(u, self.spec.scale(role))
                    .expect("Open01 yields u in (0, 1) and the spec was validated")
            }
            NoiseKind::DiscreteLaplace => {
                let g = &self
                    .geometric
                    .iter()
                    .find(|(r, _)| *r == role)
                    .or_else(|| self.geometric.get(1))
                    .expect("discrete sampler holds one geometric per role")
                    .1;
                let a = g.sample(rng);
                let b = g.sample(rng);
                a as f64 - b as f64
            }
        }
    }

    /// Overwrites every coordinate of `tape`, threshold first.
    pub fn refill<R: Rng + ?Sized>(&self, tape: &mut NoiseTape, rng: &mut R) {
        tape.threshold_noise = self.draw(Role::Threshold, rng);
        for q in tape.per_query.iter_mut() {
            *q = match self.spec.layout() {
                Layout::Single => QueryNoise::Single(self.draw(Role::Query, rng)),
                Layout::Paired => {
                    let xi = self.draw(Role::QueryFirst, rng);
                    let eta = self.draw(Role::QuerySecond, rng);
                    QueryNoise::Paired(xi, eta)
                }
            };
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> NoiseTape {
        let mut tape = NoiseTape::zeros(self.spec.layout(), length);
        self.refill(&mut tape, rng);
        tape
    }
}

/// RNG used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples a tape with one threshold draw and `length` per-query entries.
pub fn sample_tape(spec: &NoiseSpec, layout: Layout, length: usize, seed: u64) -> Result<NoiseTape> {
    if spec.layout() != layout {
        return Err(Error::LayoutMismatch { expected: layout.name(), found: spec.layout().name() });
    }
    if length == 0 {
        return Err(Error::InvalidParameter {
            name: "length",
            reason: "a tape needs at least one per-query entry".into(),
        });
    }
    let sampler = NoiseSampler::new(*spec)?;
    Ok(sampler.sample(length, &mut seeded_rng(seed)))
}
