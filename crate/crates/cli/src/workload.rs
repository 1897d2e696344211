use std::fs;
use std::path::Path;

use gapsvt::{check_workload, Error, NoiseKind, NoiseTape, QueryPair, Workload};
use serde::{Deserialize, Serialize};

use crate::counting::CountingSource;
use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseName {
    #[default]
    Laplace,
    Dlap,
}

impl From<NoiseName> for NoiseKind {
    fn from(n: NoiseName) -> Self {
        match n {
            NoiseName::Laplace => NoiseKind::ContinuousLaplace,
            NoiseName::Dlap => NoiseKind::DiscreteLaplace,
        }
    }
}

/// On-disk workload: `pairs` holds `[q(D), q(D')]` per query, or
/// `counting` derives them from a row set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counting: Option<CountingSource>,
    pub threshold: f64,
    pub k: u32,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub noise: NoiseName,
}

impl WorkloadFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: WorkloadFile = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("workload: {e}")))?;
        file.workload()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read workload {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn workload(&self) -> Result<Workload, CliError> {
        let values = match &self.counting {
            None => self.pairs.clone(),
            Some(_) if !self.pairs.is_empty() => {
                return Err(CliError::Usage("pairs: give either pairs or counting, not both".into()))
            }
            Some(c) if c.queries.is_empty() => return Err(CliError::Usage("counting.queries: no queries".into())),
            Some(c) => c.pairs()?,
        };
        let pairs = values.iter().map(|&[d, dp]| QueryPair::new(d, dp)).collect();
        let mut w = Workload::new(pairs, self.threshold, self.k, self.epsilon);
        w.sigma = self.sigma;
        check_workload(&w).map_err(data_error)?;
        Ok(w)
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise.into()
    }
}

/// Turns a core validation error into a message that names the offending
/// field and, for queries, its index in `pairs`.
pub fn data_error(e: Error) -> CliError {
    let msg = match &e {
        Error::SensitivityViolation { index, value_d, value_dprime } => {
            format!("pairs[{index}]: |{value_d} - {value_dprime}| > 1 violates sensitivity 1")
        }
        Error::EmptyWorkload => "pairs: workload has no queries".into(),
        Error::NonPositiveBudget(v) => format!("epsilon: must be positive and finite, got {v}"),
        Error::InvalidParameter { name, reason } => format!("{name}: {reason}"),
        other => other.to_string(),
    };
    CliError::Usage(msg)
}

pub fn load_tape(path: &Path) -> Result<NoiseTape, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read tape {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("tape: {e}")))
}
