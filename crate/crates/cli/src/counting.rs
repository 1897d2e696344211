use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Comparison applied to a row field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Counts the rows whose `column` satisfies `op value`. Rows without the
/// column never match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub column: String,
    pub op: Op,
    pub value: Value,
}

/// Counting queries over a row set. `rows` is `D`; `D'` drops row `remove`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingSource {
    pub rows: Vec<Map<String, Value>>,
    pub remove: usize,
    pub queries: Vec<Predicate>,
}

impl Predicate {
    fn matches(&self, index: usize, row: &Map<String, Value>) -> Result<bool, CliError> {
        let Some(field) = row.get(&self.column) else {
            return Ok(false);
        };
        match self.op {
            Op::Eq => return Ok(field == &self.value),
            Op::Ne => return Ok(field != &self.value),
            _ => {}
        }
        let (Some(a), Some(b)) = (field.as_f64(), self.value.as_f64()) else {
            return Err(CliError::Usage(format!(
                "counting.queries[{index}]: {:?} needs numbers, got {field} and {}",
                self.op, self.value
            )));
        };
        let ord = a.partial_cmp(&b);
        Ok(match self.op {
            Op::Lt => ord == Some(Ordering::Less),
            Op::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
            Op::Gt => ord == Some(Ordering::Greater),
            _ => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
        })
    }
}

impl CountingSource {
    /// `[q(D), q(D')]` for every query.
    pub fn pairs(&self) -> Result<Vec<[f64; 2]>, CliError> {
        if self.remove >= self.rows.len() {
            return Err(CliError::Usage(format!(
                "counting.remove: row {} out of range ({} rows)",
                self.remove,
                self.rows.len()
            )));
        }
        let removed = &self.rows[self.remove];
        self.queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut count = 0u64;
                for row in &self.rows {
                    count += u64::from(q.matches(i, row)?);
                }
                let drop = u64::from(q.matches(i, removed)?);
                Ok([count as f64, (count - drop) as f64])
            })
            .collect()
    }
}
