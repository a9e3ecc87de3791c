//! Bound-labelled numerical results and their CSV/JSON forms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundType {
    Exact,
    Upper,
    Lower,
    Bracket,
}

impl fmt::Display for BoundType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundType::Exact => "exact",
            BoundType::Upper => "upper",
            BoundType::Lower => "lower",
            BoundType::Bracket => "bracket",
        })
    }
}

/// A coefficient estimate with honest bound semantics: `estimate_low` and
/// `estimate_high` coincide only for closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub quantity: String,
    pub estimate_low: f64,
    pub estimate_high: f64,
    pub bound_type: BoundType,
    pub witness: String,
    pub parameters: BTreeMap<String, String>,
}

impl CoefficientReport {
    pub fn exact(quantity: impl Into<String>, value: f64, witness: impl Into<String>) -> Self {
        Self {
            quantity: quantity.into(),
            estimate_low: value,
            estimate_high: value,
            bound_type: BoundType::Exact,
            witness: witness.into(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.estimate_low - tol <= value && value <= self.estimate_high + tol
    }

    /// Relative width of the bracket.
    pub fn relative_gap(&self) -> f64 {
        let scale = self.estimate_high.abs().max(self.estimate_low.abs()).max(f64::MIN_POSITIVE);
        (self.estimate_high - self.estimate_low) / scale
    }

    pub const CSV_HEADER: [&'static str; 6] =
        ["quantity", "estimate_low", "estimate_high", "bound_type", "witness", "parameters"];

    pub fn csv_row(&self) -> [String; 6] {
        let params: Vec<String> =
            self.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        [
            self.quantity.clone(),
            self.estimate_low.to_string(),
            self.estimate_high.to_string(),
            self.bound_type.to_string(),
            self.witness.clone(),
            params.join(";"),
        ]
    }

    pub fn write_csv<W: std::io::Write>(reports: &[CoefficientReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record(r.csv_row())?;
        }
        w.flush()?;
        Ok(())
    }
}
