//! Empirical CDFs, Kolmogorov–Smirnov distance, and loss/runtime tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Step CDF: `probabilities[i] = (i + 1) / n` at `values[i]` (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct CdfSeries {
    pub label: String,
    pub values: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn empirical_cdf(values: &[f64], label: impl Into<String>) -> Result<CdfSeries> {
    if values.is_empty() {
        return Err(Error::config("empirical CDF of an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in CDF sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(CdfSeries {
        label: label.into(),
        probabilities: (1..=sorted.len()).map(|i| i as f64 / n).collect(),
        values: sorted,
    })
}

impl CdfSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `P(X ≤ x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.values.partition_point(|&v| v <= x);
        count as f64 / self.values.len() as f64
    }
}

/// Sup-norm distance between two step CDFs; both are right-continuous, so the
/// supremum is attained at one of the breakpoints.
pub fn ks_distance(a: &CdfSeries, b: &CdfSeries) -> f64 {
    a.values.iter().chain(&b.values).map(|&x| (a.eval(x) - b.eval(x)).abs()).fold(0.0, f64::max)
}

/// Writes `value,probability,label` rows for each series in turn.
pub fn write_cdf_csv<W: Write>(out: W, series: &[CdfSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "probability", "label"])?;
    for s in series {
        for (v, p) in s.values.iter().zip(&s.probabilities) {
            w.write_record([v.to_string(), p.to_string(), s.label.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureName {
    Dense,
    Conv,
}

impl ArchitectureName {
    pub fn label(self) -> &'static str {
        match self {
            ArchitectureName::Dense => "Dense_Net",
            ArchitectureName::Conv => "Conv_Net",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub architecture: ArchitectureName,
    pub case: String,
    /// Final training RMSE.
    pub loss: f64,
    /// Final validation RMSE; NaN when there was no validation split.
    pub val_loss: f64,
    pub runtime_s: f64,
}

/// Records sorted by (architecture, case).
pub fn results_table(records: &[RunRecord]) -> Result<Vec<RunRecord>> {
    if records.is_empty() {
        return Err(Error::config("results table needs at least one record"));
    }
    let mut rows = records.to_vec();
    rows.sort_by(|a, b| (a.architecture, &a.case).cmp(&(b.architecture, &b.case)));
    Ok(rows)
}

/// Writes `architecture,case,loss,val_loss,runtime_s`.
pub fn write_results_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let rows = results_table(records)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["architecture", "case", "loss", "val_loss", "runtime_s"])?;
    for r in rows {
        w.write_record([
            r.architecture.label().to_string(),
            r.case.clone(),
            format!("{:.4e}", r.loss),
            format!("{:.4e}", r.val_loss),
            format!("{:.3}", r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}
