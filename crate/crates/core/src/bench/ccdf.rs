//! Empirical complementary CDF of per-model improvements.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    /// Per-model improvement of A over B, zero where either side diverged.
    pub deltas: Vec<f64>,
    /// `(delta, fraction of deltas >= delta)`, sorted by delta.
    pub points: Vec<(f64, f64)>,
}

impl ComparisonResult {
    pub fn fraction_at(&self, delta: f64) -> f64 {
        ccdf_at(&self.deltas, delta)
    }

    /// CSV with columns delta, fraction.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["delta", "fraction"])?;
        for (d, f) in &self.points {
            w.write_record([super::format_float(*d), super::format_float(*f)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of `deltas` that are `delta` or higher.
pub fn ccdf_at(deltas: &[f64], delta: f64) -> f64 {
    deltas.iter().filter(|&&d| d >= delta).count() as f64 / deltas.len() as f64
}

/// `A_i - B_i` per model, forced to zero for diverged pairs or non-finite
/// bounds, evaluated at every distinct delta and at each point of `grid`.
pub fn pairwise_ccdf(a: &[f64], b: &[f64], diverged: &[bool], grid: &[f64]) -> Result<ComparisonResult> {
    if a.len() != b.len() || a.len() != diverged.len() {
        return Err(Error::Config(format!(
            "comparison needs equal lengths, got {}, {} and {} divergence flags",
            a.len(),
            b.len(),
            diverged.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Config("comparison needs at least one model".into()));
    }
    let deltas: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(diverged)
        .map(|((x, y), &div)| {
            let d = x - y;
            if div || !d.is_finite() {
                0.0
            } else {
                d
            }
        })
        .collect();
    let mut at: Vec<f64> = deltas.iter().chain(grid.iter().filter(|g| !g.is_nan())).copied().collect();
    at.sort_by(f64::total_cmp);
    at.dedup();
    let points = at.into_iter().map(|d| (d, ccdf_at(&deltas, d))).collect();
    Ok(ComparisonResult { deltas, points })
}
