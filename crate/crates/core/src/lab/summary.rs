use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrialRecord;
use crate::error::{DroError, Result};
use crate::solve::Method;

/// Statistics of one `(method, n, eta, B)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub eta: f64,
    #[serde(rename = "B")]
    pub b: f64,
    /// Records with a finite excess risk.
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub convergence_rate: f64,
    /// Records whose solve returned an error.
    pub failed: usize,
    /// Smallest mean excess over the radius grid at this `(method, n, B)`,
    /// chosen with knowledge of the true distribution.
    pub best_eta: bool,
}

/// Linear-interpolation quantile of sorted data (`h = (N - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    method: Method,
    n: usize,
    eta: u64,
    b: u64,
}

/// Aggregates records per `(method, n, eta, B)`, ordered by those keys.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(DroError::Validation("no records to summarize".into()));
    }
    let mut groups: BTreeMap<Key, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        // radii and B are nonnegative, so their bit patterns sort numerically
        let key = Key { method: r.method, n: r.n, eta: r.eta.to_bits(), b: r.b.to_bits() };
        groups.entry(key).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(key, recs)| {
            let mut values: Vec<f64> = recs.iter().map(|r| r.excess_risk).filter(|x| x.is_finite()).collect();
            values.sort_by(f64::total_cmp);
            let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
            SummaryRow {
                method: key.method,
                n: key.n,
                eta: f64::from_bits(key.eta),
                b: f64::from_bits(key.b),
                trials: values.len(),
                mean,
                median: quantile(&values, 0.5),
                q1: quantile(&values, 0.25),
                q3: quantile(&values, 0.75),
                convergence_rate: recs.iter().filter(|r| r.converged).count() as f64 / recs.len() as f64,
                failed: recs.iter().filter(|r| r.error.is_some()).count(),
                best_eta: false,
            }
        })
        .collect();
    let mut best: BTreeMap<(Method, usize, u64), usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if !row.mean.is_finite() {
            continue;
        }
        let slot = best.entry((row.method, row.n, row.b.to_bits())).or_insert(i);
        let cur = &rows[*slot];
        if !cur.mean.is_finite() || row.mean < cur.mean || (row.mean == cur.mean && row.eta < cur.eta) {
            *slot = i;
        }
    }
    for &i in best.values() {
        rows[i].best_eta = true;
    }
    Ok(rows)
}
