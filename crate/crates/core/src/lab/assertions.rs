use serde::{Deserialize, Serialize};

use super::{SummaryRow, TrialRecord};
use crate::solve::Method;

/// Checks an experiment config can demand; the CLI exits nonzero if any fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// Mean ERM excess at `n` lies in `[lo, hi]`.
    ErmMeanWithin { n: usize, lo: f64, hi: f64 },
    /// Median excess of `method` at `n` is at most `value`, at radius `eta`
    /// or at the oracle-tuned radius when `eta` is absent.
    MedianAtMost { method: Method, n: usize, eta: Option<f64>, value: f64 },
    /// Median at the oracle-tuned radius is at most `ratio` times the ERM median.
    BelowErm { method: Method, n: usize, ratio: f64 },
    /// Medians strictly decrease over the radii in `[from, to]`.
    StrictlyDecreasing { method: Method, n: usize, from: f64, to: f64 },
    /// Every median over the radii in `[from, to]` is at most `value`.
    PlateauAtMost { method: Method, n: usize, from: f64, to: f64, value: f64 },
    /// Fraction of converged solves per cell is at least `rate`.
    MinConvergenceRate { method: Method, rate: f64 },
    /// No record has excess risk below `-1e-12`, and none failed.
    RecordsValid {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

fn rows<'a>(summary: &'a [SummaryRow], method: Method, n: usize) -> Vec<&'a SummaryRow> {
    summary.iter().filter(|r| r.method == method && r.n == n).collect()
}

fn best(summary: &[SummaryRow], method: Method, n: usize) -> Option<&SummaryRow> {
    summary.iter().find(|r| r.method == method && r.n == n && r.best_eta)
}

fn in_range(eta: f64, from: f64, to: f64) -> bool {
    eta >= from - 1e-12 && eta <= to + 1e-12
}

pub fn check_assertions(list: &[Assertion], records: &[TrialRecord], summary: &[SummaryRow]) -> Vec<AssertionOutcome> {
    list.iter()
        .map(|a| {
            let (passed, detail) = check(a, records, summary);
            AssertionOutcome { assertion: a.clone(), passed, detail }
        })
        .collect()
}

fn check(a: &Assertion, records: &[TrialRecord], summary: &[SummaryRow]) -> (bool, String) {
    match a {
        Assertion::ErmMeanWithin { n, lo, hi } => match rows(summary, Method::Erm, *n).first() {
            Some(r) => (r.mean >= *lo && r.mean <= *hi, format!("mean ERM excess {:e} vs [{lo}, {hi}]", r.mean)),
            None => (false, format!("no ERM rows at n = {n}")),
        },
        Assertion::MedianAtMost { method, n, eta, value } => {
            let row = match eta {
                Some(e) => rows(summary, *method, *n).into_iter().find(|r| (r.eta - e).abs() < 1e-12),
                None => best(summary, *method, *n),
            };
            match row {
                Some(r) => (r.median <= *value, format!("median {:e} at eta {} vs {value:e}", r.median, r.eta)),
                None => (false, format!("no {method} rows at n = {n}")),
            }
        }
        Assertion::BelowErm { method, n, ratio } => {
            match (best(summary, *method, *n), rows(summary, Method::Erm, *n).first()) {
                (Some(d), Some(e)) => (
                    d.median <= ratio * e.median,
                    format!("median {:e} at eta {} vs {ratio:e} x ERM median {:e}", d.median, d.eta, e.median),
                ),
                _ => (false, format!("missing {method} or ERM rows at n = {n}")),
            }
        }
        Assertion::StrictlyDecreasing { method, n, from, to } => {
            let mut sel: Vec<&SummaryRow> = rows(summary, *method, *n).into_iter().filter(|r| in_range(r.eta, *from, *to)).collect();
            sel.sort_by(|a, b| a.eta.total_cmp(&b.eta));
            let medians: Vec<f64> = sel.iter().map(|r| r.median).collect();
            let ok = sel.len() >= 2 && medians.windows(2).all(|w| w[1] < w[0]);
            let shown: Vec<String> = medians.iter().map(|m| format!("{m:.3e}")).collect();
            (ok, format!("medians [{}]", shown.join(", ")))
        }
        Assertion::PlateauAtMost { method, n, from, to, value } => {
            let sel: Vec<&SummaryRow> = rows(summary, *method, *n).into_iter().filter(|r| in_range(r.eta, *from, *to)).collect();
            let worst = sel.iter().map(|r| r.median).fold(f64::NEG_INFINITY, f64::max);
            (!sel.is_empty() && worst <= *value, format!("largest median {worst:e} vs {value:e}"))
        }
        Assertion::MinConvergenceRate { method, rate } => {
            let worst = summary.iter().filter(|r| r.method == *method).map(|r| r.convergence_rate).fold(f64::INFINITY, f64::min);
            (worst.is_finite() && worst >= *rate, format!("lowest convergence rate {worst} vs {rate}"))
        }
        Assertion::RecordsValid {} => {
            let bad = records.iter().filter(|r| r.error.is_some() || !(r.excess_risk >= -1e-12)).count();
            (bad == 0, format!("{bad} invalid record(s)"))
        }
    }
}
