//! Discrete distributions, phi-divergences and the 1-Wasserstein distance.

mod w1;

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DroError, Result};
use crate::sample::{validate_discrete, DistributionSpec, SampleSet};

pub use w1::{w1, W1_MAX_POINTS};

/// Finitely supported probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    #[serde(with = "crate::serde_matrix")]
    pub(crate) points: Array2<f64>,
    pub(crate) probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(points: Array2<f64>, probs: Vec<f64>) -> Result<Self> {
        validate_discrete(&points, &probs)?;
        Ok(Self { points, probs })
    }

    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let m = points.nrows().max(1);
        Self::new(points, vec![1.0 / m as f64; m])
    }

    /// Empirical distribution of a sample; repeated rows are merged.
    pub fn empirical(s: &SampleSet) -> Self {
        let n = s.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            s.row(a).iter().zip(s.row(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut keep: Vec<usize> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for &i in &order {
            match keep.last() {
                Some(&j) if s.row(j) == s.row(i) => *counts.last_mut().expect("nonempty") += 1,
                _ => {
                    keep.push(i);
                    counts.push(1);
                }
            }
        }
        if keep.len() == n {
            return Self { points: s.data().clone(), probs: vec![1.0 / n as f64; n] };
        }
        // restore first-occurrence order so the result does not depend on the sort
        let mut pairs: Vec<(usize, usize)> = keep.into_iter().zip(counts).collect();
        pairs.sort_unstable();
        let d = s.dim();
        let mut points = Array2::zeros((pairs.len(), d));
        for (r, (i, _)) in pairs.iter().enumerate() {
            points.row_mut(r).assign(&s.row(*i));
        }
        let probs = pairs.iter().map(|(_, c)| *c as f64 / n as f64).collect();
        Self { points, probs }
    }

    pub fn from_spec(spec: &DistributionSpec) -> Result<Self> {
        match spec {
            DistributionSpec::DiscreteSupport { points, probs } => Self::new(points.clone(), probs.clone()),
            _ => Err(DroError::Capability("only discrete specs convert to a discrete distribution".into())),
        }
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Same support, new weights.
    pub fn reweighted(&self, probs: Vec<f64>) -> Result<Self> {
        check_dim(self.len(), probs.len())?;
        Self::new(self.points.clone(), probs)
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .rows()
            .into_iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(z, p)| p * f(z.as_slice().expect("row-major")))
            .sum()
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user-defined divergence generator with its convex conjugate.
#[derive(Clone)]
pub struct UserConvex {
    pub phi: Arc<ScalarFn>,
    pub conjugate: Arc<ScalarFn>,
    /// Right end of the conjugate's effective domain (`+inf` when unbounded).
    pub conjugate_sup: f64,
}

/// Generator `phi` of `D_phi(Q || P) = sum_i p_i phi(q_i / p_i)`.
#[derive(Clone)]
pub enum PhiFamily {
    /// `phi(t) = (t - 1)^2 / t`, the likelihood-ratio-weighted chi-square.
    Chi2Neyman,
    /// `phi(t) = t ln t - t + 1`.
    Kl,
    UserConvex(UserConvex),
}

impl fmt::Debug for PhiFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Chi2Neyman => "Chi2Neyman",
            Self::Kl => "Kl",
            Self::UserConvex(_) => "UserConvex",
        })
    }
}

impl PhiFamily {
    pub fn user(
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        conjugate: impl Fn(f64) -> f64 + Send + Sync + 'static,
        conjugate_sup: f64,
    ) -> Self {
        Self::UserConvex(UserConvex { phi: Arc::new(phi), conjugate: Arc::new(conjugate), conjugate_sup })
    }

    /// `phi(t)` for `t >= 0`; `+inf` outside the domain.
    pub fn phi(&self, t: f64) -> f64 {
        if t < 0.0 {
            return f64::INFINITY;
        }
        match self {
            Self::Chi2Neyman => {
                if t == 0.0 {
                    f64::INFINITY
                } else {
                    (t - 1.0) * (t - 1.0) / t
                }
            }
            Self::Kl => {
                if t == 0.0 {
                    1.0
                } else {
                    t * t.ln() - t + 1.0
                }
            }
            Self::UserConvex(u) => (u.phi)(t),
        }
    }

    /// `phi*(s) = sup_{t >= 0} s t - phi(t)`.
    pub fn conjugate(&self, s: f64) -> f64 {
        match self {
            Self::Chi2Neyman => {
                if s <= 1.0 {
                    2.0 - 2.0 * (1.0 - s).sqrt()
                } else {
                    f64::INFINITY
                }
            }
            Self::Kl => s.exp_m1(),
            Self::UserConvex(u) => {
                if s > u.conjugate_sup {
                    f64::INFINITY
                } else {
                    (u.conjugate)(s)
                }
            }
        }
    }

    /// Supremum of the conjugate's domain.
    pub fn conjugate_sup(&self) -> f64 {
        match self {
            Self::Chi2Neyman => 1.0,
            Self::Kl => f64::INFINITY,
            Self::UserConvex(u) => u.conjugate_sup,
        }
    }

    /// Maximizing ratio `t(s) = (phi*)'(s)` used for primal recovery.
    pub fn conjugate_slope(&self, s: f64) -> f64 {
        match self {
            Self::Chi2Neyman => {
                if s < 1.0 {
                    1.0 / (1.0 - s).sqrt()
                } else {
                    f64::INFINITY
                }
            }
            Self::Kl => s.exp(),
            Self::UserConvex(_) => {
                let h = 1e-6 * s.abs().max(1.0);
                let hi = if s + h <= self.conjugate_sup() { s + h } else { s };
                let lo = s - h;
                ((self.conjugate(hi) - self.conjugate(lo)) / (hi - lo)).max(0.0)
            }
        }
    }

    /// Numerical check of Fenchel-Young on a grid of `(s, t)`; returns the worst violation.
    pub fn conjugate_violation(&self, s_grid: &[f64], t_grid: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for &s in s_grid {
            let cs = self.conjugate(s);
            if !cs.is_finite() {
                continue;
            }
            for &t in t_grid {
                let f = self.phi(t);
                if f.is_finite() {
                    worst = worst.max(s * t - f - cs);
                }
            }
        }
        worst
    }
}

/// `sum_i p_i phi(q_i / p_i)` over a shared support.
pub fn phi_divergence(family: &PhiFamily, q: &DiscreteDist, p: &DiscreteDist) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    if q.points != p.points {
        return Err(DroError::Validation("phi-divergence needs identical support points".into()));
    }
    phi_divergence_weights(family, &q.probs, &p.probs)
}

pub(crate) fn phi_divergence_weights(family: &PhiFamily, q: &[f64], p: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if pi == 0.0 {
            if qi > 0.0 {
                return Err(DroError::Domain(format!("q is not absolutely continuous w.r.t. p at atom {i}")));
            }
            continue;
        }
        total += pi * family.phi(qi / pi);
    }
    Ok(total)
}
