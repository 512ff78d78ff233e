//! 1-Wasserstein worst case through the transport dual
//!
//! ```text
//! inf_{lambda >= 0}  lambda eta + sum_i p_i sup_z [ l(z) - lambda ||z - z_i|| ]
//! ```
//!
//! On an unbounded space with a Lipschitz loss the infimum sits at
//! `lambda = Lip`; on a compact box of dimension at most two the inner
//! supremum is taken over a uniform grid.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{golden, merge_atoms, Center, Certificate, SolverConfig, WorstCaseReport};
use crate::error::{DroError, Result};
use crate::loss::{LossKind, LossModel};
use crate::sample::DistributionSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W1Mode {
    /// Grid mode when a box of dimension <= 2 is given, Lipschitz mode otherwise.
    #[default]
    Auto,
    Lipschitz,
    Grid,
}

/// Largest `atoms x candidates` table the grid mode will build.
const MAX_GRID_WORK: usize = 20_000_000;

pub(crate) struct W1Setup {
    atoms: Array2<f64>,
    weights: Vec<f64>,
    grid: Option<(Array2<f64>, f64)>,
}

impl W1Setup {
    pub(crate) fn new(center: &Center, loss: &LossModel, bounds: Option<&DistributionSpec>, cfg: &SolverConfig) -> Result<Self> {
        let (atoms, weights) = center.atoms();
        let d = atoms.ncols();
        let use_grid = match cfg.w1_mode {
            W1Mode::Grid => true,
            W1Mode::Lipschitz => false,
            W1Mode::Auto => bounds.is_some() && d <= 2,
        };
        let grid = if use_grid {
            if d > 2 {
                return Err(DroError::Capability(format!("grid mode supports d <= 2, got d = {d}")));
            }
            let bounds = bounds.ok_or_else(|| DroError::Validation("grid mode needs a bounding box".into()))?;
            let (lo, hi) = bounds.bounding_box();
            Some((build_grid(&lo, &hi, cfg.w1_grid_step, &atoms.to_owned(), atoms.nrows())?, cfg.w1_grid_step))
        } else {
            if matches!(loss.kind(), LossKind::Custom(_)) && loss.certificates().lipschitz_z.is_none() {
                return Err(DroError::Capability(
                    "Lipschitz mode needs a Lipschitz-in-z certificate for custom losses".into(),
                ));
            }
            None
        };
        Ok(Self { atoms: atoms.to_owned(), weights, grid })
    }

    pub(crate) fn worst_case(&self, loss: &LossModel, theta: &[f64], eta: f64) -> Result<WorstCaseReport> {
        match &self.grid {
            None => self.lipschitz(loss, theta, eta),
            Some((grid, step)) => self.on_grid(loss, theta, eta, grid, *step),
        }
    }

    fn center_value(&self, loss: &LossModel, theta: &[f64]) -> f64 {
        self.atoms
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(z, p)| p * loss.eval(theta, z.as_slice().expect("row-major")))
            .sum()
    }

    fn lipschitz(&self, loss: &LossModel, theta: &[f64], eta: f64) -> Result<WorstCaseReport> {
        let lip = loss
            .lipschitz_z(theta)
            .ok_or_else(|| DroError::Capability("loss has no Lipschitz-in-z certificate".into()))?;
        let center_value = self.center_value(loss, theta);
        let value = center_value + eta * lip;
        // an affine loss gains exactly eta * Lip when every atom moves eta along its gradient
        let mut points = self.atoms.clone();
        let exact = match loss.kind() {
            LossKind::QuadLinear { v } => {
                if lip > 0.0 {
                    for mut row in points.rows_mut() {
                        for k in 0..row.len() {
                            row[k] += eta * (theta[k] - v[k]) / lip;
                        }
                    }
                }
                true
            }
            LossKind::Custom(_) => false,
        };
        Ok(WorstCaseReport {
            value,
            center_value,
            certificate: Certificate::W1Dual {
                lambda: lip,
                worst_dist: merge_atoms(&points, &self.weights)?,
                dual_value: value,
                grid_error_bound: None,
                mode: W1Mode::Lipschitz,
            },
            iterations: 0,
            tolerance_met: exact,
        })
    }

    fn on_grid(&self, loss: &LossModel, theta: &[f64], eta: f64, grid: &Array2<f64>, step: f64) -> Result<WorstCaseReport> {
        let n = self.atoms.nrows();
        let m = grid.nrows();
        let lg: Vec<f64> = grid.rows().into_iter().map(|z| loss.eval(theta, z.as_slice().expect("row-major"))).collect();
        // the atoms are the first n grid candidates
        let la = &lg[..n];
        let center_value: f64 = la.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let mut dist = vec![0.0; n * m];
        for i in 0..n {
            for g in 0..m {
                let d2: f64 = self.atoms.row(i).iter().zip(grid.row(g).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                dist[i * m + g] = d2.sqrt();
            }
        }
        // beyond this slope no atom moves
        let mut lambda_max = 0.0f64;
        for i in 0..n {
            for g in 0..m {
                let d = dist[i * m + g];
                if d > 0.0 {
                    lambda_max = lambda_max.max((lg[g] - la[i]) / d);
                }
            }
        }
        let assign = |lambda: f64| -> (Vec<usize>, f64, f64) {
            let mut choice = Vec::with_capacity(n);
            let (mut cost, mut value) = (0.0, 0.0);
            for i in 0..n {
                let row = &dist[i * m..(i + 1) * m];
                // staying put scores l(z_i); ties keep the earliest candidate
                let mut best = (i, la[i]);
                for g in 0..m {
                    let s = lg[g] - lambda * row[g];
                    if s > best.1 {
                        best = (g, s);
                    }
                }
                choice.push(best.0);
                cost += self.weights[i] * row[best.0];
                value += self.weights[i] * lg[best.0];
            }
            (choice, cost, value)
        };
        let dual = |lambda: f64| -> f64 {
            let (_, cost, value) = assign(lambda);
            lambda * eta + value - lambda * cost
        };
        let tol = 1e-12 * lambda_max.max(1.0);
        let (lambda, dual_value) = if lambda_max > 0.0 { golden(dual, 0.0, lambda_max, tol) } else { (0.0, dual(0.0)) };
        let delta = 16.0 * tol;
        let stay: Vec<usize> = (0..n).collect();
        let mut options = vec![(stay, 0.0, center_value)];
        for lam in [lambda, (lambda - delta).max(0.0), lambda + delta] {
            options.push(assign(lam));
        }
        // best feasible mixture of two assignments
        let mut best = (center_value, 0usize, 0usize, 0.0f64);
        for (a, (_, ca, va)) in options.iter().enumerate() {
            if *ca <= eta {
                if *va > best.0 {
                    best = (*va, a, a, 0.0);
                }
                for (b, (_, cb, vb)) in options.iter().enumerate() {
                    if *cb > eta {
                        let beta = (eta - ca) / (cb - ca);
                        let v = (1.0 - beta) * va + beta * vb;
                        if v > best.0 {
                            best = (v, a, b, beta);
                        }
                    }
                }
            }
        }
        let (value, a, b, beta) = best;
        let mut points = Array2::zeros((2 * n, self.atoms.ncols()));
        let mut weights = vec![0.0; 2 * n];
        for i in 0..n {
            points.row_mut(i).assign(&grid.row(options[a].0[i]));
            points.row_mut(n + i).assign(&grid.row(options[b].0[i]));
            weights[i] = (1.0 - beta) * self.weights[i];
            weights[n + i] = beta * self.weights[i];
        }
        let lip = loss.lipschitz_z(theta);
        Ok(WorstCaseReport {
            value,
            center_value,
            certificate: Certificate::W1Dual {
                lambda,
                worst_dist: merge_atoms(&points, &weights)?,
                dual_value: dual_value.max(value),
                grid_error_bound: lip.map(|l| l * step),
                mode: W1Mode::Grid,
            },
            iterations: 0,
            tolerance_met: dual_value - value <= 1e-7 * center_value.abs().max(dual_value.abs()).max(1.0),
        })
    }
}

/// Uniform grid over the box (endpoints included), preceded by the atoms.
fn build_grid(lo: &[f64], hi: &[f64], step: f64, atoms: &Array2<f64>, n: usize) -> Result<Array2<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| {
            let k = ((b - a) / step).floor() as usize;
            let mut axis: Vec<f64> = (0..=k).map(|i| a + i as f64 * step).collect();
            if *axis.last().expect("nonempty") < b {
                axis.push(b);
            }
            axis
        })
        .collect();
    let size: usize = axes.iter().map(Vec::len).product();
    if size.saturating_mul(n) > MAX_GRID_WORK {
        return Err(DroError::Capability(format!("grid of {size} points is too fine for {n} atoms")));
    }
    let d = lo.len();
    let mut out = Array2::zeros((n + size, d));
    out.slice_mut(ndarray::s![..n, ..]).assign(atoms);
    for idx in 0..size {
        let mut rem = idx;
        for k in 0..d {
            let len = axes[k].len();
            out[[n + idx, k]] = axes[k][rem % len];
            rem /= len;
        }
    }
    Ok(out)
}
