//! Outer minimization over `theta`: empirical risk minimization and DRO.
//!
//! The DRO objective `F(theta) = sup_Q E_Q l(theta, .)` is minimized by a
//! proximal bundle method. Each oracle call returns a feasible worst case
//! `Q`, and `theta -> E_Q l(theta, .)` is a convex minorant of `F`, so its
//! linearization (value plus the Danskin direction `E_Q grad l`) is a valid
//! cut even when the inner problem is solved only approximately. Cuts
//! collected at a smaller radius stay valid at a larger one, which lets a
//! radius sweep reuse its bundle.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DroError, Result};
use crate::loss::{LossKind, LossModel};
use crate::rng::RngStream;
use crate::robustify::{AmbiguityFamily, AmbiguitySet, Oracle, SolverConfig, WorstCaseReport};
use crate::sample::{DistributionSpec, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Erm,
    MmdDro,
    W1Dro,
    Chi2Dro,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::MmdDro => "mmd-dro",
            Self::W1Dro => "w1-dro",
            Self::Chi2Dro => "chi2-dro",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Self::Erm),
            "mmd-dro" => Ok(Self::MmdDro),
            "w1-dro" => Ok(Self::W1Dro),
            "chi2-dro" => Ok(Self::Chi2Dro),
            other => Err(DroError::Validation(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub method: Method,
    /// Oracle report at the returned `theta` (DRO only).
    pub inner_reports: Vec<WorstCaseReport>,
    pub iterations: usize,
    pub oracle_calls: usize,
    /// Inner solver iterations summed over all oracle calls.
    pub inner_iterations: usize,
    pub converged: bool,
}

/// Result of smooth minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDescent {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with Armijo backtracking on `sum_i w_i l(theta, z_i)`.
pub fn weighted_gradient_descent(
    loss: &LossModel,
    points: &Array2<f64>,
    weights: &[f64],
    x0: &[f64],
    grad_tol: f64,
    max_iters: usize,
) -> GradientDescent {
    let rows: Vec<&[f64]> = points.rows().into_iter().map(|r| r.to_slice().expect("row-major")).collect();
    let value = |x: &[f64]| -> f64 { rows.iter().zip(weights).map(|(z, w)| w * loss.eval(x, z)).sum() };
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (z, w) in rows.iter().zip(weights) {
            if *w != 0.0 {
                loss.accumulate_grad(x, z, *w, &mut g);
            }
        }
        g
    };
    let mut x = x0.to_vec();
    let mut fx = value(&x);
    let mut step = 1.0;
    for it in 0..max_iters {
        let g = grad(&x);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() <= grad_tol {
            return GradientDescent { theta: x, value: fx, iterations: it, converged: true };
        }
        step *= 2.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let ft = value(&trial);
            if ft <= fx - 0.5 * step * gnorm2 {
                x = trial;
                fx = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return GradientDescent { theta: x, value: fx, iterations: it, converged: false };
            }
        }
    }
    GradientDescent { theta: x, value: fx, iterations: max_iters, converged: false }
}

/// Minimizer of the empirical risk.
pub fn erm_solve(loss: &LossModel, data: &SampleSet, cfg: &SolverConfig) -> Result<SolveReport> {
    let n = data.n();
    let weights = vec![1.0 / n as f64; n];
    let objective = |theta: &[f64]| -> f64 {
        data.data().rows().into_iter().map(|z| loss.eval(theta, z.as_slice().expect("row-major"))).sum::<f64>() / n as f64
    };
    match loss.kind() {
        LossKind::QuadLinear { v } => {
            check_dim(v.len(), data.dim())?;
            let zbar = data.mean();
            let theta: Vec<f64> = v.iter().zip(zbar.iter()).map(|(a, b)| a - b).collect();
            let value = objective(&theta);
            Ok(SolveReport {
                theta,
                objective: value,
                method: Method::Erm,
                inner_reports: vec![],
                iterations: 0,
                oracle_calls: 0,
                inner_iterations: 0,
                converged: true,
            })
        }
        LossKind::Custom(_) => {
            let x0 = vec![0.0; loss.theta_dim()];
            let gd = weighted_gradient_descent(loss, data.data(), &weights, &x0, 1e-8, cfg.max_iters);
            Ok(SolveReport {
                theta: gd.theta,
                objective: gd.value,
                method: Method::Erm,
                inner_reports: vec![],
                iterations: gd.iterations,
                oracle_calls: 0,
                inner_iterations: 0,
                converged: gd.converged,
            })
        }
    }
}

fn method_for(set: &AmbiguitySet) -> Method {
    match set.family {
        AmbiguityFamily::Mmd { .. } => Method::MmdDro,
        AmbiguityFamily::W1 => Method::W1Dro,
        AmbiguityFamily::Phi { .. } => Method::Chi2Dro,
    }
}

/// Minimizes the worst-case risk over `set`, starting from the ERM solution on the center.
pub fn dro_solve(
    loss: &LossModel,
    set: &AmbiguitySet,
    bounds: Option<&DistributionSpec>,
    cfg: &SolverConfig,
    rng: RngStream,
) -> Result<SolveReport> {
    let mut oracle = Oracle::new(set, loss, bounds, cfg, rng)?;
    let start = erm_start(loss, set, cfg)?;
    let mut path = DroPath::new(start);
    path.solve(&mut oracle, cfg)
}

fn erm_start(loss: &LossModel, set: &AmbiguitySet, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let center = set.center.as_discrete();
    match loss.kind() {
        LossKind::QuadLinear { v } => {
            let mut mean = vec![0.0; v.len()];
            for (z, p) in center.points().rows().into_iter().zip(center.probs()) {
                for k in 0..v.len() {
                    mean[k] += p * z[k];
                }
            }
            Ok(v.iter().zip(&mean).map(|(a, b)| a - b).collect())
        }
        LossKind::Custom(_) => {
            let x0 = vec![0.0; loss.theta_dim()];
            Ok(weighted_gradient_descent(loss, center.points(), center.probs(), &x0, 1e-8, cfg.max_iters).theta)
        }
    }
}

#[derive(Debug, Clone)]
struct Cut {
    /// `F(theta) >= offset + slope^T theta`.
    slope: Vec<f64>,
    offset: f64,
}

/// Bundle state that can be carried across increasing radii.
#[derive(Debug, Clone)]
pub struct DroPath {
    center: Vec<f64>,
    cuts: Vec<Cut>,
    last_radius: Option<f64>,
}

const MAX_CUTS: usize = 40;

struct ProxStep {
    y: Vec<f64>,
    /// Cutting-plane model at `y`.
    model: f64,
    alpha: Vec<f64>,
    /// Norm of the aggregate subgradient.
    s_norm: f64,
    /// Aggregate linearization evaluated at the prox center.
    aggregate_at_center: f64,
}

impl DroPath {
    pub fn new(start: Vec<f64>) -> Self {
        Self { center: start, cuts: Vec::new(), last_radius: None }
    }

    /// Starts from the ERM solution of the oracle's center.
    pub fn from_erm(oracle: &Oracle, cfg: &SolverConfig) -> Result<Self> {
        Ok(Self::new(erm_start(oracle.loss(), oracle.set(), cfg)?))
    }

    /// Solves at the oracle's current radius, warm-started from the previous solution.
    pub fn solve(&mut self, oracle: &mut Oracle, cfg: &SolverConfig) -> Result<SolveReport> {
        let radius = oracle.radius();
        if self.last_radius.is_some_and(|r| radius < r) {
            // cuts from a larger ball may overestimate a smaller one
            self.cuts.clear();
        }
        self.last_radius = Some(radius);
        let loss = oracle.loss().clone();
        let method = method_for(oracle.set());
        let mut calls = 0usize;

        let mut center_report = oracle.evaluate(&self.center)?;
        calls += 1;
        let mut inner_iterations = center_report.iterations;
        let mut f_center = center_report.value;
        self.add_cut(&loss, &self.center.clone(), &center_report);
        let scale = f_center.abs().max(center_report.center_value.abs()).max(1.0);
        let stop_tol = 1e-11 * scale;
        let mut mu = 1.0;
        let mut alpha: Vec<f64> = Vec::new();
        let mut history: Vec<f64> = vec![f_center];
        let mut converged = false;
        let mut iterations = 0;
        let mut center_precise = true;

        loop {
            while iterations < cfg.outer_max_iters {
                iterations += 1;
                // cuts are lower bounds, so they can only tighten a loose center value
                f_center = f_center.max(self.model_at(&self.center));
                let step = self.prox_step(mu, &mut alpha);
                let (y, weights) = (step.y, step.alpha);
                let predicted = f_center - step.model;
                // F(x) >= F(center) - eps_agg + s^T (x - center) for every x
                let eps_agg = (f_center - step.aggregate_at_center).max(0.0);
                let radius = 1.0 + self.center.iter().map(|x| x * x).sum::<f64>().sqrt();
                // predicted = eps_agg + |s|^2 / mu, so a small value bounds both terms
                if predicted <= stop_tol || eps_agg + step.s_norm * radius <= stop_tol {
                    converged = true;
                    break;
                }
                // trial points only need accuracy on the scale of the predicted decrease
                let floor = 0.1 * predicted;
                let report = oracle.evaluate_with(&y, floor)?;
                calls += 1;
                inner_iterations += report.iterations;
                self.add_cut(&loss, &y, &report);
                alpha = weights;
                alpha.push(0.0);
                if report.value <= f_center - 0.1 * predicted {
                    if report.value <= f_center - 0.9 * predicted {
                        mu = (mu * 0.5).max(1e-6);
                    }
                    self.center = y;
                    f_center = report.value;
                    center_report = report;
                    center_precise = floor == 0.0;
                } else if report.value > f_center + predicted {
                    mu = (mu * 2.0).min(1e6);
                }
                self.compress(&mut alpha);
                history.push(f_center);
                if history.len() > 50 {
                    let old = history[history.len() - 51];
                    if old - f_center < 1e-9 * scale {
                        converged = true;
                        break;
                    }
                }
            }
            if center_precise {
                break;
            }
            // a loose center value understates the predicted decrease; resume if it moved
            let loose = f_center;
            center_report = oracle.evaluate(&self.center)?;
            calls += 1;
            inner_iterations += center_report.iterations;
            f_center = center_report.value;
            center_precise = true;
            self.add_cut(&loss, &self.center.clone(), &center_report);
            if f_center - loose <= stop_tol || iterations >= cfg.outer_max_iters {
                break;
            }
            converged = false;
        }
        Ok(SolveReport {
            theta: self.center.clone(),
            objective: f_center,
            method,
            inner_reports: vec![center_report],
            iterations,
            oracle_calls: calls,
            inner_iterations,
            converged,
        })
    }

    fn model_at(&self, theta: &[f64]) -> f64 {
        self.cuts
            .iter()
            .map(|cut| cut.offset + cut.slope.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn add_cut(&mut self, loss: &LossModel, theta: &[f64], report: &WorstCaseReport) {
        let slope = danskin_direction(loss, theta, report.worst_distribution());
        let offset = report.value - slope.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        self.cuts.push(Cut { slope, offset });
    }

    /// Drops inactive cuts beyond the cap, folding them into one aggregate cut.
    fn compress(&mut self, alpha: &mut Vec<f64>) {
        if self.cuts.len() <= MAX_CUTS {
            return;
        }
        let d = self.center.len();
        // keep the newest cuts; the dropped ones survive as their weighted average
        let keep = MAX_CUTS / 2;
        let start = self.cuts.len() - keep;
        let dropped: f64 = alpha[..start].iter().sum();
        let mut agg = Cut { slope: vec![0.0; d], offset: 0.0 };
        if dropped > 0.0 {
            for (c, a) in self.cuts[..start].iter().zip(&alpha[..start]) {
                let w = a / dropped;
                agg.offset += w * c.offset;
                for k in 0..d {
                    agg.slope[k] += w * c.slope[k];
                }
            }
        }
        let mut cuts: Vec<Cut> = self.cuts.drain(start..).collect();
        let mut weights: Vec<f64> = alpha.drain(start..).collect();
        if dropped > 0.0 {
            cuts.insert(0, agg);
            weights.insert(0, dropped);
        }
        self.cuts = cuts;
        *alpha = weights;
    }

    /// `argmin_theta max_k cut_k(theta) + mu/2 ||theta - center||^2` via its simplex dual.
    fn prox_step(&self, mu: f64, alpha: &mut Vec<f64>) -> ProxStep {
        let k = self.cuts.len();
        let d = self.center.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let c: Vec<f64> = self.cuts.iter().map(|cut| cut.offset + dot(&cut.slope, &self.center)).collect();
        let scaled = 1.0 / mu.sqrt();
        let h: Vec<Vec<f64>> = self.cuts.iter().map(|cut| cut.slope.iter().map(|g| g * scaled).collect()).collect();
        let valid = alpha.len() == k
            && alpha.iter().all(|&a| a >= 0.0)
            && (alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !valid {
            *alpha = vec![0.0; k];
            alpha[k - 1] = 1.0;
        }
        simplex_qp(&h, &c, alpha);
        let mut s = vec![0.0; d];
        for (cut, a) in self.cuts.iter().zip(alpha.iter()) {
            for j in 0..d {
                s[j] += a * cut.slope[j];
            }
        }
        let y: Vec<f64> = self.center.iter().zip(&s).map(|(x, g)| x - g / mu).collect();
        let model = self.model_at(&y);
        let aggregate_at_center = dot(alpha, &c);
        ProxStep { y, model, alpha: alpha.clone(), s_norm: dot(&s, &s).sqrt(), aggregate_at_center }
    }
}

/// Minimizes `1/2 ||sum_k a_k h_k||^2 - c^T a` over the probability simplex,
/// starting from the feasible `alpha`.
///
/// Active-set method in the style of Wolfe's minimum-norm-point algorithm:
/// the support is kept affinely independent, and each minor cycle moves toward
/// the minimizer over the support's affine hull (or along a flat direction
/// when that minimizer is not unique) until a weight reaches zero.
fn simplex_qp(h: &[Vec<f64>], c: &[f64], alpha: &mut [f64]) {
    use nalgebra::{DMatrix, DVector};

    let k = h.len();
    let d = h[0].len();
    let combine = |alpha: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; d];
        for (hk, a) in h.iter().zip(alpha) {
            if *a != 0.0 {
                for j in 0..d {
                    w[j] += a * hk[j];
                }
            }
        }
        w
    };
    let gradient = |alpha: &[f64]| -> Vec<f64> {
        let w = combine(alpha);
        h.iter().zip(c).map(|(hk, ck)| hk.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - ck).collect()
    };
    let mut support: Vec<usize> = (0..k).filter(|&i| alpha[i] > 0.0).collect();

    for _ in 0..50 * k + 100 {
        // minor cycles: reach the best point of the current support
        for _ in 0..=d + k + 2 {
            let s0 = support[0];
            let m = support.len() - 1;
            if m == 0 {
                alpha.iter_mut().for_each(|a| *a = 0.0);
                alpha[s0] = 1.0;
                break;
            }
            let dm = DMatrix::from_fn(d, m, |r, j| h[support[j + 1]][r] - h[s0][r]);
            let rhs = DVector::from_fn(m, |j, _| {
                let sj = support[j + 1];
                (c[sj] - c[s0]) - (0..d).map(|r| dm[(r, j)] * h[s0][r]).sum::<f64>()
            });
            let svd = dm.clone().svd(false, true);
            let v_t = svd.v_t.expect("requested");
            let sigma = &svd.singular_values;
            let smax = sigma.iter().fold(0.0f64, |a, &b| a.max(b));
            let (imin, smin) = sigma.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            let full_rank = m <= d && smin > 1e-9 * smax.max(f64::MIN_POSITIVE);
            let mut dir = vec![0.0; k];
            let step_cap;
            if full_rank {
                // solve D^T D beta = rhs through the SVD
                let proj = &v_t * &rhs;
                let scaled = DVector::from_fn(m, |i, _| proj[i] / (sigma[i] * sigma[i]));
                let beta = v_t.transpose() * scaled;
                let target_sum: f64 = beta.iter().sum();
                dir[s0] = (1.0 - target_sum) - alpha[s0];
                for j in 0..m {
                    dir[support[j + 1]] = beta[j] - alpha[support[j + 1]];
                }
                step_cap = 1.0;
            } else {
                // flat direction: the objective is linear along it
                let null: Vec<f64> = if m > d {
                    null_vector(&dm)
                } else {
                    v_t.row(imin).iter().copied().collect()
                };
                let g = gradient(alpha);
                dir[s0] = -null.iter().sum::<f64>();
                for j in 0..m {
                    dir[support[j + 1]] = null[j];
                }
                let slope: f64 = support.iter().map(|&i| dir[i] * g[i]).sum();
                if slope > 0.0 {
                    dir.iter_mut().for_each(|x| *x = -*x);
                }
                step_cap = f64::INFINITY;
            }
            let mut t = step_cap;
            let mut blocking = None;
            for &i in &support {
                if dir[i] < 0.0 {
                    let ti = alpha[i] / -dir[i];
                    if ti < t {
                        t = ti;
                        blocking = Some(i);
                    }
                }
            }
            for &i in &support {
                alpha[i] = (alpha[i] + t * dir[i]).max(0.0);
            }
            match blocking {
                None => break,
                Some(b) => {
                    alpha[b] = 0.0;
                    support.retain(|&i| alpha[i] > 0.0);
                    let total: f64 = support.iter().map(|&i| alpha[i]).sum();
                    for &i in &support {
                        alpha[i] /= total;
                    }
                }
            }
        }
        let g = gradient(alpha);
        let mean: f64 = support.iter().map(|&i| alpha[i] * g[i]).sum();
        let (j, gj) = g.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
        let w = combine(alpha);
        let scale = 1.0f64.max(w.iter().map(|x| x * x).sum::<f64>()).max(support.iter().map(|&i| c[i].abs()).fold(0.0, f64::max));
        if mean - gj <= 1e-14 * scale || support.contains(&j) {
            break;
        }
        support.push(j);
    }
}

/// A unit vector in the null space of a wide matrix.
fn null_vector(dm: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    // pad with zero rows so the SVD returns a full set of right singular vectors
    let (d, m) = dm.shape();
    let mut padded = nalgebra::DMatrix::zeros(m, m);
    padded.view_mut((0, 0), (d, m)).copy_from(dm);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let imin = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc }).0;
    v_t.row(imin).iter().copied().collect()
}

/// `E_Q grad_theta l(theta, z)` for the worst case `Q`.
pub fn danskin_direction(loss: &LossModel, theta: &[f64], worst: (ArrayView2<'_, f64>, &[f64])) -> Vec<f64> {
    let (points, weights) = worst;
    let mut g = vec![0.0; theta.len()];
    for (z, &w) in points.rows().into_iter().zip(weights) {
        if w != 0.0 {
            loss.accumulate_grad(theta, z.as_slice().expect("row-major"), w, &mut g);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn erm_closed_form() {
        let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
        let data = SampleSet::from_rows(&[vec![0.2, -0.4], vec![0.0, 0.0]]).unwrap();
        let r = erm_solve(&loss, &data, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(r.theta[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.theta[1], 0.7, epsilon = 1e-15);
        let centered = SampleSet::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(erm_solve(&loss, &centered, &SolverConfig::default()).unwrap().theta, vec![0.5, 0.5]);
    }

    #[test]
    fn gradient_descent_matches_closed_form() {
        let v = vec![0.5, -0.25, 1.0];
        let quad = LossModel::quad_linear(v.clone()).unwrap();
        let vv = v.clone();
        let custom = LossModel::custom(
            3,
            move |t, z| {
                let u: Vec<f64> = t.iter().zip(&vv).map(|(a, b)| a - b).collect();
                0.5 * u.iter().map(|x| x * x).sum::<f64>() + z.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
            },
            move |t, z| t.iter().zip(&v).zip(z).map(|((a, b), c)| a - b + c).collect(),
        );
        let data = SampleSet::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.1, 0.4, -0.5], vec![-0.2, 0.1, 0.0]]).unwrap();
        let cfg = SolverConfig::default();
        let a = erm_solve(&quad, &data, &cfg).unwrap();
        let b = erm_solve(&custom, &data, &cfg).unwrap();
        assert!(b.converged);
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-7);
        }
    }
}
