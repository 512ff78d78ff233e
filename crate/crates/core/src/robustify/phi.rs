//! Phi-divergence worst case on a discrete center through its two-variable dual
//!
//! ```text
//! min_{lambda >= 0, mu}  lambda eta + mu + lambda sum_i p_i phi*((l_i - mu) / lambda)
//! ```

use super::{golden, Certificate, SolverConfig, WorstCaseReport};
use crate::distances::{phi_divergence_weights, DiscreteDist, PhiFamily};
use crate::error::{DroError, Result};
use crate::loss::LossModel;

/// Solution of the worst case for loss values at the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiSolution {
    pub value: f64,
    pub dual_value: f64,
    pub q: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub iterations: usize,
}

pub(crate) fn phi_worst_case_dist(
    family: &PhiFamily,
    center: &DiscreteDist,
    loss: &LossModel,
    theta: &[f64],
    eta: f64,
    cfg: &SolverConfig,
) -> Result<WorstCaseReport> {
    let l: Vec<f64> =
        center.points().rows().into_iter().map(|z| loss.eval(theta, z.as_slice().expect("row-major"))).collect();
    let p = center.probs();
    let sol = phi_worst_case_values(family, &l, p, eta)?;
    let center_value: f64 = l.iter().zip(p).map(|(a, b)| a * b).sum();
    let analytic_bound = matches!(family, PhiFamily::Chi2Neyman).then(|| {
        let sup = l.iter().zip(p).filter(|(_, pi)| **pi > 0.0).map(|(li, _)| li.abs()).fold(0.0f64, f64::max);
        center_value + eta.sqrt() * sup
    });
    let scale = l.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
    let gap = sol.dual_value - sol.value;
    let within = phi_divergence_weights(family, &sol.q, p)? <= eta + cfg.tol.max(1e-8);
    let below_bound = analytic_bound.is_none_or(|b| sol.value <= b + 1e-9 * scale);
    Ok(WorstCaseReport {
        value: sol.value,
        center_value,
        certificate: Certificate::DualWeights {
            worst_dist: center.reweighted(sol.q)?,
            lambda: sol.lambda,
            mu: sol.mu,
            dual_value: sol.dual_value,
            analytic_bound,
        },
        iterations: sol.iterations,
        tolerance_met: gap <= 1e-7 * scale.max(1.0) && within && below_bound,
    })
}

/// `sup { l^T q : D_phi(q || p) <= eta, q in simplex }` for losses `l` on the atoms of `p`.
pub fn phi_worst_case_values(family: &PhiFamily, l: &[f64], p: &[f64], eta: f64) -> Result<PhiSolution> {
    if l.len() != p.len() || l.is_empty() {
        return Err(DroError::Dimension { expected: p.len(), got: l.len() });
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(DroError::Validation(format!("radius must be finite and >= 0, got {eta}")));
    }
    if l.iter().any(|x| !x.is_finite()) {
        return Err(DroError::Domain("loss values must be finite".into()));
    }
    let center: f64 = l.iter().zip(p).map(|(a, b)| a * b).sum();
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let lmax = support.iter().map(|&i| l[i]).fold(f64::NEG_INFINITY, f64::max);
    let lmin = support.iter().map(|&i| l[i]).fold(f64::INFINITY, f64::min);
    let trivial = |value: f64| PhiSolution { value, dual_value: value, q: p.to_vec(), lambda: 0.0, mu: value, iterations: 0 };
    if support.len() == 1 || lmax == lmin {
        return Ok(trivial(lmax));
    }
    if eta == 0.0 {
        // only q = p has zero divergence for a strictly convex generator
        let mut s = trivial(center);
        s.dual_value = center;
        return Ok(s);
    }

    let s_max = family.conjugate_sup();
    let spread = lmax - lmin;
    let mut evals = 0usize;
    // dual objective at fixed (lambda, mu)
    let objective = |lambda: f64, mu: f64| -> f64 {
        let mut acc = 0.0;
        for &i in &support {
            let c = family.conjugate((l[i] - mu) / lambda);
            if !c.is_finite() {
                return f64::INFINITY;
            }
            acc += p[i] * c;
        }
        lambda * eta + mu + lambda * acc
    };
    let mu_tol = 1e-13 * spread.max(lmax.abs());
    let inner = |lambda: f64, evals: &mut usize| -> (f64, f64) {
        if lambda <= 0.0 {
            return (lmax, lmax);
        }
        let lo = if s_max.is_finite() { lmin.max(lmax - lambda * s_max) } else { lmin };
        let (mu, val) = golden(
            |mu| {
                *evals += 1;
                objective(lambda, mu)
            },
            lo,
            lmax,
            mu_tol,
        );
        (mu, val)
    };
    let lambda_hi = (lmax - center) / eta;
    let lambda_tol = 1e-13 * lambda_hi.max(1e-300);
    let (lambda, dual_value) = golden(|lam| inner(lam, &mut evals).1, 0.0, lambda_hi, lambda_tol);
    let (mu, _) = inner(lambda, &mut evals);

    let q = recover_primal(family, l, p, &support, lambda, mu, eta, lmax)?;
    let value: f64 = l.iter().zip(&q).map(|(a, b)| a * b).sum();
    Ok(PhiSolution { value: value.max(center), dual_value: dual_value.max(value), q, lambda, mu, iterations: evals })
}

/// First-order recovery `q_i = p_i (phi*)'((l_i - mu) / lambda)`, then repair to a feasible point.
#[allow(clippy::too_many_arguments)]
fn recover_primal(
    family: &PhiFamily,
    l: &[f64],
    p: &[f64],
    support: &[usize],
    lambda: f64,
    mu: f64,
    eta: f64,
    lmax: f64,
) -> Result<Vec<f64>> {
    let m = p.len();
    let mut q = vec![0.0; m];
    let s_max = family.conjugate_sup();
    let mut kink: Vec<usize> = Vec::new();
    if lambda > 0.0 {
        for &i in support {
            let s = (l[i] - mu) / lambda;
            let t = family.conjugate_slope(s);
            if s_max.is_finite() && s >= s_max - 1e-12 || !t.is_finite() {
                kink.push(i);
            } else {
                q[i] = p[i] * t;
            }
        }
    } else {
        kink.extend(support.iter().copied().filter(|&i| l[i] == lmax));
    }
    let total: f64 = q.iter().sum();
    if total > 1.0 {
        q.iter_mut().for_each(|x| *x /= total);
    } else {
        // residual mass: to the atoms at the conjugate's kink, else proportionally to p
        let residual = 1.0 - total;
        let targets: &[usize] = if kink.is_empty() { support } else { &kink };
        let mass: f64 = targets.iter().map(|&i| p[i]).sum();
        for &i in targets {
            q[i] += residual * p[i] / mass;
        }
    }
    // shrink toward p until inside the ball
    let div = |t: f64| -> f64 {
        let qt: Vec<f64> = q.iter().zip(p).map(|(qi, pi)| pi + t * (qi - pi)).collect();
        phi_divergence_weights(family, &qt, p).unwrap_or(f64::INFINITY)
    };
    if div(1.0) <= eta {
        return Ok(q);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if div(mid) <= eta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok(q.iter().zip(p).map(|(qi, pi)| pi + lo * (qi - pi)).collect())
}
