//! Constraint-sampled MMD worst case.
//!
//! Worst-case distributions are restricted to the centers `c_j` (data plus
//! uniform box samples), giving
//!
//! ```text
//! max  l^T q   s.t.  q in simplex,  (q - p)^T K (q - p) <= eta^2
//! ```
//!
//! whose conic dual is `min_{alpha, f0} f0 + p^T K alpha + eta ||alpha||_K`
//! subject to `f0 + (K alpha)_j >= l_j`, i.e. the sampled semi-infinite dual
//! with `f = f0 + sum_j alpha_j k(c_j, .)`. The primal is solved through its
//! Lagrangian in the ball multiplier `lambda`; for fixed `lambda` a pairwise
//! Frank-Wolfe method works on the simplex, and `alpha = 2 lambda (q - p)`
//! recovers a dual point whose gap equals the Frank-Wolfe gap plus
//! `2 lambda (eta^2 - r^2)`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{Center, Certificate, SolverConfig, WorstCaseReport};
use crate::error::{DroError, Result};
use crate::kernels::{gram_symmetric, KernelSpec, KmeExpansion};
use crate::loss::LossModel;
use crate::rng::{purpose, RngStream};
use crate::sample::DistributionSpec;

/// The sampled program: centers, their Gram matrix and the center weights.
#[derive(Debug, Clone)]
pub struct MmdProgram {
    kernel: KernelSpec,
    centers: Array2<f64>,
    gram: Array2<f64>,
    p_hat: Vec<f64>,
    /// `K p_hat`.
    kp: Vec<f64>,
    pkp: f64,
    audit: Option<Array2<f64>>,
}

/// Primal iterate and multiplier carried between calls on one program.
#[derive(Debug, Clone)]
pub struct MmdWarmStart {
    q: Vec<f64>,
    lambda: f64,
}

struct Trial {
    lambda: f64,
    q: Vec<f64>,
    /// `K (q - p)`.
    w: Vec<f64>,
    r: f64,
}

impl MmdProgram {
    pub fn build(
        kernel: KernelSpec,
        center: &Center,
        bounds: &DistributionSpec,
        cfg: &SolverConfig,
        rng: RngStream,
    ) -> Result<Self> {
        let (atoms, weights) = center.atoms();
        let d = atoms.ncols();
        let (lo, hi) = bounds.bounding_box();
        if lo.len() != d {
            return Err(DroError::Dimension { expected: d, got: lo.len() });
        }
        let extra = cfg.constraint_sample_count.unwrap_or(atoms.nrows());
        let constraints = uniform_points(&lo, &hi, extra, rng.substream(purpose::CONSTRAINTS));
        let total = atoms.nrows() + extra;
        let mut centers = Array2::zeros((total, d));
        centers.slice_mut(ndarray::s![..atoms.nrows(), ..]).assign(&atoms);
        centers.slice_mut(ndarray::s![atoms.nrows().., ..]).assign(&constraints);
        let gram = gram_symmetric(&kernel, centers.view());
        let mut p_hat = weights;
        p_hat.resize(total, 0.0);
        let kp: Vec<f64> = gram.rows().into_iter().map(|row| row.iter().zip(&p_hat).map(|(k, p)| k * p).sum()).collect();
        let pkp = kp.iter().zip(&p_hat).map(|(a, b)| a * b).sum();
        let audit = (cfg.audit_points > 0).then(|| uniform_points(&lo, &hi, cfg.audit_points, rng.substream(purpose::AUDIT)));
        Ok(Self { kernel, centers, gram, p_hat, kp, pkp, audit })
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn center_weights(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }

    /// `||q - p_hat||_K` for weights on the centers.
    pub fn distance_to_center(&self, q: &[f64]) -> f64 {
        let diff: Vec<f64> = q.iter().zip(&self.p_hat).map(|(a, b)| a - b).collect();
        self.k_norm(&diff)
    }

    fn k_norm(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.gram.rows().into_iter().enumerate() {
            if v[i] != 0.0 {
                acc += v[i] * row.iter().zip(v).map(|(k, x)| k * x).sum::<f64>();
            }
        }
        acc.max(0.0).sqrt()
    }

    /// `K (q - p_hat)` from scratch.
    fn residual_embedding(&self, q: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = self.kp.iter().map(|x| -x).collect();
        for (j, &qj) in q.iter().enumerate() {
            if qj != 0.0 {
                for (wi, k) in w.iter_mut().zip(self.gram.row(j)) {
                    *wi += qj * k;
                }
            }
        }
        w
    }

    pub fn worst_case(
        &self,
        loss: &LossModel,
        theta: &[f64],
        eta: f64,
        cfg: &SolverConfig,
        warm: &mut Option<MmdWarmStart>,
        gap_floor: f64,
    ) -> Result<WorstCaseReport> {
        let l: Vec<f64> =
            self.centers.rows().into_iter().map(|c| loss.eval(theta, c.as_slice().expect("row-major"))).collect();
        if l.iter().any(|x| !x.is_finite()) {
            return Err(DroError::Domain("loss is not finite at some center".into()));
        }
        let mut report = self.solve(&l, eta, cfg, warm, gap_floor)?;
        if let (Some(points), Certificate::KernelDual { coeffs, offset, audit_violation, .. }) =
            (&self.audit, &mut report.certificate)
        {
            let mut worst = 0.0f64;
            for z in points.rows() {
                let z = z.as_slice().expect("row-major");
                let f = *offset + coeffs.eval(&self.kernel, z);
                worst = worst.max(loss.eval(theta, z) - f);
            }
            *audit_violation = Some(worst);
        }
        Ok(report)
    }

    /// Worst case for loss values `l` given at the centers. The solve stops once the
    /// certified gap is below `max(value_tol * spread, gap_floor)`; `tolerance_met`
    /// always refers to the configured tolerance.
    pub fn solve(
        &self,
        l: &[f64],
        eta: f64,
        cfg: &SolverConfig,
        warm: &mut Option<MmdWarmStart>,
        gap_floor: f64,
    ) -> Result<WorstCaseReport> {
        let n = self.len();
        if l.len() != n {
            return Err(DroError::Dimension { expected: n, got: l.len() });
        }
        let emp: f64 = l.iter().zip(&self.p_hat).map(|(a, b)| a * b).sum();
        let (jmax, lmax) = l.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, x)| if x > b.1 { (j, x) } else { b });
        let spread = lmax - emp;

        // center attains the max everywhere on its support, or the ball is the center itself
        if spread <= 0.0 || eta == 0.0 {
            return Ok(self.exact_report(l, emp, self.p_hat.clone(), lmax, 0));
        }
        // the best vertex is already inside the ball
        let r0 = (self.gram[[jmax, jmax]] - 2.0 * self.kp[jmax] + self.pkp).max(0.0).sqrt();
        if r0 <= eta {
            let mut q = vec![0.0; n];
            q[jmax] = 1.0;
            return Ok(self.exact_report(l, lmax, q, lmax, 0));
        }

        let strict = cfg.value_tol * spread;
        let target = strict.max(gap_floor);
        let fw_eps = 0.25 * target;
        let mut q0 = match warm.as_ref() {
            Some(ws) if ws.q.len() == n => ws.q.clone(),
            _ => self.p_hat.clone(),
        };
        // fall back to the center when the warm start scores below it
        if l.iter().zip(&q0).map(|(a, b)| a * b).sum::<f64>() < emp {
            q0.clone_from(&self.p_hat);
        }
        // a warm multiplier is usually close, so bracket it tightly first
        let mut factor = if warm.as_ref().is_some_and(|ws| ws.lambda > 0.0) { 1.02 } else { 4.0 };
        let lambda0 = match warm.as_ref() {
            Some(ws) if ws.lambda > 0.0 && ws.lambda.is_finite() => ws.lambda,
            _ => 0.5 * spread / (eta * eta),
        };
        let mut w0 = self.residual_embedding(&q0);
        let mut iterations = 0usize;
        let mut best = Best { primal: (emp, self.p_hat.clone()), dual: None };

        let evaluate = |lambda: f64, q: &mut Vec<f64>, w: &mut Vec<f64>, iters: &mut usize, best: &mut Best, tight: bool| -> Trial {
            let best_dual = best.dual.as_ref().map_or(f64::INFINITY, |d| d.0);
            let best_primal = best.primal.0;
            // solve each multiplier only as precisely as the current global gap warrants
            let eps = if tight { fw_eps } else { fw_eps.max(0.05 * (best_dual - best_primal).min(spread)) };
            // stop early once this multiplier alone closes the global gap
            let mut done = |q: &[f64], w: &[f64]| {
                let (primal, _, dual, _) = self.bounds_at(l, emp, eta, lambda, q, w);
                dual.min(best_dual) - primal.max(best_primal) <= target
            };
            let (it, _) = self.frank_wolfe(lambda, l, q, w, eps, cfg.max_iters, &mut done);
            *iters += it;
            *w = self.residual_embedding(q);
            let (primal, t, dual, r) = self.bounds_at(l, emp, eta, lambda, q, w);
            if primal > best.primal.0 {
                let qs: Vec<f64> = q.iter().zip(&self.p_hat).map(|(qi, pi)| pi + t * (qi - pi)).collect();
                best.primal = (primal, qs);
            }
            if best.dual.as_ref().is_none_or(|b| dual < b.0) {
                let f0 = l.iter().zip(w.iter()).map(|(lj, wj)| lj - 2.0 * lambda * wj).fold(f64::NEG_INFINITY, f64::max);
                let alpha: Vec<f64> = q.iter().zip(&self.p_hat).map(|(a, b)| 2.0 * lambda * (a - b)).collect();
                best.dual = Some((dual, alpha, f0, lambda));
            }
            Trial { lambda, q: q.clone(), w: w.clone(), r }
        };

        let gap = |b: &Best| b.dual.as_ref().map_or(f64::INFINITY, |d| d.0 - b.primal.0);

        // bracket the multiplier on a log scale: r(lambda) decreases in lambda
        let mut a = evaluate(lambda0, &mut q0, &mut w0, &mut iterations, &mut best, false);
        let mut b: Trial;
        let mut steps = 0;
        if a.r > eta {
            loop {
                let (mut q, mut w) = (a.q.clone(), a.w.clone());
                let next = evaluate(a.lambda * factor, &mut q, &mut w, &mut iterations, &mut best, false);
                steps += 1;
                factor = (factor * factor).min(4.0);
                if next.r <= eta || steps > 80 || gap(&best) <= target {
                    b = next;
                    break;
                }
                a = next;
            }
        } else {
            b = a;
            loop {
                let (mut q, mut w) = (b.q.clone(), b.w.clone());
                let next = evaluate(b.lambda / factor, &mut q, &mut w, &mut iterations, &mut best, false);
                steps += 1;
                factor = (factor * factor).min(4.0);
                if next.r > eta || steps > 80 || gap(&best) <= target {
                    a = next;
                    break;
                }
                b = next;
            }
        }
        // a: r > eta (smaller lambda), b: r <= eta (larger lambda); Illinois on log r - log eta
        let h = |t: &Trial| (t.r.max(1e-300)).ln() - eta.ln();
        let (mut ha, mut hb) = (h(&a), h(&b));
        let mut side = 0i8;
        let mut rounds = 0;
        while gap(&best) > target && rounds < 100 && a.r > eta && b.r <= eta {
            rounds += 1;
            let (ta, tb) = (a.lambda.ln(), b.lambda.ln());
            let mut t = if ha.is_finite() && hb.is_finite() && ha != hb { ta - ha * (tb - ta) / (hb - ha) } else { 0.5 * (ta + tb) };
            if !(t > ta.min(tb) && t < ta.max(tb)) {
                t = 0.5 * (ta + tb);
            }
            let (mut q, mut w) = if (t - ta).abs() < (t - tb).abs() { (a.q.clone(), a.w.clone()) } else { (b.q.clone(), b.w.clone()) };
            let c = evaluate(t.exp(), &mut q, &mut w, &mut iterations, &mut best, false);
            let hc = h(&c);
            if c.r > eta {
                a = c;
                ha = hc;
                if side == -1 {
                    hb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                hb = hc;
                if side == 1 {
                    ha *= 0.5;
                }
                side = 1;
            }
            if (tb - ta).abs() < 1e-14 {
                break;
            }
        }
        // the bracket can collapse while the multiplier solves are still loose
        if gap(&best) > target {
            let (mut q, mut w) = (b.q.clone(), b.w.clone());
            b = evaluate(b.lambda, &mut q, &mut w, &mut iterations, &mut best, true);
        }
        *warm = Some(MmdWarmStart { q: b.q.clone(), lambda: b.lambda });

        let (dual, alpha, f0, lambda) = best.dual.expect("at least one evaluation");
        let (value, q) = best.primal;
        let gap = (dual - value).max(0.0);
        let k_alpha: Vec<f64> =
            self.gram.rows().into_iter().map(|row| row.iter().zip(&alpha).map(|(k, a)| k * a).sum()).collect();
        let residual = l.iter().zip(&k_alpha).map(|(lj, ka)| lj - f0 - ka).fold(0.0f64, f64::max);
        Ok(WorstCaseReport {
            value,
            center_value: emp,
            certificate: Certificate::KernelDual {
                coeffs: KmeExpansion { centers: self.centers.clone(), weights: alpha },
                offset: f0,
                weights: q,
                lambda,
                feasibility_residual: residual,
                gap_estimate: gap,
                audit_violation: None,
            },
            iterations,
            tolerance_met: gap <= strict.max(cfg.tol) && residual <= cfg.tol,
        })
    }

    /// Primal value after scaling `q` into the ball, the scale, the dual bound from
    /// `alpha = 2 lambda (q - p)`, and `||q - p||_K`.
    fn bounds_at(&self, l: &[f64], emp: f64, eta: f64, lambda: f64, q: &[f64], w: &[f64]) -> (f64, f64, f64, f64) {
        let (mut r2, mut lq, mut pw) = (0.0, 0.0, 0.0);
        let mut f0 = f64::NEG_INFINITY;
        for j in 0..q.len() {
            r2 += (q[j] - self.p_hat[j]) * w[j];
            lq += l[j] * q[j];
            pw += self.p_hat[j] * w[j];
            f0 = f0.max(l[j] - 2.0 * lambda * w[j]);
        }
        let r = r2.max(0.0).sqrt();
        let t = if r > eta { eta / r } else { 1.0 };
        let primal = emp + t * (lq - emp);
        let dual = f0 + 2.0 * lambda * pw + 2.0 * lambda * eta * r;
        (primal, t, dual, r)
    }

    fn exact_report(&self, l: &[f64], value: f64, q: Vec<f64>, lmax: f64, iterations: usize) -> WorstCaseReport {
        let emp: f64 = l.iter().zip(&self.p_hat).map(|(a, b)| a * b).sum();
        WorstCaseReport {
            value,
            center_value: emp,
            certificate: Certificate::KernelDual {
                coeffs: KmeExpansion { centers: self.centers.clone(), weights: vec![0.0; self.len()] },
                offset: lmax,
                weights: q,
                lambda: 0.0,
                feasibility_residual: 0.0,
                gap_estimate: 0.0,
                audit_violation: None,
            },
            iterations,
            tolerance_met: true,
        }
    }

    /// Pairwise Frank-Wolfe on `lambda (q-p)^T K (q-p) - l^T q` over the simplex.
    #[allow(clippy::too_many_arguments)]
    fn frank_wolfe(
        &self,
        lambda: f64,
        l: &[f64],
        q: &mut [f64],
        w: &mut Vec<f64>,
        eps: f64,
        max_iters: usize,
        done: &mut impl FnMut(&[f64], &[f64]) -> bool,
    ) -> (usize, bool) {
        let n = q.len();
        let two_lambda = 2.0 * lambda;
        let gram = self.gram.as_slice().expect("standard layout");
        let mut state = fw_scan(two_lambda, l, q, w, gram, None);
        for it in 0..max_iters {
            if it > 0 && it % 512 == 0 {
                *w = self.residual_embedding(q);
                state = fw_scan(two_lambda, l, q, w, gram, None);
            }
            if it % 64 == 0 && done(q, w) {
                return (it, true);
            }
            let FwScan { s, gs, a, ga, gq } = state;
            if gq - gs <= eps || a == usize::MAX {
                return (it, true);
            }
            let curv = two_lambda * (gram[s * n + s] + gram[a * n + a] - 2.0 * gram[s * n + a]);
            let qa = q[a];
            let gamma = if curv > 0.0 { ((ga - gs) / curv).min(qa) } else { qa };
            if gamma <= 0.0 {
                return (it, true);
            }
            q[s] += gamma;
            if gamma == qa {
                q[a] = 0.0;
            } else {
                q[a] -= gamma;
            }
            state = fw_scan(two_lambda, l, q, w, gram, Some((gamma, s, a)));
        }
        (max_iters, false)
    }

}

struct FwScan {
    s: usize,
    gs: f64,
    a: usize,
    ga: f64,
    gq: f64,
}

/// Gradient extremes of the Lagrangian, optionally applying the pending update
/// `w += gamma (K_s - K_a)` in the same pass.
/// Toward vertex `s` (smallest gradient) and the away vertex on the support
/// giving the largest second-order decrease along `e_s - e_a`, optionally
/// applying the pending update `w += gamma (K_s' - K_a')` first.
#[inline]
fn fw_scan(
    two_lambda: f64,
    l: &[f64],
    q: &[f64],
    w: &mut [f64],
    gram: &[f64],
    update: Option<(f64, usize, usize)>,
) -> FwScan {
    let n = q.len();
    let (l, w) = (&l[..n], &mut w[..n]);
    if let Some((gamma, s, a)) = update {
        let (ks, ka) = (&gram[s * n..(s + 1) * n], &gram[a * n..(a + 1) * n]);
        for j in 0..n {
            w[j] += gamma * (ks[j] - ka[j]);
        }
    }
    let (mut s, mut gs, mut gq) = (0, f64::INFINITY, 0.0);
    for j in 0..n {
        let g = two_lambda * w[j] - l[j];
        gq += q[j] * g;
        if g < gs {
            gs = g;
            s = j;
        }
    }
    let ks = &gram[s * n..(s + 1) * n];
    let kss = ks[s];
    let (mut a, mut ga, mut best) = (usize::MAX, f64::NEG_INFINITY, -1.0);
    for j in 0..n {
        if q[j] > 0.0 {
            let g = two_lambda * w[j] - l[j];
            let diff = g - gs;
            if diff > 0.0 {
                let curv = (two_lambda * (kss + gram[j * n + j] - 2.0 * ks[j])).max(1e-300);
                let score = diff * diff / curv;
                if score > best {
                    best = score;
                    a = j;
                    ga = g;
                }
            }
        }
    }
    FwScan { s, gs, a, ga, gq }
}

struct Best {
    primal: (f64, Vec<f64>),
    /// (value, alpha, offset, lambda)
    dual: Option<(f64, Vec<f64>, f64, f64)>,
}

fn uniform_points(lo: &[f64], hi: &[f64], count: usize, rng: RngStream) -> Array2<f64> {
    let mut gen = rng.rng();
    let d = lo.len();
    let mut out = Array2::zeros((count, d));
    for mut row in out.rows_mut() {
        for k in 0..d {
            row[k] = lo[k] + (hi[k] - lo[k]) * gen.random::<f64>();
        }
    }
    out
}
