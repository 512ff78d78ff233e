//! Worst-case expectation oracles over MMD, phi-divergence and 1-Wasserstein balls.
//!
//! Every oracle returns a feasible worst-case distribution (so the reported
//! value is a certified lower bound of the inner supremum) together with a
//! dual object whose value bounds it from above.

mod mmd;
pub mod phi;
mod w1;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::distances::{DiscreteDist, PhiFamily};
use crate::error::{check_dim, DroError, Result};
use crate::kernels::{KernelSpec, KmeExpansion};
use crate::loss::LossModel;
use crate::rng::RngStream;
use crate::sample::{DistributionSpec, SampleSet};

pub use mmd::{MmdProgram, MmdWarmStart};
pub use phi::{phi_worst_case_values, PhiSolution};
pub use w1::W1Mode;

#[derive(Debug, Clone)]
pub enum AmbiguityFamily {
    Mmd { kernel: KernelSpec },
    W1,
    Phi { family: PhiFamily },
}

impl AmbiguityFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mmd { .. } => "mmd",
            Self::W1 => "w1",
            Self::Phi { .. } => "phi",
        }
    }
}

/// Ball center.
#[derive(Debug, Clone)]
pub enum Center {
    Empirical(SampleSet),
    Discrete(DiscreteDist),
}

impl Center {
    pub fn dim(&self) -> usize {
        match self {
            Self::Empirical(s) => s.dim(),
            Self::Discrete(d) => d.dim(),
        }
    }

    /// Atoms and weights; empirical centers keep one atom per sample row.
    pub fn atoms(&self) -> (ArrayView2<'_, f64>, Vec<f64>) {
        match self {
            Self::Empirical(s) => (s.data().view(), vec![1.0 / s.n() as f64; s.n()]),
            Self::Discrete(d) => (d.points().view(), d.probs().to_vec()),
        }
    }

    /// The center as a distribution with distinct atoms.
    pub fn as_discrete(&self) -> DiscreteDist {
        match self {
            Self::Empirical(s) => DiscreteDist::empirical(s),
            Self::Discrete(d) => d.clone(),
        }
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let (pts, w) = self.atoms();
        pts.rows().into_iter().zip(&w).map(|(z, p)| p * f(z.as_slice().expect("row-major"))).sum()
    }
}

/// `{Q : D(Q, center) <= radius}`.
#[derive(Debug, Clone)]
pub struct AmbiguitySet {
    pub family: AmbiguityFamily,
    pub center: Center,
    pub radius: f64,
}

impl AmbiguitySet {
    pub fn new(family: AmbiguityFamily, center: Center, radius: f64) -> Result<Self> {
        let set = Self { family, center, radius };
        set.validate()?;
        Ok(set)
    }

    pub fn mmd(kernel: KernelSpec, data: SampleSet, radius: f64) -> Result<Self> {
        Self::new(AmbiguityFamily::Mmd { kernel }, Center::Empirical(data), radius)
    }

    pub fn w1(data: SampleSet, radius: f64) -> Result<Self> {
        Self::new(AmbiguityFamily::W1, Center::Empirical(data), radius)
    }

    pub fn phi(family: PhiFamily, center: Center, radius: f64) -> Result<Self> {
        Self::new(AmbiguityFamily::Phi { family }, center, radius)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(DroError::Validation(format!("radius must be finite and >= 0, got {}", self.radius)));
        }
        Ok(())
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.family.clone(), self.center.clone(), radius)
    }
}

/// How the oracle certified its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum Certificate {
    /// Worst-case reweighting of the center with the optimal dual pair.
    DualWeights {
        worst_dist: DiscreteDist,
        lambda: f64,
        mu: f64,
        dual_value: f64,
        /// `E_center l + sqrt(eta) ||l||_inf`, reported for the chi-square family.
        analytic_bound: Option<f64>,
    },
    /// Sampled kernel dual `f = offset + sum_j alpha_j k(c_j, .)` with the primal weights on the centers.
    KernelDual {
        coeffs: KmeExpansion,
        offset: f64,
        weights: Vec<f64>,
        lambda: f64,
        feasibility_residual: f64,
        gap_estimate: f64,
        /// Largest `l - f` on random audit points of the box, when requested.
        audit_violation: Option<f64>,
    },
    /// Transport dual multiplier and the recovered worst case.
    W1Dual {
        lambda: f64,
        worst_dist: DiscreteDist,
        dual_value: f64,
        grid_error_bound: Option<f64>,
        mode: W1Mode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    /// Expected loss under a feasible worst-case distribution.
    pub value: f64,
    /// Expected loss under the center.
    pub center_value: f64,
    pub certificate: Certificate,
    pub iterations: usize,
    pub tolerance_met: bool,
}

impl WorstCaseReport {
    /// Upper bound on the supremum implied by the certificate.
    pub fn dual_value(&self) -> f64 {
        match &self.certificate {
            Certificate::DualWeights { dual_value, .. } | Certificate::W1Dual { dual_value, .. } => *dual_value,
            Certificate::KernelDual { gap_estimate, .. } => self.value + gap_estimate,
        }
    }

    /// Support and weights of the worst-case distribution.
    pub fn worst_distribution(&self) -> (ArrayView2<'_, f64>, &[f64]) {
        match &self.certificate {
            Certificate::DualWeights { worst_dist, .. } | Certificate::W1Dual { worst_dist, .. } => {
                (worst_dist.points().view(), worst_dist.probs())
            }
            Certificate::KernelDual { coeffs, weights, .. } => (coeffs.centers.view(), weights),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Iteration cap for the inner first-order solver.
    pub max_iters: usize,
    /// Feasibility tolerance.
    pub tol: f64,
    /// Relative duality-gap tolerance for oracle values.
    pub value_tol: f64,
    /// Constraint samples added to the MMD centers; `None` means one per data point.
    pub constraint_sample_count: Option<usize>,
    /// Random box points on which the sampled MMD dual is audited; 0 disables.
    pub audit_points: usize,
    pub w1_mode: W1Mode,
    /// Grid spacing for the Wasserstein grid mode.
    pub w1_grid_step: f64,
    /// Iteration cap for the outer DRO solver.
    pub outer_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            tol: 1e-8,
            value_tol: 1e-6,
            constraint_sample_count: None,
            audit_points: 0,
            w1_mode: W1Mode::Auto,
            w1_grid_step: 0.01,
            outer_max_iters: 400,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.value_tol > 0.0) {
            return Err(DroError::Validation("solver tolerances must be positive".into()));
        }
        if !(self.w1_grid_step > 0.0) {
            return Err(DroError::Validation("grid step must be positive".into()));
        }
        Ok(())
    }
}

/// Golden-section search for a convex (unimodal) `g` on `[lo, hi]`, to interval width `tol`.
pub fn convex_minimize_1d(g: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo <= hi) {
        return Err(DroError::Validation(format!("empty interval [{lo}, {hi}]")));
    }
    Ok(golden(g, lo, hi, tol))
}

pub(crate) fn golden(mut g: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = (lo, g(lo));
    let ghi = g(hi);
    if ghi < best.1 {
        best = (hi, ghi);
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    let tol = tol.max(f64::EPSILON * (lo.abs() + hi.abs()));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = g(x2);
        }
    }
    for (x, f) in [(x1, f1), (x2, f2)] {
        if f < best.1 {
            best = (x, f);
        }
    }
    best
}

/// Stateful oracle for repeated evaluation at different `theta` on one sampled program.
pub struct Oracle {
    set: AmbiguitySet,
    loss: LossModel,
    cfg: SolverConfig,
    kind: OracleKind,
}

enum OracleKind {
    Mmd { program: Box<MmdProgram>, warm: Option<MmdWarmStart> },
    Phi { center: DiscreteDist },
    W1 { setup: w1::W1Setup },
}

impl Oracle {
    /// Prepares the oracle; for MMD this draws the constraint samples from `rng`.
    pub fn new(
        set: &AmbiguitySet,
        loss: &LossModel,
        bounds: Option<&DistributionSpec>,
        cfg: &SolverConfig,
        rng: RngStream,
    ) -> Result<Self> {
        set.validate()?;
        cfg.validate()?;
        if let Some(dz) = loss.z_dim() {
            check_dim(dz, set.center.dim())?;
        }
        let kind = match &set.family {
            AmbiguityFamily::Mmd { kernel } => {
                let bounds = bounds.ok_or_else(|| {
                    DroError::Validation("the MMD oracle needs a compact box bounding the sample space".into())
                })?;
                OracleKind::Mmd { program: Box::new(MmdProgram::build(*kernel, &set.center, bounds, cfg, rng)?), warm: None }
            }
            AmbiguityFamily::Phi { .. } => OracleKind::Phi { center: set.center.as_discrete() },
            AmbiguityFamily::W1 => OracleKind::W1 { setup: w1::W1Setup::new(&set.center, loss, bounds, cfg)? },
        };
        Ok(Self { set: set.clone(), loss: loss.clone(), cfg: cfg.clone(), kind })
    }

    pub fn set(&self) -> &AmbiguitySet {
        &self.set
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    pub fn radius(&self) -> f64 {
        self.set.radius
    }

    /// Changes the radius while keeping the sampled program.
    pub fn set_radius(&mut self, radius: f64) -> Result<()> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(DroError::Validation(format!("radius must be finite and >= 0, got {radius}")));
        }
        self.set.radius = radius;
        Ok(())
    }

    pub fn mmd_program(&self) -> Option<&MmdProgram> {
        match &self.kind {
            OracleKind::Mmd { program, .. } => Some(program),
            _ => None,
        }
    }

    pub fn evaluate(&mut self, theta: &[f64]) -> Result<WorstCaseReport> {
        self.evaluate_with(theta, 0.0)
    }

    /// Like [`Oracle::evaluate`], but iterative oracles may stop once their
    /// certified gap is below `gap_floor`.
    pub fn evaluate_with(&mut self, theta: &[f64], gap_floor: f64) -> Result<WorstCaseReport> {
        check_dim(self.loss.theta_dim(), theta.len())?;
        let eta = self.set.radius;
        match &mut self.kind {
            OracleKind::Mmd { program, warm } => program.worst_case(&self.loss, theta, eta, &self.cfg, warm, gap_floor),
            OracleKind::Phi { center } => {
                let AmbiguityFamily::Phi { family } = &self.set.family else { unreachable!() };
                phi::phi_worst_case_dist(family, center, &self.loss, theta, eta, &self.cfg)
            }
            OracleKind::W1 { setup } => setup.worst_case(&self.loss, theta, eta),
        }
    }
}

/// Worst case over an MMD ball on the constraint-sampled program.
pub fn mmd_worst_case(
    set: &AmbiguitySet,
    loss: &LossModel,
    theta: &[f64],
    bounds: &DistributionSpec,
    cfg: &SolverConfig,
    rng: RngStream,
) -> Result<WorstCaseReport> {
    if !matches!(set.family, AmbiguityFamily::Mmd { .. }) {
        return Err(DroError::Validation("expected an MMD ambiguity set".into()));
    }
    Oracle::new(set, loss, Some(bounds), cfg, rng)?.evaluate(theta)
}

/// Worst case over a phi-divergence ball around a discrete center.
pub fn phi_worst_case(set: &AmbiguitySet, loss: &LossModel, theta: &[f64], cfg: &SolverConfig) -> Result<WorstCaseReport> {
    if !matches!(set.family, AmbiguityFamily::Phi { .. }) {
        return Err(DroError::Validation("expected a phi-divergence ambiguity set".into()));
    }
    Oracle::new(set, loss, None, cfg, RngStream::new(0))?.evaluate(theta)
}

/// Worst case over a 1-Wasserstein ball; `bounds` enables grid mode on a compact box.
pub fn w1_worst_case(
    set: &AmbiguitySet,
    loss: &LossModel,
    theta: &[f64],
    bounds: Option<&DistributionSpec>,
    cfg: &SolverConfig,
) -> Result<WorstCaseReport> {
    if !matches!(set.family, AmbiguityFamily::W1) {
        return Err(DroError::Validation("expected a Wasserstein ambiguity set".into()));
    }
    Oracle::new(set, loss, bounds, cfg, RngStream::new(0))?.evaluate(theta)
}

/// Dispatches on the set's family.
pub fn worst_case(
    set: &AmbiguitySet,
    loss: &LossModel,
    theta: &[f64],
    bounds: Option<&DistributionSpec>,
    cfg: &SolverConfig,
    rng: RngStream,
) -> Result<WorstCaseReport> {
    Oracle::new(set, loss, bounds, cfg, rng)?.evaluate(theta)
}

/// Merges coincident atoms into a distribution with distinct points.
pub(crate) fn merge_atoms(points: &Array2<f64>, weights: &[f64]) -> Result<DiscreteDist> {
    let mut keep: Vec<usize> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    'outer: for i in 0..points.nrows() {
        if weights[i] <= 0.0 {
            continue;
        }
        for (slot, &k) in keep.iter().enumerate() {
            if points.row(k) == points.row(i) {
                mass[slot] += weights[i];
                continue 'outer;
            }
        }
        keep.push(i);
        mass.push(weights[i]);
    }
    let total: f64 = mass.iter().sum();
    let mut out = Array2::zeros((keep.len(), points.ncols()));
    for (r, &i) in keep.iter().enumerate() {
        out.row_mut(r).assign(&points.row(i));
    }
    DiscreteDist::new(out, mass.iter().map(|m| m / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn golden_examples() {
        let (x, fx) = convex_minimize_1d(|x| (x - 3.0) * (x - 3.0), 0.0, 10.0, 1e-10).unwrap();
        assert_abs_diff_eq!(x, 3.0, epsilon = 1e-9);
        assert!(fx < 1e-18);
        let (x, _) = convex_minimize_1d(f64::abs, -1.0, 2.0, 1e-12).unwrap();
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-11);
        assert!(convex_minimize_1d(f64::abs, 1.0, 0.0, 1e-9).is_err());
        let (x, _) = convex_minimize_1d(|x| x, 0.0, 1.0, 1e-9).unwrap();
        assert_eq!(x, 0.0);
    }
}
