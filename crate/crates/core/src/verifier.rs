//! Monte-Carlo checks of ambiguity-set coverage and of the three-term
//! excess-risk decomposition.
//!
//! With `f_dro` the DRO solution, `f*` the true optimum and `WC` the
//! worst-case risk over the ball,
//!
//! ```text
//! E_P l(f_dro) - E_P l(f*) = [E_P l(f_dro) - WC(f_dro)]
//!                          + [WC(f_dro) - WC(f*)]
//!                          + [WC(f*) - E_P l(f*)].
//! ```
//!
//! The middle term is nonpositive by optimality of `f_dro`; the first is
//! nonpositive whenever the truth lies in the ball.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{chi2_ball_size, chi2_min_sample, mmd_ball_size, mmd_excess_bound, w1_ball_size, CalibrationInput};
use crate::distances::{phi_divergence, w1, DiscreteDist, PhiFamily};
use crate::error::{DroError, Result};
use crate::kernels::{median_heuristic, mmd, population_mmd_to_empirical, KernelSpec, KmeExpansion};
use crate::loss::{excess_risk, true_optimum, true_risk, LossKind, LossModel};
use crate::rng::{purpose, RngStream};
use crate::robustify::{AmbiguityFamily, AmbiguitySet, Center, Oracle, SolverConfig};
use crate::sample::{sample, DistributionSpec, SampleSet};
use crate::solve::DroPath;

const Z95: f64 = 1.959_963_984_540_054;

/// Half-width of the 95% Wilson score interval for `hits` out of `trials`.
pub fn wilson_halfwidth(hits: usize, trials: usize) -> f64 {
    wilson_interval(hits, trials).1
}

/// Center and half-width of the 95% Wilson score interval.
pub fn wilson_interval(hits: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.5, 0.5);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (center, half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub hits: usize,
    pub rate: f64,
    /// `1 - delta`.
    pub target: f64,
    pub ci_halfwidth: f64,
    pub eta: f64,
    /// Set when `n` is below the sample size the chi-square guarantee asks for.
    pub below_regime: bool,
    pub note: Option<String>,
}

impl CoverageReport {
    fn new(trials: usize, hits: usize, target: f64, eta: f64) -> Self {
        Self {
            trials,
            hits,
            rate: if trials == 0 { 0.0 } else { hits as f64 / trials as f64 },
            target,
            ci_halfwidth: wilson_halfwidth(hits, trials),
            eta,
            below_regime: false,
            note: None,
        }
    }

    /// `rate >= target - ci_halfwidth`.
    pub fn passed(&self) -> bool {
        self.rate >= self.target - self.ci_halfwidth
    }
}

/// Fraction of samples of size `n` whose empirical embedding lies within the
/// calibrated MMD radius of the box distribution.
pub fn coverage_mmd(
    truth: &DistributionSpec,
    kernel: &KernelSpec,
    n: usize,
    delta: f64,
    trials: usize,
    rng: RngStream,
) -> Result<CoverageReport> {
    let eta = mmd_ball_size(&CalibrationInput::new(n, delta).with_kernel_bound(kernel.sup_bound()))?;
    coverage_mmd_at(truth, kernel, n, eta, delta, trials, rng)
}

/// [`coverage_mmd`] with an explicit radius.
pub fn coverage_mmd_at(
    truth: &DistributionSpec,
    kernel: &KernelSpec,
    n: usize,
    eta: f64,
    delta: f64,
    trials: usize,
    rng: RngStream,
) -> Result<CoverageReport> {
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let s = sample(truth, n, rng.path(&[t as u64, purpose::DATA]))?;
            Ok(population_mmd_to_empirical(kernel, truth, &s)? <= eta)
        })
        .collect::<Result<_>>()?;
    Ok(CoverageReport::new(trials, hits.iter().filter(|&&h| h).count(), 1.0 - delta, eta))
}

/// Fraction of samples whose empirical distribution `P_n` satisfies
/// `D_chi2(P || P_n) <= eta` at the calibrated radius. A sample missing a
/// support point counts as a miss.
pub fn coverage_chi2(dist: &DiscreteDist, n: usize, delta: f64, trials: usize, rng: RngStream) -> Result<CoverageReport> {
    let m = dist.len();
    let input = CalibrationInput::new(n, delta).with_support(m);
    let eta = chi2_ball_size(&input)?;
    let p_min = dist.probs().iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min);
    let needed = chi2_min_sample(&input, p_min)?;
    let spec = DistributionSpec::discrete(dist.points().clone(), dist.probs().to_vec())?;
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let s = sample(&spec, n, rng.path(&[t as u64, purpose::DATA]))?;
            let Some(hat) = empirical_on_support(dist, &s) else { return Ok(false) };
            if hat.iter().zip(dist.probs()).any(|(&h, &p)| h == 0.0 && p > 0.0) {
                return Ok(false);
            }
            let center = DiscreteDist::new(dist.points().clone(), hat)?;
            Ok(phi_divergence(&PhiFamily::Chi2Neyman, dist, &center)? <= eta)
        })
        .collect::<Result<_>>()?;
    let mut report = CoverageReport::new(trials, hits.iter().filter(|&&h| h).count(), 1.0 - delta, eta);
    if (n as u64) < needed {
        report.below_regime = true;
        report.note = Some(format!("n = {n} is below the guaranteed regime n >= {needed}"));
    }
    Ok(report)
}

/// Empirical frequencies of `s` on the atoms of `dist`; `None` if a sample
/// point is not an atom.
fn empirical_on_support(dist: &DiscreteDist, s: &SampleSet) -> Option<Vec<f64>> {
    let mut counts = vec![0.0; dist.len()];
    for z in s.data().rows() {
        let k = dist.points().rows().into_iter().position(|p| p == z)?;
        counts[k] += 1.0;
    }
    let n = s.n() as f64;
    Some(counts.into_iter().map(|c| c / n).collect())
}

/// Whether the truth lies in the ball; `None` when this cannot be decided exactly.
pub fn truth_in_ball(set: &AmbiguitySet, truth: &DistributionSpec) -> Result<Option<bool>> {
    let center = set.center.as_discrete();
    let eta = set.radius;
    match (&set.family, truth.evaluation()) {
        (AmbiguityFamily::Mmd { kernel }, DistributionSpec::UniformBox { .. }) => match &set.center {
            Center::Empirical(s) => Ok(Some(population_mmd_to_empirical(kernel, truth.evaluation(), s)? <= eta)),
            Center::Discrete(_) => Ok(None),
        },
        (AmbiguityFamily::Mmd { kernel }, DistributionSpec::DiscreteSupport { points, probs }) => {
            let p = KmeExpansion::new(points.clone(), probs.clone())?;
            let q = KmeExpansion::new(center.points().clone(), center.probs().to_vec())?;
            Ok(Some(mmd(kernel, &p, &q)? <= eta))
        }
        (AmbiguityFamily::W1, DistributionSpec::DiscreteSupport { .. }) => {
            Ok(Some(w1(&DiscreteDist::from_spec(truth.evaluation())?, &center)? <= eta))
        }
        (AmbiguityFamily::Phi { family }, DistributionSpec::DiscreteSupport { points, probs }) => {
            // center weights on the truth's atoms; mass elsewhere cannot be reached
            let mut hat = vec![0.0; probs.len()];
            for (z, w) in center.points().rows().into_iter().zip(center.probs()) {
                match points.rows().into_iter().position(|p| p == z) {
                    Some(k) => hat[k] += w,
                    None => return Ok(Some(false)),
                }
            }
            if hat.iter().zip(probs).any(|(&h, &p)| h == 0.0 && p > 0.0) {
                return Ok(Some(false));
            }
            let truth_dist = DiscreteDist::new(points.clone(), probs.clone())?;
            let center_dist = DiscreteDist::new(points.clone(), hat)?;
            Ok(Some(phi_divergence(family, &truth_dist, &center_dist)? <= eta))
        }
        _ => Ok(None),
    }
}

/// Three-term decomposition at one solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// `E_P l(f_dro) - WC(f_dro)`.
    pub term1: f64,
    /// `WC(f_dro) - WC(f*)`.
    pub term2: f64,
    /// `WC(f*) - E_P l(f*)`.
    pub term3: f64,
    pub excess: f64,
    pub theta_dro: Vec<f64>,
    pub covered: Option<bool>,
    pub converged: bool,
    pub tol: f64,
}

impl DecompositionReport {
    pub fn term2_ok(&self) -> bool {
        self.term2 <= self.tol
    }

    /// `None` when coverage is unknown or fails, since the first term is only
    /// controlled on the coverage event.
    pub fn term1_ok(&self) -> Option<bool> {
        (self.covered == Some(true)).then_some(self.term1 <= self.tol)
    }
}

/// Solves the DRO problem on `set` and evaluates the decomposition against the
/// supplied true optimum.
pub fn decomposition_check(
    loss: &LossModel,
    set: &AmbiguitySet,
    truth: &DistributionSpec,
    bounds: Option<&DistributionSpec>,
    theta_opt: &[f64],
    cfg: &SolverConfig,
    rng: RngStream,
) -> Result<DecompositionReport> {
    let mut oracle = Oracle::new(set, loss, bounds, cfg, rng)?;
    let mut path = DroPath::from_erm(&oracle, cfg)?;
    let solved = path.solve(&mut oracle, cfg)?;
    let wc_dro = oracle.evaluate(&solved.theta)?.value;
    let wc_opt = oracle.evaluate(theta_opt)?.value;
    let risk_dro = true_risk(loss, truth, &solved.theta)?;
    let risk_opt = true_risk(loss, truth, theta_opt)?;
    Ok(DecompositionReport {
        term1: risk_dro - wc_dro,
        term2: wc_dro - wc_opt,
        term3: wc_opt - risk_opt,
        excess: risk_dro - risk_opt,
        theta_dro: solved.theta,
        covered: truth_in_ball(set, truth)?,
        converged: solved.converged,
        tol: 1e-5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Mmd,
    W1,
    Chi2,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mmd => "mmd",
            Self::W1 => "w1",
            Self::Chi2 => "chi2",
        }
    }
}

/// Repeated decomposition checks on the quadratic-linear experiment loss.
///
/// The MMD family draws data from `Unif[-B, B]^d`; the Wasserstein and
/// chi-square families draw from a random discrete truth with `support` atoms
/// in the same box, where coverage is exactly decidable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    pub family: Family,
    pub d: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub n: usize,
    pub delta: f64,
    /// Overrides the calibrated radius.
    pub eta: Option<f64>,
    pub trials: usize,
    pub support: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            family: Family::Mmd,
            d: 5,
            b: 1.0,
            n: 50,
            delta: 0.1,
            eta: None,
            trials: 100,
            support: 4,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrial {
    pub trial_id: usize,
    pub family: Family,
    pub eta: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub excess: f64,
    pub covered: Option<bool>,
    pub converged: bool,
    /// Excess-risk bound implied by the radius, when the loss norm is known.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub family: Family,
    pub trials: usize,
    /// Non-converged solves, left out of every frequency below.
    pub excluded: usize,
    pub term2_violations: usize,
    pub covered: usize,
    pub term1_violations_when_covered: usize,
    /// Trials whose excess exceeds `bound + 1e-9`.
    pub bound_exceedances: Option<usize>,
    pub bound_exceedance_rate: Option<f64>,
    pub delta: f64,
    pub passed: bool,
}

/// Runs `cfg.trials` independent decomposition checks.
pub fn run_decomposition(cfg: &DecompositionConfig) -> Result<(Vec<DecompositionTrial>, DecompositionSummary)> {
    if cfg.trials == 0 || cfg.n == 0 || cfg.d == 0 || !(cfg.b > 0.0) {
        return Err(DroError::Validation("decomposition needs trials, n, d >= 1 and B > 0".into()));
    }
    let root = RngStream::new(cfg.seed);
    let boxed = DistributionSpec::symmetric_box(cfg.d, cfg.b)?;
    let trials: Vec<DecompositionTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| decomposition_trial(cfg, &boxed, root.substream(t as u64), t))
        .collect::<Result<_>>()?;
    let summary = summarize_decomposition(cfg, &trials);
    Ok((trials, summary))
}

fn decomposition_trial(cfg: &DecompositionConfig, boxed: &DistributionSpec, rs: RngStream, trial_id: usize) -> Result<DecompositionTrial> {
    let v_spec = DistributionSpec::uniform_box(vec![0.5; cfg.d], vec![1.0; cfg.d])?;
    let v = sample(&v_spec, 1, rs.substream(purpose::LOSS_PARAMS))?.row(0).to_vec();
    let loss = LossModel::quad_linear(v.clone())?;
    let truth = match cfg.family {
        Family::Mmd => boxed.clone(),
        Family::W1 | Family::Chi2 => random_discrete(cfg.d, cfg.b, cfg.support, rs.substream(purpose::PROBES))?,
    };
    let data = sample(&truth, cfg.n, rs.substream(purpose::DATA))?;
    let input = CalibrationInput::new(cfg.n, cfg.delta).with_dim(cfg.d);
    let (set, bounds, eta) = match cfg.family {
        Family::Mmd => {
            let kernel = KernelSpec::gaussian(median_heuristic(&data)?)?;
            let eta = match cfg.eta {
                Some(e) => e,
                None => mmd_ball_size(&input.clone().with_kernel_bound(kernel.sup_bound()))?,
            };
            (AmbiguitySet::mmd(kernel, data, eta)?, Some(boxed), eta)
        }
        Family::W1 => {
            let eta = match cfg.eta {
                Some(e) => e,
                None => w1_ball_size(&input)?,
            };
            (AmbiguitySet::w1(data, eta)?, None, eta)
        }
        Family::Chi2 => {
            let eta = match cfg.eta {
                Some(e) => e,
                None => chi2_ball_size(&input.clone().with_support(cfg.support))?,
            };
            let center = Center::Discrete(DiscreteDist::empirical(&data));
            (AmbiguitySet::phi(PhiFamily::Chi2Neyman, center, eta)?, None, eta)
        }
    };
    let theta_opt = true_optimum(&loss, &truth)?;
    let report = decomposition_check(&loss, &set, &truth, bounds, &theta_opt, &cfg.solver, rs.substream(purpose::CONSTRAINTS))?;
    // the loss vanishes at the optimum for the box truth, so its RKHS norm is 0
    let bound = match (cfg.family, loss.kind()) {
        (Family::Mmd, LossKind::QuadLinear { .. }) => Some(mmd_excess_bound(&input, 0.0)?),
        _ => None,
    };
    Ok(DecompositionTrial {
        trial_id,
        family: cfg.family,
        eta,
        term1: report.term1,
        term2: report.term2,
        term3: report.term3,
        excess: excess_risk(&loss, &truth, &report.theta_dro)?,
        covered: report.covered,
        converged: report.converged,
        bound,
    })
}

/// Discrete distribution on `m` uniform points of `[-B, B]^d` with random weights bounded away from 0.
pub fn random_discrete(d: usize, b: f64, m: usize, rng: RngStream) -> Result<DistributionSpec> {
    let mut r = rng.rng();
    let points = Array2::from_shape_fn((m.max(1), d), |_| r.random_range(-b..b));
    let raw: Vec<f64> = (0..m.max(1)).map(|_| r.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    DistributionSpec::discrete(points, raw.iter().map(|x| x / total).collect())
}

fn summarize_decomposition(cfg: &DecompositionConfig, trials: &[DecompositionTrial]) -> DecompositionSummary {
    let tol = 1e-5;
    let kept: Vec<&DecompositionTrial> = trials.iter().filter(|t| t.converged).collect();
    let excluded = trials.len() - kept.len();
    let covered: Vec<&&DecompositionTrial> = kept.iter().filter(|t| t.covered == Some(true)).collect();
    let term2_violations = kept.iter().filter(|t| t.term2 > tol).count();
    let bound_exceedances = kept
        .iter()
        .map(|t| t.bound.map(|b| t.excess > b + 1e-9))
        .collect::<Option<Vec<bool>>>()
        .map(|v| v.into_iter().filter(|&x| x).count());
    let bound_exceedance_rate = bound_exceedances.map(|e| e as f64 / kept.len().max(1) as f64);
    let exclusion_ok = excluded as f64 <= 0.01 * trials.len() as f64;
    DecompositionSummary {
        family: cfg.family,
        trials: trials.len(),
        excluded,
        term2_violations,
        covered: covered.len(),
        term1_violations_when_covered: covered.iter().filter(|t| t.term1 > tol).count(),
        bound_exceedances,
        bound_exceedance_rate,
        delta: cfg.delta,
        passed: exclusion_ok && term2_violations == 0,
    }
}
