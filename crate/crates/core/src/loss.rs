//! Parametric losses `l(theta, z)` and their exact population risks.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DroError, Result};
use crate::kernels::{KernelSpec, KmeExpansion};
use crate::rng::RngStream;
use crate::sample::DistributionSpec;

type EvalFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// A user-supplied loss given by closures.
#[derive(Clone)]
pub struct CustomLoss {
    theta_dim: usize,
    eval: Arc<EvalFn>,
    grad_theta: Arc<GradFn>,
    /// Serializable description, when the loss was built from one.
    document: Option<LossDocument>,
}

impl fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoss").field("theta_dim", &self.theta_dim).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum LossKind {
    /// `l(theta, z) = 0.5 ||theta - v||^2 + z^T (theta - v)`.
    QuadLinear { v: Array1<f64> },
    Custom(CustomLoss),
}

/// Norm certificates attached to a loss.
///
/// For custom losses the certificates are taken to hold at every `theta`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_norm: Option<f64>,
    /// `l(theta, .) = sum_j coeffs_j k(centers_j, .)` for the kernel it is checked against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rkhs_expansion: Option<KmeExpansion>,
}

#[derive(Debug, Clone)]
pub struct LossModel {
    kind: LossKind,
    certificates: Certificates,
}

impl LossModel {
    pub fn quad_linear(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(DroError::Validation("v must be a nonempty finite vector".into()));
        }
        Ok(Self { kind: LossKind::QuadLinear { v: Array1::from(v) }, certificates: Certificates::default() })
    }

    pub fn custom<E, G>(theta_dim: usize, eval: E, grad_theta: G) -> Self
    where
        E: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            kind: LossKind::Custom(CustomLoss {
                theta_dim,
                eval: Arc::new(eval),
                grad_theta: Arc::new(grad_theta),
                document: None,
            }),
            certificates: Certificates::default(),
        }
    }

    /// A `theta`-independent loss equal to a kernel expansion, carrying it as RKHS certificate.
    pub fn kernel_expansion(expansion: KmeExpansion, kernel: KernelSpec) -> Self {
        let doc = LossDocument::KernelExpansion {
            centers: expansion.centers.clone(),
            coeffs: expansion.weights.clone(),
            kernel,
        };
        let e = expansion.clone();
        let mut loss = Self::custom(1, move |_, z| e.eval(&kernel, z), |_, _| vec![0.0]);
        if let LossKind::Custom(c) = &mut loss.kind {
            c.document = Some(doc);
        }
        let sup: f64 = expansion.weights.iter().map(|w| w.abs()).sum();
        loss.certificates =
            Certificates { lipschitz_z: None, sup_norm: Some(sup), rkhs_expansion: Some(expansion) };
        loss
    }

    pub fn with_certificates(mut self, certificates: Certificates) -> Self {
        self.certificates = certificates;
        self
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn certificates(&self) -> &Certificates {
        &self.certificates
    }

    pub fn theta_dim(&self) -> usize {
        match &self.kind {
            LossKind::QuadLinear { v } => v.len(),
            LossKind::Custom(c) => c.theta_dim,
        }
    }

    /// Sample-space dimension when the loss fixes it.
    pub fn z_dim(&self) -> Option<usize> {
        match &self.kind {
            LossKind::QuadLinear { v } => Some(v.len()),
            LossKind::Custom(_) => self.certificates.rkhs_expansion.as_ref().map(KmeExpansion::dim),
        }
    }

    #[inline]
    pub fn eval(&self, theta: &[f64], z: &[f64]) -> f64 {
        match &self.kind {
            LossKind::QuadLinear { v } => {
                let mut quad = 0.0;
                let mut lin = 0.0;
                for ((t, vk), zk) in theta.iter().zip(v.iter()).zip(z) {
                    let u = t - vk;
                    quad += u * u;
                    lin += zk * u;
                }
                0.5 * quad + lin
            }
            LossKind::Custom(c) => (c.eval)(theta, z),
        }
    }

    /// Adds `weight * grad_theta l(theta, z)` into `out`.
    #[inline]
    pub fn accumulate_grad(&self, theta: &[f64], z: &[f64], weight: f64, out: &mut [f64]) {
        match &self.kind {
            LossKind::QuadLinear { v } => {
                for k in 0..out.len() {
                    out[k] += weight * (theta[k] - v[k] + z[k]);
                }
            }
            LossKind::Custom(c) => {
                let g = (c.grad_theta)(theta, z);
                for (o, gk) in out.iter_mut().zip(g) {
                    *o += weight * gk;
                }
            }
        }
    }

    pub fn grad_theta(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.theta_dim()];
        self.accumulate_grad(theta, z, 1.0, &mut g);
        g
    }

    /// Lipschitz constant of `z -> l(theta, z)`; exact for the affine-in-z quadratic family.
    pub fn lipschitz_z(&self, theta: &[f64]) -> Option<f64> {
        match &self.kind {
            LossKind::QuadLinear { v } => {
                Some(theta.iter().zip(v.iter()).map(|(t, vk)| (t - vk) * (t - vk)).sum::<f64>().sqrt())
            }
            LossKind::Custom(_) => self.certificates.lipschitz_z,
        }
    }

    /// RKHS expansion of `l(theta, .)` when one is known.
    ///
    /// The quadratic family is affine in `z`, which lies outside a Gaussian RKHS
    /// unless it vanishes identically, i.e. at `theta = v`.
    pub fn rkhs_expansion_at(&self, theta: &[f64]) -> Option<KmeExpansion> {
        match &self.kind {
            LossKind::QuadLinear { v } => {
                if theta.iter().zip(v.iter()).all(|(t, vk)| t == vk) {
                    Some(KmeExpansion { centers: Array2::zeros((0, v.len())), weights: vec![] })
                } else {
                    None
                }
            }
            LossKind::Custom(_) => self.certificates.rkhs_expansion.clone(),
        }
    }

    /// Checks the RKHS certificate against `kernel` at the probe points (tolerance 1e-10).
    pub fn check_rkhs_certificate(&self, kernel: &KernelSpec, theta: &[f64], probes: &Array2<f64>) -> Result<()> {
        let Some(exp) = self.rkhs_expansion_at(theta) else {
            return Err(DroError::Validation("loss carries no RKHS expansion".into()));
        };
        for z in probes.rows() {
            let z = z.to_vec();
            let direct = self.eval(theta, &z);
            let expanded = if exp.weights.is_empty() { 0.0 } else { exp.eval(kernel, &z) };
            if (direct - expanded).abs() > 1e-10 {
                return Err(DroError::Validation(format!(
                    "RKHS certificate disagrees with the loss at {z:?}: {direct} vs {expanded}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.document()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LossJson = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    fn document(&self) -> Result<LossJson> {
        let body = match &self.kind {
            LossKind::QuadLinear { v } => LossDocument::QuadLinear { v: v.to_vec() },
            LossKind::Custom(c) => c.document.clone().ok_or_else(|| {
                DroError::Capability("closure-based custom losses cannot be serialized".into())
            })?,
        };
        Ok(LossJson { body, certificates: self.certificates.clone() })
    }
}

/// Serializable loss descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params")]
pub enum LossDocument {
    QuadLinear { v: Vec<f64> },
    /// `l(theta, z) = sum_j coeffs_j k(centers_j, z)`, independent of `theta`.
    KernelExpansion {
        #[serde(with = "crate::serde_matrix")]
        centers: Array2<f64>,
        coeffs: Vec<f64>,
        kernel: KernelSpec,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossJson {
    #[serde(flatten)]
    pub body: LossDocument,
    #[serde(default)]
    pub certificates: Certificates,
}

impl TryFrom<LossJson> for LossModel {
    type Error = DroError;

    fn try_from(doc: LossJson) -> Result<Self> {
        let model = match doc.body {
            LossDocument::QuadLinear { v } => Self::quad_linear(v)?,
            LossDocument::KernelExpansion { centers, coeffs, kernel } => {
                KernelSpec::gaussian(kernel.sigma())?;
                Self::kernel_expansion(KmeExpansion::new(centers, coeffs)?, kernel)
            }
        };
        let mut certs = doc.certificates;
        if certs.rkhs_expansion.is_none() {
            certs.rkhs_expansion = model.certificates.rkhs_expansion.clone();
        }
        if certs.sup_norm.is_none() {
            certs.sup_norm = model.certificates.sup_norm;
        }
        Ok(model.with_certificates(certs))
    }
}

/// Exact `E_P l(theta, z)`.
///
/// Shifted pairs are evaluated under their test distribution.
pub fn true_risk(loss: &LossModel, spec: &DistributionSpec, theta: &[f64]) -> Result<f64> {
    spec.validate()?;
    let spec = spec.evaluation();
    check_dim(loss.theta_dim(), theta.len())?;
    match (&loss.kind, spec) {
        (LossKind::QuadLinear { v }, _) => {
            check_dim(v.len(), spec.dim())?;
            let mean = spec.mean();
            let mut quad = 0.0;
            let mut lin = 0.0;
            for k in 0..v.len() {
                let u = theta[k] - v[k];
                quad += u * u;
                lin += mean[k] * u;
            }
            Ok(0.5 * quad + lin)
        }
        (LossKind::Custom(_), DistributionSpec::DiscreteSupport { points, probs }) => Ok(points
            .rows()
            .into_iter()
            .zip(probs)
            .map(|(z, p)| if *p == 0.0 { 0.0 } else { p * loss.eval(theta, z.as_slice().expect("row-major")) })
            .sum()),
        (LossKind::Custom(_), _) => Err(DroError::Capability(
            "exact risk of a custom loss needs a discrete distribution; use a Monte-Carlo estimate".into(),
        )),
    }
}

/// Minimizer of the true risk.
pub fn true_optimum(loss: &LossModel, spec: &DistributionSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    match &loss.kind {
        LossKind::QuadLinear { v } => {
            let mean = spec.evaluation().mean();
            check_dim(v.len(), mean.len())?;
            Ok((v - &mean).to_vec())
        }
        LossKind::Custom(_) => {
            let DistributionSpec::DiscreteSupport { points, probs } = spec.evaluation() else {
                return Err(DroError::Capability("true optimum of a custom loss needs a discrete distribution".into()));
            };
            let weights: Vec<f64> = probs.clone();
            let x0 = vec![0.0; loss.theta_dim()];
            let out = crate::solve::weighted_gradient_descent(loss, points, &weights, &x0, 1e-10, 100_000);
            Ok(out.theta)
        }
    }
}

/// `E_P l(theta) - E_P l(f*)`, never below zero.
pub fn excess_risk(loss: &LossModel, spec: &DistributionSpec, theta: &[f64]) -> Result<f64> {
    let risk = true_risk(loss, spec, theta)?;
    if let LossKind::QuadLinear { v } = &loss.kind {
        // closed form 0.5 ||theta - v + mean||^2, free of cancellation
        let mean = spec.evaluation().mean();
        return Ok(0.5 * (0..v.len()).map(|k| (theta[k] - v[k] + mean[k]).powi(2)).sum::<f64>());
    }
    let best = true_optimum(loss, spec)?;
    let best_risk = true_risk(loss, spec, &best)?.min(risk);
    Ok(risk - best_risk)
}

/// Risk value that may come from simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Standard error when `approximate`, zero otherwise.
    pub std_error: f64,
    pub approximate: bool,
}

/// Exact risk when available; otherwise a Monte-Carlo estimate with `mc_samples` draws.
pub fn risk_estimate(
    loss: &LossModel,
    spec: &DistributionSpec,
    theta: &[f64],
    mc_samples: usize,
    rng: RngStream,
) -> Result<RiskEstimate> {
    match true_risk(loss, spec, theta) {
        Ok(value) => Ok(RiskEstimate { value, std_error: 0.0, approximate: false }),
        Err(DroError::Capability(_)) => {
            let DistributionSpec::UniformBox { lo, hi } = spec.evaluation() else {
                return Err(DroError::Capability("no Monte-Carlo sampler for this distribution".into()));
            };
            let mut gen = rng.rng();
            let mut z = vec![0.0; lo.len()];
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..mc_samples.max(2) {
                for k in 0..lo.len() {
                    z[k] = lo[k] + (hi[k] - lo[k]) * gen.random::<f64>();
                }
                let x = loss.eval(theta, &z);
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let n = mc_samples.max(2) as f64;
            Ok(RiskEstimate { value: mean, std_error: (m2 / (n - 1.0) / n).sqrt(), approximate: true })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn quad_linear_value_and_zero_at_v() {
        let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(loss.eval(&[0.4, 0.7], &[1.0, -2.0]), 0.5 * 0.05 + (-0.1 - 0.4), epsilon = 1e-15);
        for z in [[3.0, -7.0], [0.0, 0.0], [100.0, 1e-3]] {
            assert_eq!(loss.eval(&[0.5, 0.5], &z), 0.0);
        }
    }

    #[test]
    fn true_risk_examples() {
        let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
        let boxed = DistributionSpec::symmetric_box(2, 7.0).unwrap();
        assert_eq!(true_risk(&loss, &boxed, &[0.5, 0.5]).unwrap(), 0.0);
        assert_abs_diff_eq!(true_risk(&loss, &boxed, &[0.4, 0.7]).unwrap(), 0.025, epsilon = 1e-15);

        let ident = LossModel::custom(1, |_, z| z[0], |_, _| vec![0.0]);
        let disc = DistributionSpec::discrete(array![[0.0], [1.0]], vec![0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(true_risk(&ident, &disc, &[0.0]).unwrap(), 0.7, epsilon = 1e-15);
        let cont = DistributionSpec::symmetric_box(1, 1.0).unwrap();
        assert!(matches!(true_risk(&ident, &cont, &[0.0]), Err(DroError::Capability(_))));
    }

    #[test]
    fn excess_risk_examples() {
        let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
        let boxed = DistributionSpec::symmetric_box(2, 1.0).unwrap();
        assert_eq!(excess_risk(&loss, &boxed, &[0.5, 0.5]).unwrap(), 0.0);
        // ERM closed form theta = v - zbar with zbar = (0.1, -0.2)
        assert_abs_diff_eq!(excess_risk(&loss, &boxed, &[0.4, 0.7]).unwrap(), 0.025, epsilon = 1e-15);
    }

    #[test]
    fn excess_risk_custom_discrete() {
        // l = (theta - z)^2, optimum at the mean 0.7, excess (theta - 0.7)^2
        let loss = LossModel::custom(1, |t, z| (t[0] - z[0]).powi(2), |t, z| vec![2.0 * (t[0] - z[0])]);
        let disc = DistributionSpec::discrete(array![[0.0], [1.0]], vec![0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(excess_risk(&loss, &disc, &[0.2]).unwrap(), 0.25, epsilon = 1e-9);
        assert!(excess_risk(&loss, &disc, &[0.7]).unwrap() >= 0.0);
    }

    #[test]
    fn shifted_pair_evaluates_under_test() {
        let loss = LossModel::quad_linear(vec![0.0]).unwrap();
        let spec = DistributionSpec::shifted(
            DistributionSpec::symmetric_box(1, 1.0).unwrap(),
            DistributionSpec::uniform_box(vec![0.0], vec![2.0]).unwrap(),
        )
        .unwrap();
        // test mean 1: risk 0.5 u^2 + u, optimum u = -1
        assert_abs_diff_eq!(true_risk(&loss, &spec, &[1.0]).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(excess_risk(&loss, &spec, &[-1.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(true_optimum(&loss, &spec).unwrap(), vec![-1.0]);
    }

    #[test]
    fn monte_carlo_fallback_is_flagged() {
        let loss = LossModel::custom(1, |_, z| z[0] * z[0], |_, _| vec![0.0]);
        let spec = DistributionSpec::symmetric_box(1, 1.0).unwrap();
        let est = risk_estimate(&loss, &spec, &[0.0], 200_000, RngStream::new(5)).unwrap();
        assert!(est.approximate);
        assert!((est.value - 1.0 / 3.0).abs() < 4.0 * est.std_error);
    }

    #[test]
    fn kernel_expansion_certificate_checks() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let exp = KmeExpansion::new(array![[0.0], [1.0]], vec![0.5, -0.25]).unwrap();
        let loss = LossModel::kernel_expansion(exp, k);
        let probes = array![[0.0], [0.3], [2.0]];
        loss.check_rkhs_certificate(&k, &[0.0], &probes).unwrap();
        let other = KernelSpec::gaussian(2.0).unwrap();
        assert!(loss.check_rkhs_certificate(&other, &[0.0], &probes).is_err());
    }

    #[test]
    fn loss_json_schema() {
        let loss = LossModel::quad_linear(vec![0.5, 1.0])
            .unwrap()
            .with_certificates(Certificates { sup_norm: Some(3.0), ..Default::default() });
        let text = loss.to_json().unwrap();
        assert!(text.contains("\"variant\":\"QuadLinear\""));
        assert!(text.contains("\"certificates\""));
        let back = LossModel::from_json(&text).unwrap();
        assert_eq!(back.certificates().sup_norm, Some(3.0));
        assert_eq!(back.eval(&[0.0, 0.0], &[1.0, 1.0]), loss.eval(&[0.0, 0.0], &[1.0, 1.0]));

        let closure = LossModel::custom(1, |_, _| 0.0, |_, _| vec![0.0]);
        assert!(closure.to_json().is_err());

        let text = r#"{"variant":"KernelExpansion","params":{"centers":[[0.0]],"coeffs":[2.0],"kernel":{"variant":"Gaussian","params":{"sigma":1.0}}}}"#;
        let loss = LossModel::from_json(text).unwrap();
        assert_eq!(loss.eval(&[0.0], &[0.0]), 2.0);
        assert!(loss.certificates().rkhs_expansion.is_some());
    }
}
