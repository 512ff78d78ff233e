//! Gaussian kernels, Gram matrices and kernel mean embedding arithmetic.
//!
//! An embedding `mu = sum_j w_j k(c_j, .)` is stored as centers plus weights;
//! inner products between embeddings reduce to `w^T K v` through the
//! reproducing property, so MMD and RKHS norms are finite quadratic forms.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DroError, Result};
use crate::sample::{DistributionSpec, SampleSet};

/// `k(z, z') = exp(-||z - z'||^2 / sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params")]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DroError::Validation(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        Ok(Self::Gaussian { sigma })
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma,
        }
    }

    #[inline]
    pub fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        let Self::Gaussian { sigma } = *self;
        let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (sigma * sigma)).exp()
    }

    #[inline]
    pub fn eval_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        let Self::Gaussian { sigma } = *self;
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (sigma * sigma)).exp()
    }

    /// `sup_z sqrt(k(z, z))`; exactly 1 for the Gaussian family.
    pub fn sup_bound(&self) -> f64 {
        1.0
    }
}

/// Kernel evaluated between two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
}

impl GramMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Debug export, one row per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub fn gram(kernel: &KernelSpec, a: &SampleSet, b: &SampleSet) -> Result<GramMatrix> {
    Ok(GramMatrix { values: gram_points(kernel, a.data().view(), b.data().view())? })
}

pub(crate) fn gram_points(kernel: &KernelSpec, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dim(a.ncols(), b.ncols())?;
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| kernel.eval(a.row(i), b.row(j))))
}

/// Symmetric Gram of one point set, filling the upper triangle once.
pub(crate) fn gram_symmetric(kernel: &KernelSpec, a: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in 0..i {
            let v = kernel.eval(a.row(i), a.row(j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Median of the pairwise distances `{||z_i - z_j|| : i < j}`; lower middle for even counts.
pub fn median_heuristic(a: &SampleSet) -> Result<f64> {
    let n = a.n();
    if n < 2 {
        return Err(DroError::Validation("median heuristic needs at least two points".into()));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = a.row(i).iter().zip(a.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            dists.push(d2.sqrt());
        }
    }
    let mid = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let sigma = *median;
    if sigma <= 0.0 {
        return Err(DroError::Validation("median pairwise distance is zero; kernel would be degenerate".into()));
    }
    Ok(sigma)
}

/// Finite kernel expansion `sum_j w_j k(c_j, .)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeExpansion {
    #[serde(with = "crate::serde_matrix")]
    pub centers: Array2<f64>,
    pub weights: Vec<f64>,
}

impl KmeExpansion {
    pub fn new(centers: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        check_dim(centers.nrows(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(DroError::Validation("expansion weights must be finite".into()));
        }
        Ok(Self { centers, weights })
    }

    /// Embedding of the empirical distribution of `s`.
    pub fn empirical(s: &SampleSet) -> Self {
        let n = s.n();
        Self { centers: s.data().clone(), weights: vec![1.0 / n as f64; n] }
    }

    /// Embedding of a point mass.
    pub fn dirac(point: &[f64]) -> Self {
        Self {
            centers: Array2::from_shape_vec((1, point.len()), point.to_vec()).expect("row"),
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Evaluates the expansion as a function at `z`.
    pub fn eval(&self, kernel: &KernelSpec, z: &[f64]) -> f64 {
        self.centers
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(c, w)| w * kernel.eval_slices(c.as_slice().expect("row-major"), z))
            .sum()
    }
}

fn bilinear(kernel: &KernelSpec, a: &KmeExpansion, b: &KmeExpansion) -> f64 {
    let mut acc = 0.0;
    for (ca, wa) in a.centers.rows().into_iter().zip(&a.weights) {
        let mut row = 0.0;
        for (cb, wb) in b.centers.rows().into_iter().zip(&b.weights) {
            row += wb * kernel.eval(ca, cb);
        }
        acc += wa * row;
    }
    acc
}

/// `||mu_P - mu_Q||_H`, clamped at zero against round-off.
pub fn mmd(kernel: &KernelSpec, p: &KmeExpansion, q: &KmeExpansion) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let sq = bilinear(kernel, p, p) + bilinear(kernel, q, q) - 2.0 * bilinear(kernel, p, q);
    Ok(sq.max(0.0).sqrt())
}

/// `sqrt(c^T K c)` for an expansion with coefficients `c`.
pub fn rkhs_norm(kernel: &KernelSpec, expansion: &KmeExpansion) -> f64 {
    bilinear(kernel, expansion, expansion).max(0.0).sqrt()
}

/// Exact `||mu_Phat - mu_P||_H` for `P` uniform on a box and a Gaussian kernel.
///
/// The three expectations factor over coordinates; each one-dimensional
/// integral of `exp(-(x - y)^2 / sigma^2)` has a closed form in `erf`.
pub fn population_mmd_to_empirical(kernel: &KernelSpec, truth: &DistributionSpec, s: &SampleSet) -> Result<f64> {
    let DistributionSpec::UniformBox { lo, hi } = truth else {
        return Err(DroError::Capability("population MMD is only available for uniform boxes".into()));
    };
    check_dim(lo.len(), s.dim())?;
    let sigma = kernel.sigma();
    let n = s.n() as f64;

    let pop_pop: f64 = lo.iter().zip(hi).map(|(&a, &b)| box_pair_mean(a, b, sigma)).product();

    let mut pop_emp = 0.0;
    for row in s.data().rows() {
        let mut prod = 1.0;
        for (k, &c) in row.iter().enumerate() {
            prod *= box_point_mean(lo[k], hi[k], c, sigma);
        }
        pop_emp += prod;
    }
    pop_emp /= n;

    let k = gram_symmetric(kernel, s.data().view());
    let emp_emp = k.sum() / (n * n);

    Ok((pop_pop - 2.0 * pop_emp + emp_emp).max(0.0).sqrt())
}

/// `E exp(-(x - c)^2 / sigma^2)` for `x ~ U[a, b]`.
fn box_point_mean(a: f64, b: f64, c: f64, sigma: f64) -> f64 {
    let half_sqrt_pi = 0.5 * std::f64::consts::PI.sqrt();
    sigma * half_sqrt_pi * (libm::erf((b - c) / sigma) - libm::erf((a - c) / sigma)) / (b - a)
}

/// `E exp(-(x - y)^2 / sigma^2)` for independent `x, y ~ U[a, b]`.
fn box_pair_mean(a: f64, b: f64, sigma: f64) -> f64 {
    let len = b - a;
    let r = len / sigma;
    let half_sqrt_pi = 0.5 * std::f64::consts::PI.sqrt();
    // difference t = x - y has triangular density (len - |t|) / len^2
    let first = len * sigma * half_sqrt_pi * libm::erf(r);
    let second = 0.5 * sigma * sigma * (-libm::expm1(-r * r));
    2.0 * (first - second) / (len * len)
}
