//! Sample-space distributions and reproducible iid sampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DroError, Result};
use crate::rng::RngStream;

/// Generating distribution of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params")]
pub enum DistributionSpec {
    /// Product of uniforms on `[lo_k, hi_k]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Finitely supported distribution; rows of `points` carry `probs`.
    DiscreteSupport {
        #[serde(with = "crate::serde_matrix")]
        points: Array2<f64>,
        probs: Vec<f64>,
    },
    /// Training distribution used for sampling, test distribution used for evaluation.
    ShiftedPair {
        train: Box<DistributionSpec>,
        test: Box<DistributionSpec>,
    },
}

impl DistributionSpec {
    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let spec = Self::UniformBox { lo, hi };
        spec.validate()?;
        Ok(spec)
    }

    /// `Unif[-b, b]^d`.
    pub fn symmetric_box(d: usize, b: f64) -> Result<Self> {
        Self::uniform_box(vec![-b; d], vec![b; d])
    }

    pub fn discrete(points: Array2<f64>, probs: Vec<f64>) -> Result<Self> {
        let spec = Self::DiscreteSupport { points, probs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn shifted(train: DistributionSpec, test: DistributionSpec) -> Result<Self> {
        let spec = Self::ShiftedPair { train: Box::new(train), test: Box::new(test) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lo, .. } => lo.len(),
            Self::DiscreteSupport { points, .. } => points.ncols(),
            Self::ShiftedPair { train, .. } => train.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::UniformBox { lo, hi } => {
                if lo.is_empty() {
                    return Err(DroError::Validation("box must have dimension >= 1".into()));
                }
                check_dim(lo.len(), hi.len())?;
                for (k, (a, b)) in lo.iter().zip(hi).enumerate() {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(DroError::Validation(format!(
                            "box coordinate {k}: need finite lo < hi, got [{a}, {b}]"
                        )));
                    }
                }
                Ok(())
            }
            Self::DiscreteSupport { points, probs } => {
                validate_discrete(points, probs)
            }
            Self::ShiftedPair { train, test } => {
                train.validate()?;
                test.validate()?;
                if matches!(**train, Self::ShiftedPair { .. }) || matches!(**test, Self::ShiftedPair { .. }) {
                    return Err(DroError::Validation("nested shifted pairs are not supported".into()));
                }
                check_dim(train.dim(), test.dim())
            }
        }
    }

    /// Mean vector; for a shifted pair this is the mean of the test distribution.
    pub fn mean(&self) -> Array1<f64> {
        match self {
            Self::UniformBox { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            Self::DiscreteSupport { points, probs } => {
                let mut m = Array1::zeros(points.ncols());
                for (row, &p) in points.rows().into_iter().zip(probs) {
                    m.scaled_add(p, &row);
                }
                m
            }
            Self::ShiftedPair { test, .. } => test.mean(),
        }
    }

    /// Distribution the data are drawn from.
    pub fn sampling(&self) -> &DistributionSpec {
        match self {
            Self::ShiftedPair { train, .. } => train.sampling(),
            other => other,
        }
    }

    /// Distribution the risk is evaluated under.
    pub fn evaluation(&self) -> &DistributionSpec {
        match self {
            Self::ShiftedPair { test, .. } => test.evaluation(),
            other => other,
        }
    }

    /// Smallest axis-aligned box containing the support (both halves of a shifted pair).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::UniformBox { lo, hi } => (lo.clone(), hi.clone()),
            Self::DiscreteSupport { points, .. } => {
                let d = points.ncols();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for row in points.rows() {
                    for k in 0..d {
                        lo[k] = lo[k].min(row[k]);
                        hi[k] = hi[k].max(row[k]);
                    }
                }
                (lo, hi)
            }
            Self::ShiftedPair { train, test } => {
                let (l1, h1) = train.bounding_box();
                let (l2, h2) = test.bounding_box();
                (
                    l1.iter().zip(&l2).map(|(a, b)| a.min(*b)).collect(),
                    h1.iter().zip(&h2).map(|(a, b)| a.max(*b)).collect(),
                )
            }
        }
    }
}

pub(crate) fn validate_discrete(points: &Array2<f64>, probs: &[f64]) -> Result<()> {
    if points.nrows() == 0 || points.ncols() == 0 {
        return Err(DroError::Validation("discrete support needs m >= 1 points of dimension >= 1".into()));
    }
    check_dim(points.nrows(), probs.len())?;
    if points.iter().any(|x| !x.is_finite()) {
        return Err(DroError::Validation("support points must be finite".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(DroError::Validation("probabilities must be finite and nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(DroError::Validation(format!("probabilities sum to {total}, not 1")));
    }
    for i in 0..points.nrows() {
        for j in 0..i {
            if points.row(i) == points.row(j) {
                return Err(DroError::Validation(format!("support points {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// Where a sample set came from, enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: DistributionSpec,
    pub rng: RngStream,
}

/// An n x d matrix of iid draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    #[serde(with = "crate::serde_matrix")]
    data: Array2<f64>,
    provenance: Option<Provenance>,
}

impl SampleSet {
    /// Wraps user-supplied points (no provenance).
    pub fn from_points(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(DroError::Validation("sample set needs n >= 1 and d >= 1".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(DroError::Validation("sample entries must be finite".into()));
        }
        Ok(Self { data, provenance: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_points(crate::serde_matrix::rows_to_matrix(rows).map_err(DroError::Validation)?)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn mean(&self) -> Array1<f64> {
        self.data.mean_axis(ndarray::Axis(0)).expect("n >= 1")
    }
}

/// Draws `n` iid rows from `spec` (the training half of a shifted pair).
pub fn sample(spec: &DistributionSpec, n: usize, rng: RngStream) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(DroError::Validation("n must be >= 1".into()));
    }
    let mut gen = rng.rng();
    let source = spec.sampling();
    let d = source.dim();
    let mut data = Array2::zeros((n, d));
    match source {
        DistributionSpec::UniformBox { lo, hi } => {
            for mut row in data.rows_mut() {
                for k in 0..d {
                    row[k] = lo[k] + (hi[k] - lo[k]) * gen.random::<f64>();
                }
            }
        }
        DistributionSpec::DiscreteSupport { points, probs } => {
            let cdf: Vec<f64> = probs
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            for mut row in data.rows_mut() {
                let u: f64 = gen.random::<f64>() * cdf[cdf.len() - 1];
                let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
                row.assign(&points.row(idx));
            }
        }
        DistributionSpec::ShiftedPair { .. } => unreachable!("sampling() strips shifted pairs"),
    }
    Ok(SampleSet { data, provenance: Some(Provenance { source: spec.clone(), rng }) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_sampling_is_deterministic() {
        let spec = DistributionSpec::uniform_box(vec![-1.0], vec![1.0]).unwrap();
        let a = sample(&spec, 3, RngStream::new(42)).unwrap();
        let b = sample(&spec, 3, RngStream::new(42)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data().dim(), (3, 1));
        assert!(a.data().iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn degenerate_discrete_hits_single_atom() {
        let spec = DistributionSpec::discrete(array![[0.0], [1.0]], vec![1.0, 0.0]).unwrap();
        let s = sample(&spec, 5, RngStream::new(1)).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_mean_clt_band() {
        let spec = DistributionSpec::symmetric_box(5, 100.0).unwrap();
        let s = sample(&spec, 10_000, RngStream::new(9)).unwrap();
        // sd of the mean is (100/sqrt 3)/100; allow three of them
        let band = 3.0 * (100.0 / 3f64.sqrt()) / 100.0;
        for m in s.mean().iter() {
            assert!(m.abs() <= band, "coordinate mean {m} outside +-{band}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DistributionSpec::uniform_box(vec![1.0], vec![1.0]).is_err());
        assert!(DistributionSpec::uniform_box(vec![2.0], vec![1.0]).is_err());
        assert!(DistributionSpec::discrete(array![[0.0], [1.0]], vec![0.5, 0.6]).is_err());
        assert!(DistributionSpec::discrete(array![[0.0], [1.0]], vec![-0.5, 1.5]).is_err());
        assert!(DistributionSpec::discrete(array![[0.0], [0.0]], vec![0.5, 0.5]).is_err());
        let bad = DistributionSpec::UniformBox { lo: vec![0.0], hi: vec![0.0] };
        assert!(sample(&bad, 2, RngStream::new(0)).is_err());
        let ok = DistributionSpec::symmetric_box(1, 1.0).unwrap();
        assert!(sample(&ok, 0, RngStream::new(0)).is_err());
    }

    #[test]
    fn discrete_frequencies_track_probs() {
        let spec = DistributionSpec::discrete(array![[0.0], [1.0], [2.0]], vec![0.2, 0.3, 0.5]).unwrap();
        let s = sample(&spec, 20_000, RngStream::new(3)).unwrap();
        let mut counts = [0usize; 3];
        for x in s.data().iter() {
            counts[*x as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let f = *c as f64 / 20_000.0;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / 20_000.0f64).sqrt());
        }
    }

    #[test]
    fn json_schema_round_trip() {
        let spec = DistributionSpec::shifted(
            DistributionSpec::symmetric_box(2, 1.0).unwrap(),
            DistributionSpec::discrete(array![[0.0, 1.0], [1.0, 0.0]], vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"variant\":\"ShiftedPair\""));
        assert!(text.contains("\"params\""));
        assert_eq!(DistributionSpec::from_json(&text).unwrap(), spec);
        let text = r#"{"variant":"UniformBox","params":{"lo":[1.0],"hi":[0.0]}}"#;
        assert!(DistributionSpec::from_json(text).is_err());
    }
}
