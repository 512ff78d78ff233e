//! JSON problem files for the `solve` and `worst-case` commands.
//!
//! ```json
//! {
//!   "loss": {"variant": "QuadLinear", "params": {"v": [0.5, 0.5]}},
//!   "family": "mmd",
//!   "sigma": null,
//!   "data": [[0.1, -0.3], [0.4, 0.2]],
//!   "eta": 0.2,
//!   "bounds": {"variant": "UniformBox", "params": {"lo": [-1, -1], "hi": [1, 1]}},
//!   "theta": [0.5, 0.5]
//! }
//! ```
//!
//! Instead of `data`, a `sample` object `{"spec": ..., "n": ...}` draws the
//! data from a distribution with the command's seed. `probs` turns the rows of
//! `data` into a weighted discrete center. A missing `sigma` selects the
//! median heuristic.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distances::{DiscreteDist, PhiFamily};
use crate::error::{DroError, Result};
use crate::kernels::{median_heuristic, KernelSpec};
use crate::loss::{LossJson, LossModel};
use crate::rng::{purpose, RngStream};
use crate::robustify::{worst_case, AmbiguityFamily, AmbiguitySet, Center, SolverConfig, WorstCaseReport};
use crate::sample::{sample, DistributionSpec, SampleSet};
use crate::solve::{dro_solve, erm_solve, Method, SolveReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRequest {
    pub spec: DistributionSpec,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub loss: LossJson,
    /// `mmd`, `w1`, `chi2` or `kl`.
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub data: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sample: Option<SampleRequest>,
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub bounds: Option<DistributionSpec>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn loss(&self) -> Result<LossModel> {
        LossModel::try_from(self.loss.clone())
    }

    pub fn data(&self, seed: u64) -> Result<SampleSet> {
        match (&self.data, &self.sample) {
            (Some(rows), None) => SampleSet::from_rows(rows),
            (None, Some(req)) => sample(&req.spec, req.n, RngStream::new(seed).substream(purpose::DATA)),
            _ => Err(DroError::Validation("give exactly one of `data` and `sample`".into())),
        }
    }

    fn center(&self, data: SampleSet) -> Result<Center> {
        match &self.probs {
            None => Ok(Center::Empirical(data)),
            Some(p) => Ok(Center::Discrete(DiscreteDist::new(data.data().clone(), p.clone())?)),
        }
    }

    /// The ambiguity set for `family` (falling back to the file's `family`).
    pub fn ambiguity_set(&self, family: Option<&str>, seed: u64) -> Result<AmbiguitySet> {
        let name = family
            .or(self.family.as_deref())
            .ok_or_else(|| DroError::Validation("the problem names no ambiguity family".into()))?;
        let data = self.data(seed)?;
        let family = match name {
            "mmd" => {
                let sigma = match self.sigma {
                    Some(s) => s,
                    None => median_heuristic(&data)?,
                };
                AmbiguityFamily::Mmd { kernel: KernelSpec::gaussian(sigma)? }
            }
            "w1" => AmbiguityFamily::W1,
            "chi2" => AmbiguityFamily::Phi { family: PhiFamily::Chi2Neyman },
            "kl" => AmbiguityFamily::Phi { family: PhiFamily::Kl },
            other => return Err(DroError::Validation(format!("unknown family {other:?}"))),
        };
        AmbiguitySet::new(family, self.center(data)?, self.eta)
    }

    pub fn worst_case(&self, seed: u64) -> Result<WorstCaseReport> {
        let theta = self.theta.as_ref().ok_or_else(|| DroError::Validation("worst-case needs `theta`".into()))?;
        let set = self.ambiguity_set(None, seed)?;
        worst_case(&set, &self.loss()?, theta, self.bounds.as_ref(), &self.solver, RngStream::new(seed).substream(purpose::CONSTRAINTS))
    }

    pub fn solve(&self, method: Method, seed: u64) -> Result<SolveReport> {
        let loss = self.loss()?;
        let family = match method {
            Method::Erm => return erm_solve(&loss, &self.data(seed)?, &self.solver),
            Method::MmdDro => "mmd",
            Method::W1Dro => "w1",
            Method::Chi2Dro => "chi2",
        };
        let set = self.ambiguity_set(Some(family), seed)?;
        dro_solve(&loss, &set, self.bounds.as_ref(), &self.solver, RngStream::new(seed).substream(purpose::CONSTRAINTS))
    }
}

/// Rows of a matrix, for JSON output.
pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
