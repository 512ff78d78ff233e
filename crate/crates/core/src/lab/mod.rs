//! Excess-risk experiments on the quadratic loss with linear perturbation
//! `l(theta, z) = 1/2 ||theta - v||^2 + z^T (theta - v)`, with CSV and SVG reporting.
//!
//! Every `(trial, n)` pair draws its own `v ~ Unif[1/2, 1]^d` and data set;
//! all methods and radii of that pair share them. Randomness comes from
//! counter-based streams keyed by trial, so results do not depend on thread
//! scheduling.

mod assertions;
pub mod problem;
mod summary;
mod svg;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{DiscreteDist, PhiFamily};
use crate::error::{DroError, Result};
use crate::kernels::{median_heuristic, KernelSpec};
use crate::loss::{excess_risk, LossModel};
use crate::rng::{purpose, RngStream};
use crate::robustify::{AmbiguitySet, Center, Oracle, SolverConfig};
use crate::sample::{sample, DistributionSpec, SampleSet};
use crate::solve::{erm_solve, DroPath, Method, SolveReport};

pub use assertions::{check_assertions, Assertion, AssertionOutcome};
pub use summary::{quantile, summarize, SummaryRow};
pub use svg::{render_lines, Axes, XAxis};

/// Radius grid used for tuning.
pub const DEFAULT_ETA_GRID: [f64; 13] = [0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub const CSV_HEADER: [&str; 10] = ["trial_id", "method", "n", "eta", "B", "d", "seed", "excess_risk", "converged", "wallclock_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    /// Half-width of the data box `[-B, B]^d`.
    #[serde(rename = "B")]
    pub b: f64,
    pub n_grid: Vec<usize>,
    pub eta_grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub delta: f64,
    /// A `ShiftedPair`: data come from `train`, excess risk is measured under `test`.
    pub shift: Option<DistributionSpec>,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Record wall-clock time per solve; off by default so outputs are byte-stable.
    pub timing: bool,
    pub assertions: Vec<Assertion>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 5,
            b: 100.0,
            n_grid: vec![50, 100, 150, 200],
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            methods: vec![Method::Erm, Method::MmdDro],
            trials: 100,
            delta: 0.05,
            shift: None,
            seed: 0,
            solver: experiment_solver(),
            timing: false,
            assertions: Vec::new(),
        }
    }
}

/// Oracle settings used by experiments: a looser duality-gap target than the
/// library default, which the sharp minimum of the experiment loss tolerates.
pub fn experiment_solver() -> SolverConfig {
    SolverConfig { value_tol: 1e-4, ..SolverConfig::default() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DroError::Validation(m.into()));
        if self.d == 0 {
            return fail("d must be >= 1");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return fail("B must be positive");
        }
        if self.n_grid.is_empty() || self.eta_grid.is_empty() || self.methods.is_empty() {
            return fail("n grid, eta grid and methods must be nonempty");
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return fail("every n must be >= 2 (the median heuristic needs a pair)");
        }
        if self.eta_grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return fail("radii must be finite and >= 0");
        }
        if self.trials < 10 {
            return fail("trials must be >= 10");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must lie in (0, 1)");
        }
        if let Some(shift) = &self.shift {
            if !matches!(shift, DistributionSpec::ShiftedPair { .. }) {
                return fail("shift must be a ShiftedPair");
            }
            shift.validate()?;
            if shift.dim() != self.d {
                return fail("shift dimension differs from d");
            }
        }
        self.solver.validate()
    }

    /// The data distribution, with its evaluation side.
    pub fn truth(&self) -> Result<DistributionSpec> {
        match &self.shift {
            Some(s) => Ok(s.clone()),
            None => DistributionSpec::symmetric_box(self.d, self.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub method: Method,
    pub n: usize,
    /// Radius; 0 for ERM.
    pub eta: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub d: usize,
    pub seed: u64,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub excess_risk: f64,
    pub converged: bool,
    pub wallclock_s: Option<f64>,
    pub error: Option<String>,
}

/// Runs every `(trial, n, method, eta)` cell; records come back ordered by
/// trial, then `n`, then method (config order), then radius.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let units: Vec<(usize, usize)> = (0..cfg.trials).flat_map(|t| cfg.n_grid.iter().map(move |&n| (t, n))).collect();
    let records: Vec<Vec<TrialRecord>> = units.par_iter().map(|&(t, n)| run_unit(cfg, &truth, t, n)).collect::<Result<_>>()?;
    Ok(records.into_iter().flatten().collect())
}

fn run_unit(cfg: &ExperimentConfig, truth: &DistributionSpec, trial: usize, n: usize) -> Result<Vec<TrialRecord>> {
    let rs = RngStream::new(cfg.seed).substream(trial as u64);
    let v_spec = DistributionSpec::uniform_box(vec![0.5; cfg.d], vec![1.0; cfg.d])?;
    let v = sample(&v_spec, 1, rs.substream(purpose::LOSS_PARAMS))?.row(0).to_vec();
    let data = sample(truth.sampling(), n, rs.path(&[n as u64, purpose::DATA]))?;
    let loss = LossModel::quad_linear(v.clone())?;
    let mut etas = cfg.eta_grid.clone();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let base = TrialRecord {
        trial_id: trial,
        method: Method::Erm,
        n,
        eta: 0.0,
        b: cfg.b,
        d: cfg.d,
        seed: cfg.seed,
        v: v.clone(),
        theta: Vec::new(),
        excess_risk: f64::NAN,
        converged: false,
        wallclock_s: None,
        error: None,
    };
    let finish = |method: Method, eta: f64, outcome: Result<SolveReport>, elapsed: f64| -> TrialRecord {
        let mut rec = TrialRecord { method, eta, ..base.clone() };
        match outcome.and_then(|r| excess_risk(&loss, truth, &r.theta).map(|e| (r, e))) {
            Ok((report, excess)) => {
                rec.theta = report.theta;
                rec.excess_risk = excess;
                rec.converged = report.converged;
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        if cfg.timing {
            rec.wallclock_s = Some(elapsed);
        }
        rec
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        if method == Method::Erm {
            let start = Instant::now();
            let report = erm_solve(&loss, &data, &cfg.solver);
            out.push(finish(method, 0.0, report, start.elapsed().as_secs_f64()));
            continue;
        }
        let start = Instant::now();
        let oracle = dro_oracle(cfg, method, &loss, &data, truth, etas[0], rs.path(&[n as u64, purpose::CONSTRAINTS]));
        let setup = start.elapsed().as_secs_f64();
        match oracle {
            Err(e) => {
                for &eta in &etas {
                    out.push(finish(method, eta, Err(DroError::Solver(e.to_string())), 0.0));
                }
            }
            Ok(mut oracle) => {
                let mut path = DroPath::from_erm(&oracle, &cfg.solver)?;
                for (k, &eta) in etas.iter().enumerate() {
                    let start = Instant::now();
                    let report = oracle.set_radius(eta).and_then(|_| path.solve(&mut oracle, &cfg.solver));
                    let spent = start.elapsed().as_secs_f64() + if k == 0 { setup } else { 0.0 };
                    if report.is_err() {
                        // the bundle may be in an unusable state; restart the path
                        path = DroPath::from_erm(&oracle, &cfg.solver)?;
                    }
                    out.push(finish(method, eta, report, spent));
                }
            }
        }
    }
    Ok(out)
}

fn dro_oracle(
    cfg: &ExperimentConfig,
    method: Method,
    loss: &LossModel,
    data: &SampleSet,
    truth: &DistributionSpec,
    eta: f64,
    rng: RngStream,
) -> Result<Oracle> {
    let bounds = bounding_spec(truth)?;
    let set = match method {
        Method::MmdDro => AmbiguitySet::mmd(KernelSpec::gaussian(median_heuristic(data)?)?, data.clone(), eta)?,
        Method::W1Dro => AmbiguitySet::w1(data.clone(), eta)?,
        // the chi-square ball lives on the empirical support
        Method::Chi2Dro => AmbiguitySet::phi(PhiFamily::Chi2Neyman, Center::Discrete(DiscreteDist::empirical(data)), eta)?,
        Method::Erm => unreachable!("ERM has no oracle"),
    };
    Oracle::new(&set, loss, Some(&bounds), &cfg.solver, rng)
}

/// Box containing the support of both sides of the truth.
fn bounding_spec(truth: &DistributionSpec) -> Result<DistributionSpec> {
    let (lo, hi) = truth.bounding_box();
    DistributionSpec::uniform_box(lo, hi)
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

/// Writes the fixed-schema records table.
pub fn write_records_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.trial_id.to_string(),
            r.method.to_string(),
            r.n.to_string(),
            fmt_f64(r.eta),
            fmt_f64(r.b),
            r.d.to_string(),
            r.seed.to_string(),
            fmt_f64(r.excess_risk),
            r.converged.to_string(),
            r.wallclock_s.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "n",
        "eta",
        "B",
        "trials",
        "mean",
        "median",
        "q1",
        "q3",
        "convergence_rate",
        "failed",
        "best_eta_oracle_tuned",
    ])?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.n.to_string(),
            fmt_f64(r.eta),
            fmt_f64(r.b),
            r.trials.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.median),
            fmt_f64(r.q1),
            fmt_f64(r.q3),
            fmt_f64(r.convergence_rate),
            r.failed.to_string(),
            r.best_eta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything an experiment run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub assertions: Vec<AssertionOutcome>,
}

impl ExperimentOutput {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Runs, summarizes and checks the configured assertions.
pub fn run_and_summarize(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let records = run_experiment(cfg)?;
    let summary = summarize(&records)?;
    let assertions = check_assertions(&cfg.assertions, &records, &summary);
    Ok(ExperimentOutput { records, summary, assertions })
}

/// Writes `records.csv`, `summary.csv`, `fig_n.svg`, `fig_eta.svg` and
/// `metadata.json` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records_csv(&out.records, std::fs::File::create(dir.join("records.csv"))?)?;
    write_summary_csv(&out.summary, std::fs::File::create(dir.join("summary.csv"))?)?;
    let fig_n = render_lines(&out.summary, &Axes::new(XAxis::N))?;
    std::fs::write(dir.join("fig_n.svg"), fig_n)?;
    let fig_eta = render_lines(&out.summary, &Axes::new(XAxis::Eta))?;
    std::fs::write(dir.join("fig_eta.svg"), fig_eta)?;
    let meta = serde_json::json!({
        "config": cfg,
        "notes": [
            "best_eta_oracle_tuned marks the radius with the smallest mean excess risk on the true distribution (oracle-tuned)",
            "chi2-dro reweights the empirical support only",
            "ERM rows carry eta = 0",
        ],
        "assertions": out.assertions,
    });
    std::fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
