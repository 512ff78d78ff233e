use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use dro_lab::calibration::{calibrate, CalibrationInput};
use dro_lab::lab::problem::ProblemSpec;
use dro_lab::lab::{run_and_summarize, write_outputs, ExperimentConfig};
use dro_lab::solve::Method;
use dro_lab::verifier::{coverage_chi2, coverage_mmd, run_decomposition, CoverageReport, DecompositionConfig, Family};
use dro_lab::{DiscreteDist, DistributionSpec, KernelSpec, Result, RngStream};

#[derive(Parser)]
#[command(name = "dro-lab", version, about = "Distributionally robust optimization laboratory")]
struct Cli {
    /// Seed overriding the one in config or problem files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trial-parallel commands.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an excess-risk experiment and write CSV/SVG outputs.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a calibrated ball size as JSON.
    Calibrate(CalibrateArgs),
    /// Solve a JSON problem with ERM or a DRO method.
    Solve {
        #[arg(long)]
        method: String,
        #[arg(long)]
        problem: PathBuf,
    },
    /// Evaluate the worst-case expectation of a JSON problem.
    WorstCase {
        #[arg(long)]
        problem: PathBuf,
    },
    /// Monte-Carlo verification runs.
    #[command(subcommand)]
    Verify(Verify),
}

#[derive(Args)]
struct CalibrateArgs {
    /// mmd, w1 or chi2.
    #[arg(long)]
    family: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    k_bound: f64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long)]
    shift: Option<f64>,
}

#[derive(Subcommand)]
enum Verify {
    /// Coverage of the calibrated MMD ball for uniform box data.
    CoverageMmd {
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long = "B", default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage of the calibrated chi-square ball for a discrete truth on 0, 1, ..., m-1.
    CoverageChi2 {
        /// Comma-separated probabilities.
        #[arg(long, value_delimiter = ',')]
        probs: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-term excess-risk decomposition over repeated trials.
    Decomposition {
        /// JSON decomposition config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// mmd, w1 or chi2.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Experiment { config, out } => {
            let mut cfg = ExperimentConfig::from_json(&read(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = run_and_summarize(&cfg)?;
            write_outputs(&cfg, &result, &out)?;
            for a in &result.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, serde_json::to_string(&a.assertion)?, a.detail);
            }
            Ok(result.all_passed())
        }
        Command::Calibrate(a) => {
            let mut input = CalibrationInput::new(a.n, a.delta).with_dim(a.d).with_kernel_bound(a.k_bound).with_w1_constants(a.c1, a.c2);
            if let Some(m) = a.m {
                input = input.with_support(m);
            }
            if let Some(s) = a.shift {
                input = input.with_shift(s);
            }
            print_json(&calibrate(&a.family, &input)?)?;
            Ok(true)
        }
        Command::Solve { method, problem } => {
            let spec = ProblemSpec::from_json(&read(&problem)?)?;
            let report = spec.solve(Method::parse(&method)?, seed.unwrap_or(0))?;
            print_json(&report)?;
            Ok(report.converged)
        }
        Command::WorstCase { problem } => {
            let spec = ProblemSpec::from_json(&read(&problem)?)?;
            let report = spec.worst_case(seed.unwrap_or(0))?;
            print_json(&report)?;
            Ok(report.tolerance_met)
        }
        Command::Verify(v) => verify(v, seed),
    }
}

fn write_coverage(report: &CoverageReport, out: Option<&Path>) -> Result<()> {
    print_json(report)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        w.write_record(["trials", "hits", "rate", "target", "ci_halfwidth", "eta", "below_regime"])?;
        w.write_record([
            report.trials.to_string(),
            report.hits.to_string(),
            report.rate.to_string(),
            report.target.to_string(),
            report.ci_halfwidth.to_string(),
            report.eta.to_string(),
            report.below_regime.to_string(),
        ])?;
        w.flush()?;
    }
    Ok(())
}

fn verify(v: Verify, seed: Option<u64>) -> Result<bool> {
    match v {
        Verify::CoverageMmd { d, b, sigma, n, delta, trials, out } => {
            let truth = DistributionSpec::symmetric_box(d, b)?;
            let report = coverage_mmd(&truth, &KernelSpec::gaussian(sigma)?, n, delta, trials, RngStream::new(seed.unwrap_or(0)))?;
            write_coverage(&report, out.as_deref())?;
            Ok(report.passed())
        }
        Verify::CoverageChi2 { probs, n, delta, trials, out } => {
            let points = Array2::from_shape_fn((probs.len(), 1), |(i, _)| i as f64);
            let dist = DiscreteDist::new(points, probs)?;
            let report = coverage_chi2(&dist, n, delta, trials, RngStream::new(seed.unwrap_or(0)))?;
            write_coverage(&report, out.as_deref())?;
            Ok(report.passed())
        }
        Verify::Decomposition { config, family, n, trials, eta, out } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str::<DecompositionConfig>(&read(&p)?)?,
                None => DecompositionConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = family {
                cfg.family = serde_json::from_value::<Family>(serde_json::Value::String(f))?;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if eta.is_some() {
                cfg.eta = eta;
            }
            let (rows, summary) = run_decomposition(&cfg)?;
            print_json(&summary)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
                w.write_record(["trial_id", "family", "eta", "term1", "term2", "term3", "excess", "covered", "converged"])?;
                for r in &rows {
                    w.write_record([
                        r.trial_id.to_string(),
                        r.family.as_str().to_string(),
                        r.eta.to_string(),
                        r.term1.to_string(),
                        r.term2.to_string(),
                        r.term3.to_string(),
                        r.excess.to_string(),
                        r.covered.map(|c| c.to_string()).unwrap_or_default(),
                        r.converged.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            Ok(summary.passed)
        }
    }
}
