//! Worst-case expected loss over MMD, W1, chi-square and KL balls around the
//! same sample, with the certificate each oracle returns.

use dro_lab::robustify::{worst_case, Center, Certificate};
use dro_lab::{sample, AmbiguitySet, DiscreteDist, DistributionSpec, KernelSpec, LossModel, PhiFamily, RngStream, SolverConfig};

fn main() -> dro_lab::Result<()> {
    let support = DistributionSpec::symmetric_box(2, 1.0)?;
    let data = sample(&support, 30, RngStream::new(7))?;
    let loss = LossModel::quad_linear(vec![0.7, 0.6])?;
    let theta = [0.2, 0.9];
    let cfg = SolverConfig::default();
    let eta = 0.2;

    let center = Center::Discrete(DiscreteDist::empirical(&data));
    let sets = [
        ("mmd", AmbiguitySet::mmd(KernelSpec::gaussian(1.0)?, data.clone(), eta)?),
        ("w1", AmbiguitySet::w1(data.clone(), eta)?),
        ("chi2", AmbiguitySet::phi(PhiFamily::Chi2Neyman, center.clone(), eta)?),
        ("kl", AmbiguitySet::phi(PhiFamily::Kl, center, eta)?),
    ];
    for (name, set) in &sets {
        let rep = worst_case(set, &loss, &theta, Some(&support), &cfg, RngStream::new(8))?;
        let detail = match &rep.certificate {
            Certificate::KernelDual { gap_estimate, .. } => format!("gap estimate {gap_estimate:.2e}"),
            Certificate::W1Dual { lambda, .. } => format!("lambda {lambda:.4}"),
            Certificate::DualWeights { lambda, .. } => format!("lambda {lambda:.4}"),
        };
        println!(
            "{name:>5}: empirical {:.5}  worst case {:.5}  dual {:.5}  ({detail})",
            rep.center_value,
            rep.value,
            rep.dual_value(),
        );
    }
    Ok(())
}
