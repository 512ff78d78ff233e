//! ERM against the three DRO formulations on one data set, scored on the
//! true distribution.

use dro_lab::loss::excess_risk;
use dro_lab::robustify::Center;
use dro_lab::solve::{dro_solve, erm_solve};
use dro_lab::{sample, AmbiguitySet, DiscreteDist, DistributionSpec, KernelSpec, LossModel, PhiFamily, RngStream, SolverConfig};

fn main() -> dro_lab::Result<()> {
    let truth = DistributionSpec::symmetric_box(3, 1.0)?;
    let data = sample(&truth, 40, RngStream::new(1))?;
    let loss = LossModel::quad_linear(vec![0.6, 0.8, 0.7])?;
    let cfg = SolverConfig::default();

    let erm = erm_solve(&loss, &data, &cfg)?;
    println!("erm      excess {:.3e}", excess_risk(&loss, &truth, &erm.theta)?);

    let sigma = dro_lab::kernels::median_heuristic(&data)?;
    for eta in [0.05, 0.2, 0.5] {
        let sets = [
            ("mmd", AmbiguitySet::mmd(KernelSpec::gaussian(sigma)?, data.clone(), eta)?),
            ("w1", AmbiguitySet::w1(data.clone(), eta)?),
            ("chi2", AmbiguitySet::phi(PhiFamily::Chi2Neyman, Center::Discrete(DiscreteDist::empirical(&data)), eta)?),
        ];
        for (name, set) in &sets {
            let rep = dro_solve(&loss, set, Some(&truth), &cfg, RngStream::new(2))?;
            let excess = excess_risk(&loss, &truth, &rep.theta)?;
            println!("{name:<4} eta {eta:<4} excess {excess:.3e}  objective {:.4}  iters {}", rep.objective, rep.iterations);
        }
    }
    Ok(())
}
