//! How often the calibrated balls contain the distribution that generated the data.

use ndarray::array;

use dro_lab::verifier::{coverage_chi2, coverage_mmd};
use dro_lab::{DiscreteDist, DistributionSpec, KernelSpec, RngStream};

fn main() -> dro_lab::Result<()> {
    let truth = DistributionSpec::symmetric_box(5, 1.0)?;
    let kernel = KernelSpec::gaussian(1.0)?;
    for n in [25, 100] {
        let rep = coverage_mmd(&truth, &kernel, n, 0.05, 300, RngStream::new(n as u64))?;
        println!("mmd  n = {n:<5} eta {:.4}  rate {:.3} +/- {:.3}  target {}", rep.eta, rep.rate, rep.ci_halfwidth, rep.target);
    }

    let atoms = DiscreteDist::new(array![[0.0], [1.0], [2.0]], vec![0.2, 0.3, 0.5])?;
    let rep = coverage_chi2(&atoms, 1000, 0.1, 300, RngStream::new(3))?;
    println!(
        "chi2 n = 1000  eta {:.4}  rate {:.3} +/- {:.3}  target {}  below regime: {}",
        rep.eta, rep.rate, rep.ci_halfwidth, rep.target, rep.below_regime
    );
    Ok(())
}
