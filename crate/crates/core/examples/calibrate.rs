//! Ball sizes for each ambiguity family at a few sample sizes.

use dro_lab::calibration::{calibrate, sobolev_bound, default_r_grid, CalibrationInput};

fn main() -> dro_lab::Result<()> {
    let delta = 0.05;
    println!("{:>6} {:>10} {:>10} {:>10}", "n", "mmd", "w1 (d=2)", "chi2 (m=5)");
    for n in [50, 100, 200, 400, 800] {
        let input = CalibrationInput::new(n, delta).with_dim(2).with_support(5);
        let mmd = calibrate("mmd", &input)?;
        let w1 = calibrate("w1", &input)?;
        let chi2 = calibrate("chi2", &input)?;
        println!("{n:>6} {:>10.5} {:>10.5} {:>10.5}", mmd.eta, w1.eta, chi2.eta);
    }

    // excess-risk bound for a Sobolev-smooth loss, minimized over the RKHS-norm radius
    let n = 400;
    let b = sobolev_bound(0.5, 3, n, delta, &default_r_grid(n))?;
    println!("sobolev bound at n = {n}: {:.4} (r = {:.3})", b.bound, b.argmin_r);
    Ok(())
}
