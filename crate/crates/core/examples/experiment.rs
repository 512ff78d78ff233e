//! A small excess-risk experiment written to a directory.
//!
//! ```text
//! cargo run --release --example experiment -- /tmp/dro-run
//! ```

use dro_lab::lab::{run_and_summarize, write_outputs, Assertion, ExperimentConfig};
use dro_lab::solve::Method;

fn main() -> dro_lab::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "dro-experiment".into());
    let cfg = ExperimentConfig {
        d: 3,
        b: 1.0,
        n_grid: vec![20, 40],
        eta_grid: vec![0.01, 0.1, 0.5],
        methods: vec![Method::Erm, Method::MmdDro, Method::W1Dro],
        trials: 10,
        seed: 5,
        assertions: vec![Assertion::RecordsValid {}],
        ..ExperimentConfig::default()
    };
    let out = run_and_summarize(&cfg)?;
    for row in &out.summary {
        println!(
            "{:<8} n {:<3} eta {:<4} median {:.3e}{}",
            row.method.as_str(),
            row.n,
            row.eta,
            row.median,
            if row.best_eta { "  *" } else { "" }
        );
    }
    write_outputs(&cfg, &out, dir.as_ref())?;
    println!("wrote {dir}");
    Ok(())
}
