//! Distributionally robust optimization laboratory.
//!
//! Ambiguity sets built from maximum mean discrepancy, 1-Wasserstein and
//! phi-divergence balls around an empirical distribution; ball-size
//! calibration; worst-case expectation oracles with dual certificates; ERM and
//! DRO solvers; and a Monte-Carlo harness measuring excess risk.
//!
//! ```
//! use dro_lab::{calibration::{mmd_ball_size, CalibrationInput}, LossModel};
//!
//! let eta = mmd_ball_size(&CalibrationInput::new(100, 0.05)).unwrap();
//! assert!((eta - 0.34478).abs() < 1e-5);
//! let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
//! assert_eq!(loss.eval(&[0.5, 0.5], &[3.0, -1.0]), 0.0);
//! ```

pub mod calibration;
pub mod distances;
pub mod error;
pub mod kernels;
pub mod lab;
pub mod loss;
pub mod rng;
pub mod robustify;
pub mod sample;
mod serde_matrix;
pub mod solve;
pub mod verifier;

pub use distances::{DiscreteDist, PhiFamily};
pub use error::{DroError, Result};
pub use kernels::{KernelSpec, KmeExpansion};
pub use loss::{Certificates, LossModel};
pub use rng::RngStream;
pub use robustify::{AmbiguitySet, SolverConfig, WorstCaseReport};
pub use sample::{sample, DistributionSpec, SampleSet};
pub use solve::SolveReport;
