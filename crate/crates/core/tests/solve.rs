use approx::assert_abs_diff_eq;
use ndarray::array;
use rand::Rng;

use dro_lab::robustify::{Center, Oracle};
use dro_lab::solve::{dro_solve, erm_solve, weighted_gradient_descent, DroPath, Method};
use dro_lab::{
    sample, AmbiguitySet, DiscreteDist, DistributionSpec, KernelSpec, LossModel, PhiFamily, RngStream, SampleSet,
    SolverConfig,
};

fn quad_custom(v: Vec<f64>) -> LossModel {
    let g = v.clone();
    LossModel::custom(
        v.len(),
        move |t, z| (0..v.len()).map(|k| 0.5 * (t[k] - v[k]).powi(2) + z[k] * (t[k] - v[k])).sum(),
        move |t, z| (0..g.len()).map(|k| t[k] - g[k] + z[k]).collect(),
    )
}

#[test]
fn erm_examples() {
    let cfg = SolverConfig::default();
    let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
    let centered = SampleSet::from_points(array![[1.0, -2.0], [-1.0, 2.0]]).unwrap();
    assert_eq!(erm_solve(&loss, &centered, &cfg).unwrap().theta, vec![0.5, 0.5]);
    let shifted = SampleSet::from_points(array![[0.3, -0.1], [-0.1, -0.3]]).unwrap();
    let rep = erm_solve(&loss, &shifted, &cfg).unwrap();
    assert_abs_diff_eq!(rep.theta[0], 0.4, epsilon = 1e-15);
    assert_abs_diff_eq!(rep.theta[1], 0.7, epsilon = 1e-15);
    assert!(rep.converged && rep.method == Method::Erm);
}

#[test]
fn gradient_descent_reaches_the_closed_form() {
    let s = sample(&DistributionSpec::symmetric_box(3, 2.0).unwrap(), 30, RngStream::new(1)).unwrap();
    let v = vec![0.6, 0.9, 0.7];
    let closed = erm_solve(&LossModel::quad_linear(v.clone()).unwrap(), &s, &SolverConfig::default()).unwrap();
    let gd = erm_solve(&quad_custom(v.clone()), &s, &SolverConfig::default()).unwrap();
    assert!(gd.converged);
    for k in 0..3 {
        assert_abs_diff_eq!(gd.theta[k], closed.theta[k], epsilon = 1e-7);
    }
    let w = vec![1.0 / 30.0; 30];
    let direct = weighted_gradient_descent(&quad_custom(v), s.data(), &w, &[5.0, -5.0, 0.0], 1e-10, 10_000);
    assert_abs_diff_eq!(direct.theta[2], closed.theta[2], epsilon = 1e-9);
}

fn sets(s: &SampleSet, eta: f64) -> Vec<AmbiguitySet> {
    vec![
        AmbiguitySet::mmd(KernelSpec::gaussian(1.0).unwrap(), s.clone(), eta).unwrap(),
        AmbiguitySet::w1(s.clone(), eta).unwrap(),
        AmbiguitySet::phi(PhiFamily::Chi2Neyman, Center::Discrete(DiscreteDist::empirical(s)), eta).unwrap(),
    ]
}

#[test]
fn zero_radius_recovers_erm() {
    let spec = DistributionSpec::symmetric_box(3, 1.0).unwrap();
    let s = sample(&spec, 25, RngStream::new(2)).unwrap();
    let loss = LossModel::quad_linear(vec![0.5, 0.8, 0.9]).unwrap();
    let erm = erm_solve(&loss, &s, &SolverConfig::default()).unwrap();
    for set in sets(&s, 0.0) {
        let rep = dro_solve(&loss, &set, Some(&spec), &SolverConfig::default(), RngStream::new(3)).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(rep.theta[k], erm.theta[k], epsilon = 1e-6);
        }
    }
}

/// Minimum over `theta in [lo, hi]`: a 1e-2 scan, then a 1e-4 scan around the
/// coarse winner (the objective is convex in `theta`).
fn scan(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let coarse = ((hi - lo) / 1e-2).round() as usize;
    let mut best = (lo, f(lo));
    for i in 0..=coarse {
        let t = lo + i as f64 * 1e-2;
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    let (a, b) = ((best.0 - 1e-2).max(lo), (best.0 + 1e-2).min(hi));
    for i in 0..=200 {
        let t = a + (b - a) * i as f64 / 200.0;
        best.1 = best.1.min(f(t));
    }
    best.1
}

#[test]
fn one_dimensional_solutions_match_grid_search() {
    let b = 1.0;
    let spec = DistributionSpec::symmetric_box(1, b).unwrap();
    let cfg = SolverConfig::default();
    for (seed, eta) in [(4u64, 0.05), (5, 0.2), (6, 0.6)] {
        let s = sample(&spec, 12, RngStream::new(seed)).unwrap();
        let v = 0.75;
        let loss = LossModel::quad_linear(vec![v]).unwrap();
        for set in sets(&s, eta) {
            let mut oracle = Oracle::new(&set, &loss, Some(&spec), &cfg, RngStream::new(seed)).unwrap();
            let mut path = DroPath::from_erm(&oracle, &cfg).unwrap();
            let rep = path.solve(&mut oracle, &cfg).unwrap();
            let grid = scan(|t| oracle.evaluate(&[t]).unwrap().value, v - 2.0 * b, v + 2.0 * b);
            let fresh = oracle.evaluate(&rep.theta).unwrap().value;
            assert_abs_diff_eq!(rep.objective, fresh, epsilon = 1e-6);
            assert!(rep.objective <= grid + 1e-3, "{}: {} vs grid {}", set.family.name(), rep.objective, grid);
            assert!(grid <= rep.objective + 1e-3);
        }
    }
}

#[test]
fn solutions_beat_random_probes() {
    let spec = DistributionSpec::symmetric_box(2, 1.0).unwrap();
    let cfg = SolverConfig::default();
    let s = sample(&spec, 20, RngStream::new(7)).unwrap();
    let loss = LossModel::quad_linear(vec![0.6, 0.9]).unwrap();
    let mut r = RngStream::new(8).rng();
    for set in sets(&s, 0.1) {
        let mut oracle = Oracle::new(&set, &loss, Some(&spec), &cfg, RngStream::new(9)).unwrap();
        let mut path = DroPath::from_erm(&oracle, &cfg).unwrap();
        let rep = path.solve(&mut oracle, &cfg).unwrap();
        assert!(rep.converged);
        let at_opt = oracle.evaluate(&rep.theta).unwrap().value;
        for _ in 0..100 {
            let probe: Vec<f64> = rep.theta.iter().map(|t| t + r.random_range(-0.5..0.5)).collect();
            let wc = oracle.evaluate(&probe).unwrap().value;
            assert!(at_opt <= wc + 1e-5, "{}: {at_opt} > {wc}", set.family.name());
        }
    }
}

#[test]
fn covering_radius_drives_the_objective_to_zero() {
    // the loss vanishes identically at theta = v, so the worst case there is 0
    let spec = DistributionSpec::symmetric_box(2, 1.0).unwrap();
    let s = sample(&spec, 30, RngStream::new(10)).unwrap();
    let v = vec![0.7, 0.55];
    let loss = LossModel::quad_linear(v.clone()).unwrap();
    let set = AmbiguitySet::mmd(KernelSpec::gaussian(1.0).unwrap(), s, 0.8).unwrap();
    let rep = dro_solve(&loss, &set, Some(&spec), &SolverConfig::default(), RngStream::new(11)).unwrap();
    assert!(rep.objective <= 1e-8, "{}", rep.objective);
    assert!(rep.converged);
    let dist: f64 = rep.theta.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist <= 1e-6, "{dist}");
}

#[test]
fn warm_started_path_matches_cold_solves() {
    let spec = DistributionSpec::symmetric_box(2, 1.0).unwrap();
    let cfg = SolverConfig::default();
    let s = sample(&spec, 15, RngStream::new(12)).unwrap();
    let loss = LossModel::quad_linear(vec![0.8, 0.6]).unwrap();
    let set = AmbiguitySet::mmd(KernelSpec::gaussian(1.0).unwrap(), s, 0.01).unwrap();
    let mut oracle = Oracle::new(&set, &loss, Some(&spec), &cfg, RngStream::new(13)).unwrap();
    let mut path = DroPath::from_erm(&oracle, &cfg).unwrap();
    for eta in [0.01, 0.05, 0.2, 0.1] {
        oracle.set_radius(eta).unwrap();
        let warm = path.solve(&mut oracle, &cfg).unwrap();
        let mut cold_path = DroPath::from_erm(&oracle, &cfg).unwrap();
        let cold = cold_path.solve(&mut oracle, &cfg).unwrap();
        assert!((warm.objective - cold.objective).abs() <= 1e-5 * (1.0 + cold.objective), "eta {eta}: {} vs {}", warm.objective, cold.objective);
    }
}
