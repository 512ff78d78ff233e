use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;

use dro_lab::loss::{excess_risk, true_optimum, true_risk};
use dro_lab::{sample, DistributionSpec, LossModel, RngStream};

fn box_spec() -> impl Strategy<Value = DistributionSpec> {
    (1usize..4, 0.1f64..50.0).prop_map(|(d, b)| DistributionSpec::symmetric_box(d, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_a_pure_function(spec in box_spec(), n in 1usize..40, seed in any::<u64>(), id in any::<u64>()) {
        let rs = RngStream::with_stream(seed, id);
        let a = sample(&spec, n, rs).unwrap();
        let b = sample(&spec, n, rs).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let DistributionSpec::UniformBox { lo, hi } = &spec else { unreachable!() };
        for row in a.data().rows() {
            for k in 0..row.len() {
                prop_assert!(row[k] >= lo[k] && row[k] <= hi[k]);
            }
        }
    }

    #[test]
    fn quad_linear_vanishes_at_v(v in prop::collection::vec(-5.0f64..5.0, 1..6), scale in 0.0f64..1e3) {
        let loss = LossModel::quad_linear(v.clone()).unwrap();
        let z: Vec<f64> = v.iter().enumerate().map(|(i, x)| scale * ((i as f64 + 1.0) * x).sin()).collect();
        prop_assert_eq!(loss.eval(&v, &z), 0.0);
    }

    #[test]
    fn quad_linear_formula(v in prop::collection::vec(-2.0f64..2.0, 3), t in prop::collection::vec(-2.0f64..2.0, 3), z in prop::collection::vec(-9.0f64..9.0, 3)) {
        let loss = LossModel::quad_linear(v.clone()).unwrap();
        let expect: f64 = (0..3).map(|k| 0.5 * (t[k] - v[k]).powi(2) + z[k] * (t[k] - v[k])).sum();
        prop_assert!((loss.eval(&t, &z) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }

    #[test]
    fn excess_risk_nonnegative_zero_only_at_optimum(
        v in prop::collection::vec(0.5f64..1.0, 2),
        t in prop::collection::vec(-3.0f64..3.0, 2),
        b in 0.1f64..100.0,
    ) {
        let loss = LossModel::quad_linear(v.clone()).unwrap();
        let spec = DistributionSpec::symmetric_box(2, b).unwrap();
        let e = excess_risk(&loss, &spec, &t).unwrap();
        prop_assert!(e >= -1e-12);
        let opt = true_optimum(&loss, &spec).unwrap();
        prop_assert_eq!(excess_risk(&loss, &spec, &opt).unwrap(), 0.0);
        if t != opt {
            prop_assert!(e > 0.0);
        }
    }

    #[test]
    fn discrete_true_risk_is_the_weighted_sum(
        w in prop::collection::vec(0.1f64..1.0, 1..5),
        t in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let m = w.len();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let points = Array2::from_shape_fn((m, 2), |(i, k)| i as f64 + 0.5 * k as f64);
        let spec = DistributionSpec::discrete(points.clone(), probs.clone()).unwrap();
        let loss = LossModel::quad_linear(vec![0.7, 0.8]).unwrap();
        let direct: f64 = (0..m).map(|i| probs[i] * loss.eval(&t, points.row(i).as_slice().unwrap())).sum();
        prop_assert!((true_risk(&loss, &spec, &t).unwrap() - direct).abs() <= 1e-12);
    }
}

#[test]
fn quad_linear_true_risk_on_box() {
    let loss = LossModel::quad_linear(vec![0.5, 0.5]).unwrap();
    let spec = DistributionSpec::symmetric_box(2, 3.0).unwrap();
    assert_abs_diff_eq!(true_risk(&loss, &spec, &[0.4, 0.7]).unwrap(), 0.025, epsilon = 1e-15);
    assert_eq!(true_risk(&loss, &spec, &[0.5, 0.5]).unwrap(), 0.0);
}

#[test]
fn custom_loss_on_continuous_truth_is_a_capability_error() {
    let loss = LossModel::custom(1, |_, z| z[0], |_, _| vec![0.0]);
    let spec = DistributionSpec::symmetric_box(1, 1.0).unwrap();
    assert!(true_risk(&loss, &spec, &[0.0]).is_err());
    let disc = DistributionSpec::discrete(array![[0.0], [1.0]], vec![0.3, 0.7]).unwrap();
    assert_abs_diff_eq!(true_risk(&loss, &disc, &[0.0]).unwrap(), 0.7, epsilon = 1e-15);
}

#[test]
fn erm_excess_matches_closed_form_average() {
    // E 0.5 ||zbar||^2 = d B^2 / (6 n) for Unif[-B, B]^d
    let (d, b, n, trials) = (5, 10.0, 40, 400);
    let spec = DistributionSpec::symmetric_box(d, b).unwrap();
    let loss = LossModel::quad_linear(vec![0.75; d]).unwrap();
    let root = RngStream::new(77);
    let mut acc = 0.0;
    for t in 0..trials {
        let s = sample(&spec, n, root.substream(t)).unwrap();
        let theta: Vec<f64> = s.mean().iter().map(|m| 0.75 - m).collect();
        acc += excess_risk(&loss, &spec, &theta).unwrap();
    }
    let mean = acc / trials as f64;
    let target = d as f64 * b * b / (6.0 * n as f64);
    assert!((mean / target - 1.0).abs() < 0.2, "mean {mean} vs {target}");
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(DistributionSpec::uniform_box(vec![1.0], vec![1.0]).is_err());
    assert!(DistributionSpec::discrete(array![[0.0], [1.0]], vec![0.5, 0.6]).is_err());
    assert!(DistributionSpec::discrete(array![[0.0], [0.0]], vec![0.5, 0.5]).is_err());
    let spec = DistributionSpec::symmetric_box(1, 1.0).unwrap();
    assert!(sample(&spec, 0, RngStream::new(0)).is_err());
}

#[test]
fn specs_and_losses_round_trip_through_json() {
    let spec = DistributionSpec::shifted(
        DistributionSpec::symmetric_box(2, 1.0).unwrap(),
        DistributionSpec::uniform_box(vec![-0.5, -1.0], vec![1.5, 1.0]).unwrap(),
    )
    .unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    assert!(text.contains("\"variant\":\"ShiftedPair\""));
    assert_eq!(DistributionSpec::from_json(&text).unwrap(), spec);

    let loss = LossModel::from_json(r#"{"variant": "QuadLinear", "params": {"v": [0.5, 0.25]}, "certificates": {"lipschitz_z": 2.0}}"#).unwrap();
    assert_eq!(loss.certificates().lipschitz_z, Some(2.0));
    let back = LossModel::from_json(&loss.to_json().unwrap()).unwrap();
    assert_eq!(back.eval(&[1.0, 1.0], &[0.3, 0.1]), loss.eval(&[1.0, 1.0], &[0.3, 0.1]));
}

#[test]
fn shifted_pair_samples_train_and_evaluates_test() {
    let train = DistributionSpec::symmetric_box(1, 1.0).unwrap();
    let test = DistributionSpec::uniform_box(vec![0.0], vec![2.0]).unwrap();
    let pair = DistributionSpec::shifted(train, test).unwrap();
    let s = sample(&pair, 200, RngStream::new(3)).unwrap();
    assert!(s.data().iter().all(|x| (-1.0..=1.0).contains(x)));
    let loss = LossModel::quad_linear(vec![0.5]).unwrap();
    // test mean is 1, so the optimum is v - 1
    assert_abs_diff_eq!(true_optimum(&loss, &pair).unwrap()[0], -0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(excess_risk(&loss, &pair, &[0.5]).unwrap(), 0.5, epsilon = 1e-15);
}
