use std::path::PathBuf;

use proptest::prelude::*;

use dro_lab::lab::{
    check_assertions, quantile, render_lines, run_and_summarize, run_experiment, summarize, write_outputs,
    write_records_csv, Assertion, Axes, ExperimentConfig, SummaryRow, TrialRecord, XAxis, CSV_HEADER,
};
use dro_lab::loss::{excess_risk, LossModel};
use dro_lab::solve::Method;
use dro_lab::DistributionSpec;

fn record(method: Method, n: usize, eta: f64, trial: usize, excess: f64) -> TrialRecord {
    TrialRecord {
        trial_id: trial,
        method,
        n,
        eta,
        b: 1.0,
        d: 2,
        seed: 0,
        v: vec![0.5, 0.5],
        theta: vec![0.5, 0.5],
        excess_risk: excess,
        converged: true,
        wallclock_s: None,
        error: None,
    }
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        d: 2,
        b: 1.0,
        n_grid: vec![10, 20],
        eta_grid: vec![0.05, 0.3],
        methods: vec![Method::Erm, Method::MmdDro, Method::W1Dro, Method::Chi2Dro],
        trials: 10,
        seed: 21,
        ..ExperimentConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quantiles_match_brute_force(mut x in prop::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..=1.0) {
        x.sort_by(f64::total_cmp);
        // type-7: interpolate between order statistics floor(h) and ceil(h)
        let h = (x.len() - 1) as f64 * p;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        let want = x[lo] + (h - lo as f64) * (x[hi] - x[lo]);
        prop_assert!((quantile(&x, p) - want).abs() <= 1e-9);
        prop_assert!(quantile(&x, p) >= x[0] && quantile(&x, p) <= x[x.len() - 1]);
        let below = x.iter().filter(|&&v| v < quantile(&x, 0.5)).count();
        prop_assert!(below <= x.len() / 2);
    }
}

#[test]
fn summarize_examples() {
    let recs = vec![record(Method::Erm, 10, 0.0, 0, 1.0), record(Method::Erm, 10, 0.0, 1, 3.0)];
    let rows = summarize(&recs).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mean, 2.0);
    assert_eq!(rows[0].trials, 2);

    let recs: Vec<_> = [0.0, 0.0, 5.0].iter().enumerate().map(|(i, &e)| record(Method::MmdDro, 10, 0.1, i, e)).collect();
    let rows = summarize(&recs).unwrap();
    assert_eq!(rows[0].median, 0.0);
    assert_eq!(rows[0].q3, 2.5);
    assert!(summarize(&[]).is_err());
}

#[test]
fn best_eta_marks_the_smallest_mean_per_cell() {
    let mut recs = Vec::new();
    for (eta, e) in [(0.1, 4.0), (0.2, 1.0), (0.3, 2.0)] {
        recs.push(record(Method::MmdDro, 10, eta, 0, e));
        recs.push(record(Method::MmdDro, 20, eta, 0, 5.0 - e));
    }
    recs.push(record(Method::Erm, 10, 0.0, 0, 9.0));
    let rows = summarize(&recs).unwrap();
    let best: Vec<(usize, f64)> = rows.iter().filter(|r| r.best_eta && r.method == Method::MmdDro).map(|r| (r.n, r.eta)).collect();
    assert_eq!(best, vec![(10, 0.2), (20, 0.1)]);
    assert!(rows.iter().find(|r| r.method == Method::Erm).unwrap().best_eta);
}

#[test]
fn nonfinite_and_failed_records_are_excluded_from_statistics() {
    let mut bad = record(Method::W1Dro, 10, 0.1, 2, f64::NAN);
    bad.error = Some("boom".into());
    bad.converged = false;
    let recs = vec![record(Method::W1Dro, 10, 0.1, 0, 1.0), record(Method::W1Dro, 10, 0.1, 1, 2.0), bad];
    let row = &summarize(&recs).unwrap()[0];
    assert_eq!(row.trials, 2);
    assert_eq!(row.failed, 1);
    assert_eq!(row.mean, 1.5);
    assert!((row.convergence_rate - 2.0 / 3.0).abs() < 1e-15);
}

fn polylines(svg: &str) -> Vec<usize> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>").split(' ').count())
        .collect()
}

#[test]
fn render_lines_draws_one_series_per_method() {
    let single = summarize(&[record(Method::Erm, 10, 0.0, 0, 0.5)]).unwrap();
    let svg = render_lines(&single, &Axes::new(XAxis::N)).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(polylines(&svg).is_empty());

    let mut recs = Vec::new();
    for n in [10, 20, 40] {
        recs.push(record(Method::Erm, n, 0.0, 0, 10.0 / n as f64));
        recs.push(record(Method::MmdDro, n, 0.2, 0, 1.0 / n as f64));
    }
    let svg = render_lines(&summarize(&recs).unwrap(), &Axes::new(XAxis::N)).unwrap();
    assert_eq!(polylines(&svg), vec![3, 3]);
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    assert!(!svg.contains("non-finite"));
}

#[test]
fn render_lines_reports_dropped_and_floored_values() {
    let mut rows = summarize(&[record(Method::Erm, 10, 0.0, 0, 1.0), record(Method::Erm, 20, 0.0, 0, 0.0)]).unwrap();
    rows.push(SummaryRow { n: 30, mean: f64::NAN, ..rows[0].clone() });
    let svg = render_lines(&rows, &Axes::new(XAxis::N)).unwrap();
    assert!(svg.contains("1 non-finite value(s) dropped"));
    assert!(svg.contains("1 value(s) below 1e-20 drawn at 1e-20"));
    assert!(render_lines(&[], &Axes::new(XAxis::N)).is_err());
}

fn golden_summary() -> Vec<SummaryRow> {
    let mut recs = Vec::new();
    for (i, n) in [50usize, 100, 150, 200].into_iter().enumerate() {
        for t in 0..4 {
            let jitter = 1.0 + 0.1 * t as f64;
            recs.push(record(Method::Erm, n, 0.0, t, 60.0 / n as f64 * jitter));
            for (k, eta) in [0.05, 0.1, 0.5, 1.0].into_iter().enumerate() {
                let e = if k >= 2 { 0.0 } else { 10f64.powi(-(i as i32) - 2 * k as i32) * jitter };
                recs.push(record(Method::MmdDro, n, eta, t, e));
            }
        }
    }
    summarize(&recs).unwrap()
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the golden file");
}

#[test]
fn golden_figures() {
    let rows = golden_summary();
    check_golden("fig_n.svg", &render_lines(&rows, &Axes::new(XAxis::N)).unwrap());
    let eta = Axes { median: true, fixed_n: Some(100), ..Axes::new(XAxis::Eta) };
    check_golden("fig_eta.svg", &render_lines(&rows, &eta).unwrap());
}

#[test]
fn experiments_are_deterministic_and_reproducible() {
    let cfg = small_config();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.len(), 10 * 2 * (1 + 3 * 2));
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_records_csv(&a, &mut csv_a).unwrap();
    write_records_csv(&b, &mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(a, b);

    // excess recomputed from the stored theta and v
    let truth = DistributionSpec::symmetric_box(2, 1.0).unwrap();
    for r in &a {
        assert!(r.error.is_none(), "{:?}", r.error);
        let loss = LossModel::quad_linear(r.v.clone()).unwrap();
        let again = excess_risk(&loss, &truth, &r.theta).unwrap();
        assert!((again - r.excess_risk).abs() <= 1e-12);
        assert!(r.excess_risk >= 0.0);
        assert!(r.v.iter().all(|&x| (0.5..=1.0).contains(&x)));
    }
    // every method sees the same v at a given (trial, n)
    for r in &a {
        let erm = a.iter().find(|e| e.method == Method::Erm && e.trial_id == r.trial_id && e.n == r.n).unwrap();
        assert_eq!(erm.v, r.v);
    }
}

#[test]
fn records_csv_has_the_fixed_header() {
    let mut out = Vec::new();
    write_records_csv(&[record(Method::Chi2Dro, 10, 0.1, 3, 0.25)], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.next().unwrap(), "3,chi2-dro,10,1e-1,1e0,2,0,2.5e-1,true,");
    assert_eq!(CSV_HEADER.join(","), "trial_id,method,n,eta,B,d,seed,excess_risk,converged,wallclock_s");
}

#[test]
fn config_json_is_strict() {
    let cfg = ExperimentConfig::from_json(r#"{"d": 2, "B": 1.0, "n_grid": [10], "trials": 10, "methods": ["erm", "w1-dro"]}"#).unwrap();
    assert_eq!(cfg.methods, vec![Method::Erm, Method::W1Dro]);
    assert_eq!(cfg.eta_grid.len(), 13);
    assert!(ExperimentConfig::from_json(r#"{"d": 2, "colour": 1}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"d": 2, "trials": 3}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"n_grid": [1]}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"assertions": [{"kind": "records_valid", "extra": 1}]}"#).is_err());
    let round = ExperimentConfig::from_json(&serde_json::to_string(&small_config()).unwrap()).unwrap();
    assert_eq!(round, small_config());
}

#[test]
fn assertions_evaluate_against_the_summary() {
    let mut recs = Vec::new();
    for (eta, e) in [(0.1, 3.0), (0.2, 2.0), (0.5, 0.0), (1.0, 0.0)] {
        recs.push(record(Method::MmdDro, 50, eta, 0, e));
    }
    recs.push(record(Method::Erm, 50, 0.0, 0, 20.0));
    let summary = summarize(&recs).unwrap();
    let list = vec![
        Assertion::ErmMeanWithin { n: 50, lo: 14.0, hi: 125.0 },
        Assertion::StrictlyDecreasing { method: Method::MmdDro, n: 50, from: 0.1, to: 0.5 },
        Assertion::PlateauAtMost { method: Method::MmdDro, n: 50, from: 0.5, to: 1.0, value: 1e-9 },
        Assertion::BelowErm { method: Method::MmdDro, n: 50, ratio: 0.01 },
        Assertion::MedianAtMost { method: Method::MmdDro, n: 50, eta: Some(0.2), value: 1.0 },
        Assertion::StrictlyDecreasing { method: Method::MmdDro, n: 50, from: 0.5, to: 1.0 },
        Assertion::ErmMeanWithin { n: 60, lo: 0.0, hi: 1e9 },
        Assertion::RecordsValid {},
        Assertion::MinConvergenceRate { method: Method::MmdDro, rate: 1.0 },
    ];
    let got: Vec<bool> = check_assertions(&list, &recs, &summary).iter().map(|o| o.passed).collect();
    assert_eq!(got, vec![true, true, true, true, false, false, false, true, true]);
}

#[test]
fn outputs_land_in_the_directory() {
    let mut cfg = small_config();
    cfg.methods = vec![Method::Erm, Method::MmdDro];
    cfg.n_grid = vec![10];
    cfg.assertions = vec![Assertion::RecordsValid {}];
    let out = run_and_summarize(&cfg).unwrap();
    assert!(out.all_passed());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&cfg, &out, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["fig_eta.svg", "fig_n.svg", "metadata.json", "records.csv", "summary.csv"]);
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 10 * 3);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 21);
    // timing is off, so the wallclock column is empty
    assert!(records.lines().skip(1).all(|l| l.ends_with(',')));
}
