use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;

use dro_lab::distances::{phi_divergence, w1};
use dro_lab::{DiscreteDist, PhiFamily};

fn dist(d: usize, max_m: usize) -> impl Strategy<Value = DiscreteDist> {
    (1usize..=max_m).prop_flat_map(move |m| {
        (prop::collection::vec(-2.0f64..2.0, m * d), prop::collection::vec(0.05f64..1.0, m)).prop_map(move |(x, w)| {
            let total: f64 = w.iter().sum();
            DiscreteDist::new(Array2::from_shape_vec((m, d), x).unwrap(), w.iter().map(|v| v / total).collect()).unwrap()
        })
    })
}

/// Lifts 1-D points into the plane so `w1` takes the transport-LP path.
fn lift(p: &DiscreteDist) -> DiscreteDist {
    let pts = Array2::from_shape_fn((p.len(), 2), |(i, k)| if k == 0 { p.points()[[i, 0]] } else { 0.0 });
    DiscreteDist::new(pts, p.probs().to_vec()).unwrap()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric(p in dist(2, 6), q in dist(2, 6), r in dist(2, 6)) {
        let pq = w1(&p, &q).unwrap();
        prop_assert!(pq >= -1e-12);
        prop_assert!((pq - w1(&q, &p).unwrap()).abs() <= 1e-9);
        prop_assert!(w1(&p, &p).unwrap().abs() <= 1e-9);
        prop_assert!(w1(&p, &r).unwrap() <= pq + w1(&q, &r).unwrap() + 1e-9);
    }

    #[test]
    fn sorted_coupling_equals_lp_in_one_dimension(p in dist(1, 8), q in dist(1, 8)) {
        prop_assert!((w1(&p, &q).unwrap() - w1(&lift(&p), &lift(&q)).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn lp_matches_permutation_enumeration(m in 1usize..=3, x in prop::collection::vec(-2.0f64..2.0, 12), y in prop::collection::vec(-2.0f64..2.0, 12)) {
        // equal-size uniform marginals: the Birkhoff vertices are permutations
        let a = Array2::from_shape_vec((m, 2), x[..2 * m].to_vec()).unwrap();
        let b = Array2::from_shape_vec((m, 2), y[..2 * m].to_vec()).unwrap();
        let brute = permutations(m)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| euclid(a.row(i), b.row(j))).sum::<f64>() / m as f64)
            .fold(f64::INFINITY, f64::min);
        let p = DiscreteDist::uniform(a).unwrap();
        let q = DiscreteDist::uniform(b).unwrap();
        prop_assert!((w1(&p, &q).unwrap() - brute).abs() <= 1e-9);
    }

    #[test]
    fn phi_divergences_are_nonnegative_and_vanish_on_the_diagonal(
        w in prop::collection::vec(0.05f64..1.0, 2..6),
        u in prop::collection::vec(0.05f64..1.0, 6),
    ) {
        let m = w.len();
        let pts = Array2::from_shape_fn((m, 1), |(i, _)| i as f64);
        let norm = |v: &[f64]| { let t: f64 = v.iter().sum(); v.iter().map(|x| x / t).collect::<Vec<_>>() };
        let p = DiscreteDist::new(pts.clone(), norm(&w)).unwrap();
        let q = DiscreteDist::new(pts, norm(&u[..m])).unwrap();
        for fam in [PhiFamily::Chi2Neyman, PhiFamily::Kl] {
            prop_assert!(phi_divergence(&fam, &p, &p).unwrap().abs() <= 1e-12);
            let d = phi_divergence(&fam, &q, &p).unwrap();
            prop_assert!(d >= 0.0);
            if q.probs().iter().zip(p.probs()).any(|(a, b)| (a - b).abs() > 1e-6) {
                prop_assert!(d > 0.0);
            }
        }
    }
}

#[test]
fn w1_examples() {
    let p = DiscreteDist::uniform(array![[0.0], [1.0]]).unwrap();
    let q = DiscreteDist::uniform(array![[0.0], [3.0]]).unwrap();
    assert_abs_diff_eq!(w1(&p, &q).unwrap(), 1.0, epsilon = 1e-12);
    assert_eq!(w1(&p, &p).unwrap(), 0.0);
    let big = DiscreteDist::uniform(Array2::from_shape_fn((513, 2), |(i, k)| (i * (k + 1)) as f64)).unwrap();
    let small = DiscreteDist::uniform(array![[0.0, 0.0]]).unwrap();
    assert!(w1(&big, &small).is_err());
}

#[test]
fn chi2_examples() {
    let pts = array![[0.0], [1.0]];
    let p = DiscreteDist::new(pts.clone(), vec![0.5, 0.5]).unwrap();
    let q = DiscreteDist::new(pts.clone(), vec![0.6, 0.4]).unwrap();
    let expect = 0.5 * 0.04 / 1.2 + 0.5 * 0.04 / 0.8;
    assert_abs_diff_eq!(phi_divergence(&PhiFamily::Chi2Neyman, &q, &p).unwrap(), expect, epsilon = 1e-15);
    assert_abs_diff_eq!(expect, 0.0416667, epsilon = 1e-7);
    let hole = DiscreteDist::new(pts.clone(), vec![1.0, 0.0]).unwrap();
    assert_eq!(phi_divergence(&PhiFamily::Chi2Neyman, &hole, &p).unwrap(), f64::INFINITY);
    // q puts mass where p has none
    assert!(phi_divergence(&PhiFamily::Chi2Neyman, &p, &hole).is_err());
}

#[test]
fn user_family_matches_builtin_kl() {
    let user = PhiFamily::user(
        |t| if t == 0.0 { 1.0 } else { t * t.ln() - t + 1.0 },
        |s| s.exp() - 1.0,
        f64::INFINITY,
    );
    let pts = array![[0.0], [1.0], [2.0]];
    let p = DiscreteDist::new(pts.clone(), vec![0.2, 0.3, 0.5]).unwrap();
    let q = DiscreteDist::new(pts, vec![0.4, 0.4, 0.2]).unwrap();
    let a = phi_divergence(&user, &q, &p).unwrap();
    let b = phi_divergence(&PhiFamily::Kl, &q, &p).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    let grid: Vec<f64> = (0..200).map(|i| -3.0 + 0.03 * i as f64).collect();
    let ts: Vec<f64> = (1..200).map(|i| 0.025 * i as f64).collect();
    assert!(user.conjugate_violation(&grid, &ts) <= 1e-8);
    assert!(PhiFamily::Chi2Neyman.conjugate_violation(&grid, &ts) <= 1e-8);
}
