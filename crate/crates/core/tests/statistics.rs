use std::collections::BTreeMap;

use llp_core::citest::{chi_square_counts, predictive_ci_test, CiConfig, Decision, TestName};
use llp_core::harness::{best_set, f1_binary, macro_f1, welch_t_test};
use llp_core::rng;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chi_square_matches_statrs(cells in proptest::collection::vec(1usize..60, 4..=20), cols in 2usize..=4) {
        let rows = cells.len() / cols;
        prop_assume!(rows >= 2);
        let t = Array2::from_shape_vec((rows, cols), cells[..rows * cols].to_vec()).unwrap();
        let (stat, dof, p) = chi_square_counts(&t).unwrap();
        prop_assert_eq!(dof, ((rows - 1) * (cols - 1)) as f64);
        prop_assert!((p - ChiSquared::new(dof).unwrap().sf(stat)).abs() < 1e-10);
    }

    #[test]
    fn welch_matches_statrs(a in proptest::collection::vec(0.0f64..1.0, 3..30), b in proptest::collection::vec(0.0f64..1.0, 3..30)) {
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let var = |x: &[f64]| { let m = mean(x); x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64 };
        let (sa, sb) = (var(&a) / a.len() as f64, var(&b) / b.len() as f64);
        prop_assume!(sa + sb > 1e-12);
        let t = (mean(&a) - mean(&b)) / (sa + sb).sqrt();
        let dof = (sa + sb).powi(2) / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
        let oracle = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().sf(t.abs());
        prop_assert!((welch_t_test(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn best_set_ignores_order_names_and_shift(
        groups in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4..12), 2..5),
        shift in -0.5f64..0.5,
    ) {
        let named: BTreeMap<String, Vec<f64>> = groups.iter().enumerate().map(|(i, g)| (format!("a{i}"), g.clone())).collect();
        // reversed names reorder the map; values are shifted uniformly
        let renamed: BTreeMap<String, Vec<f64>> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("z{}", groups.len() - i), g.iter().map(|v| v + shift).collect()))
            .collect();
        let back = |s: &str| format!("a{}", groups.len() - s[1..].parse::<usize>().unwrap());
        let a = best_set(&named, 0.05).unwrap();
        let b = best_set(&renamed, 0.05).unwrap();
        let mut sa = a.best_set.clone();
        let mut sb: Vec<String> = b.best_set.iter().map(|s| back(s)).collect();
        sa.sort();
        sb.sort();
        // exact mean ties may rank differently after renaming; skip those
        let means: Vec<f64> = a.ranked.iter().map(|k| a.means[k]).collect();
        prop_assume!(means.windows(2).all(|w| (w[0] - w[1]).abs() > 1e-9));
        prop_assert_eq!(sa, sb);
        prop_assert!(a.best_set.contains(&a.ranked[0]));
    }
}

#[test]
fn f1_exhaustive_length_six() {
    for a in 0..64u32 {
        for b in 0..64u32 {
            let t: Vec<usize> = (0..6).map(|i| ((a >> i) & 1) as usize).collect();
            let p: Vec<usize> = (0..6).map(|i| ((b >> i) & 1) as usize).collect();
            let tp = t
                .iter()
                .zip(&p)
                .filter(|(x, y)| **x == 1 && **y == 1)
                .count() as f64;
            let pp = p.iter().filter(|&&v| v == 1).count() as f64;
            let ap = t.iter().filter(|&&v| v == 1).count() as f64;
            let prec = if pp > 0.0 { tp / pp } else { 0.0 };
            let rec = if ap > 0.0 { tp / ap } else { 0.0 };
            let f = if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
            assert!((f1_binary(&t, &p) - f).abs() < 1e-12);
        }
    }
    assert!((macro_f1(&[0, 0, 1, 1], &[0, 0, 1, 1], 2) - 1.0).abs() < 1e-15);
}

#[test]
fn two_tied_leaders_and_a_laggard() {
    let mut r = rng::rng(4);
    let mut jitter = |m: f64| {
        (0..30)
            .map(|_| m + 0.02 * (r.random::<f64>() - 0.5))
            .collect::<Vec<_>>()
    };
    let groups = BTreeMap::from([
        ("a".to_string(), jitter(0.9)),
        ("b".to_string(), jitter(0.9)),
        ("c".to_string(), jitter(0.4)),
    ]);
    let b = best_set(&groups, 0.05).unwrap();
    assert_eq!(b.best_set.len(), 2, "{b:?}");
    assert!(!b.best_set.contains(&"c".to_string()));
}

#[test]
fn ci_test_detects_a_strong_dependence() {
    let mut r = rng::rng(11);
    let n = 1000;
    let b = Array2::from_shape_simple_fn((n, 1), || r.random::<f64>());
    let x = b.mapv(|v| 3.0 * v) + Array2::from_shape_simple_fn((n, 1), || 0.1 * r.random::<f64>());
    let t = predictive_ci_test(
        TestName::XIndepB,
        &b,
        &x,
        None,
        0.05,
        &CiConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(t.decision, Decision::Dependent, "{t:?}");
}
