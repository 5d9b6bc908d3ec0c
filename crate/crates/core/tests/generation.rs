use std::sync::Arc;

use llp_core::baggen::regimes::{
    bag_sizes, proportions, ProportionRegime, RegimeConfig, SizeRegime,
};
use llp_core::baggen::{
    self, frobenius_residual, ipf_fit, pgd_solve, simple_count_targets, GenConfig, IpfConfig,
    IpfTargets, JointTable3D, PgdConfig, WARN_INFEASIBLE_RESIDUAL,
};
use llp_core::dataset::{
    read_instance, write_instance, AssignmentMode, BaseDataset, GenSpec, Variant,
};
use llp_core::rng;
use llp_core::synthetic::two_gaussians;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

fn spec(variant: Variant, sizes: Vec<usize>, rows: Vec<Vec<f64>>, seed: u64) -> GenSpec {
    GenSpec {
        variant,
        n_bags: sizes.len(),
        bag_sizes: sizes,
        proportions: rows,
        n_clusters: 4,
        assignment_mode: AssignmentMode::Exact,
        seed,
    }
}

fn stochastic(r: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((rows, cols), || r.random::<f64>() + 1e-3);
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simple_counts_match_targets(n in 50usize..800, l in 2usize..6, seed in 0u64..1000) {
        let base = Arc::new(two_gaussians(n, 0.4, seed));
        let counts = base.class_counts();
        let mut r = rng::rng(seed);
        // split every class over the bags at random; always feasible
        let mut table = Array2::<usize>::zeros((l, 2));
        for (c, &nc) in counts.iter().enumerate() {
            for _ in 0..nc {
                table[[r.random_range(0..l), c]] += 1;
            }
        }
        prop_assume!((0..l).all(|b| table.row(b).sum() > 0));
        let sizes: Vec<usize> = (0..l).map(|b| table.row(b).sum()).collect();
        let rows = (0..l).map(|b| (0..2).map(|c| table[[b, c]] as f64 / sizes[b] as f64).collect()).collect();
        let s = spec(Variant::Simple, sizes.clone(), rows, seed);
        let g = baggen::generate(base, &s, None, &GenConfig::default()).unwrap();
        prop_assert_eq!(g.instance.contingency(), simple_count_targets(&s, &counts).unwrap());
        prop_assert_eq!(g.instance.realized_sizes(), &sizes[..]);
    }

    #[test]
    fn ipf_matches_both_marginals(q in 2usize..6, l in 2usize..6, seed in 0u64..1000) {
        let mut r = rng::rng(seed);
        let mut truth = Array3::from_shape_simple_fn((q, 2, l), || r.random::<f64>());
        truth /= truth.sum();
        let truth = JointTable3D::new(truth).unwrap();
        let targets = IpfTargets::new(truth.zy_marginal(), truth.yb_marginal());
        let init = JointTable3D::new(Array3::from_shape_simple_fn((q, 2, l), || r.random::<f64>() + 0.1)).unwrap();
        let (fit, report) = ipf_fit(&init, &targets, &IpfConfig::default()).unwrap();
        prop_assert!(report.converged);
        let dz = (&fit.zy_marginal() - &targets.zy).mapv(f64::abs).sum();
        let db = (&fit.yb_marginal() - &targets.yb).mapv(f64::abs).sum();
        prop_assert!(dz < 1e-7 && db < 1e-7, "{dz} {db}");
    }

    #[test]
    fn pgd_beats_uniform_and_stays_stochastic(q in 2usize..6, l in 2usize..8, seed in 0u64..1000) {
        let mut r = rng::rng(seed);
        let p_yz = stochastic(&mut r, 2, q);
        let p_yb = stochastic(&mut r, 2, l);
        let sol = pgd_solve(&p_yz, &p_yb, &PgdConfig::default(), seed).unwrap();
        let a = sol.matrix.as_array();
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        let uniform = Array2::from_elem((q, l), 1.0 / l as f64);
        prop_assert!(sol.residual <= frobenius_residual(&p_yz, &p_yb, &uniform) + 1e-12);
    }

    #[test]
    fn regimes_keep_global_proportion(l in 2usize..11, pos_share in 0.25f64..0.75, regime in 0usize..3, unequal: bool) {
        let n = 2000;
        let positives = (pos_share * n as f64).round() as usize;
        let size_regime = if unequal { SizeRegime::NotEqual } else { SizeRegime::Equal };
        let sizes = bag_sizes(size_regime, n, l).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let cfg = RegimeConfig::default();
        if let Ok(rows) = proportions(ProportionRegime::ALL[regime], &sizes, positives, &cfg) {
            let mass: f64 = rows.iter().zip(&sizes).map(|(r, &s)| r[1] * s as f64).sum();
            prop_assert!((mass - positives as f64).abs() < 1e-6 * n as f64);
            for r in &rows {
                prop_assert!(r[1] >= cfg.clamp[0] - 1e-12 && r[1] <= cfg.clamp[1] + 1e-12);
                prop_assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn naive_exact_sizes() {
    let base = Arc::new(two_gaussians(1000, 0.5, 3));
    let sizes = vec![100, 200, 300, 400];
    let g = baggen::generate(
        base,
        &spec(Variant::Naive, sizes.clone(), vec![vec![0.5, 0.5]; 4], 1),
        None,
        &GenConfig::default(),
    )
    .unwrap();
    assert_eq!(g.instance.realized_sizes(), &sizes[..]);
}

#[test]
fn far_intermediate_on_uninformative_features_warns() {
    // labels independent of features: every cluster sits near the global proportion
    let mut r = rng::rng(5);
    let x = Array2::from_shape_simple_fn((1000, 2), || r.random::<f64>());
    let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
    let base = Arc::new(BaseDataset::new(x, labels, vec!["a".into(), "b".into()], 2).unwrap());
    let sizes = bag_sizes(SizeRegime::Equal, 1000, 4).unwrap();
    let rows = proportions(
        ProportionRegime::FarGlobal,
        &sizes,
        500,
        &RegimeConfig::default(),
    )
    .unwrap();
    let g = baggen::generate(
        base,
        &spec(Variant::Intermediate, sizes, rows, 2),
        None,
        &GenConfig::default(),
    )
    .unwrap();
    assert!(
        g.report.has_warning(WARN_INFEASIBLE_RESIDUAL),
        "{:?}",
        g.report.warnings
    );
}

#[test]
fn hard_instance_survives_disk_round_trip() {
    let base = Arc::new(two_gaussians(600, 0.5, 8));
    let sizes = bag_sizes(SizeRegime::NotEqual, 600, 4).unwrap();
    let rows = proportions(
        ProportionRegime::Mixed,
        &sizes,
        base.class_counts()[1],
        &RegimeConfig::default(),
    )
    .unwrap();
    let g = baggen::generate(
        base,
        &spec(Variant::Hard, sizes, rows, 8),
        None,
        &GenConfig::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (t, s) = (dir.path().join("i.csv"), dir.path().join("i.json"));
    write_instance(&g.instance, &t, &s).unwrap();
    let back = read_instance(&t, &s).unwrap();
    assert_eq!(back.contingency(), g.instance.contingency());
    assert_eq!(back.features(), g.instance.features());
    assert_eq!(back.spec(), g.instance.spec());
}

#[test]
fn generation_is_deterministic() {
    let base = Arc::new(two_gaussians(800, 0.5, 9));
    let sizes = bag_sizes(SizeRegime::Equal, 800, 4).unwrap();
    let rows = proportions(
        ProportionRegime::CloseGlobal,
        &sizes,
        base.class_counts()[1],
        &RegimeConfig::default(),
    )
    .unwrap();
    for v in Variant::ALL {
        let s = spec(v, sizes.clone(), rows.clone(), 77);
        let a = baggen::generate(base.clone(), &s, None, &GenConfig::default()).unwrap();
        let b = baggen::generate(base.clone(), &s, None, &GenConfig::default()).unwrap();
        assert_eq!(a.instance.bag_ids(), b.instance.bag_ids(), "{v}");
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }
}
