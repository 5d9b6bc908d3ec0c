use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use llp_core::baggen::regimes::{
    bag_sizes, proportions, ProportionRegime, RegimeConfig, SizeRegime,
};
use llp_core::baggen::{self, GenConfig};
use llp_core::dataset::{train_test_split, AssignmentMode, BagData, GenSpec, LlpInstance, Variant};
use llp_core::harness::{f1_score, run_benchmark, run_once, BenchmarkConfig};
use llp_core::learners::{
    calibrate_bag, calibrate_bag_multiclass, fit, kl_divergence, Algorithm, DllpConfig, GridAxis,
    HyperGrid, Hyperparameters, LLPModel, LearnerConfig, Parameters, TrainingMeta,
};
use llp_core::modelsel::{make_folds, select, SelectionStrategy, StrategyKind};
use llp_core::synthetic::{two_gaussians, TwoGaussians};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn simple_instance(base: llp_core::dataset::BaseDataset, n_bags: usize, seed: u64) -> LlpInstance {
    let base = Arc::new(base);
    let sizes = bag_sizes(SizeRegime::Equal, base.n_items(), n_bags).unwrap();
    let rows = proportions(
        ProportionRegime::FarGlobal,
        &sizes,
        base.class_counts()[1],
        &RegimeConfig::default(),
    )
    .unwrap();
    let spec = GenSpec {
        variant: Variant::Simple,
        n_bags,
        bag_sizes: sizes,
        proportions: rows,
        n_clusters: n_bags,
        assignment_mode: AssignmentMode::Exact,
        seed,
    };
    baggen::generate(base, &spec, None, &GenConfig::default())
        .unwrap()
        .instance
}

fn hps(pairs: &[(&str, f64)]) -> Hyperparameters {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn small_learner() -> LearnerConfig {
    LearnerConfig {
        dllp: DllpConfig {
            hidden: vec![8],
            epochs: 5,
        },
        ..LearnerConfig::default()
    }
}

fn one_axis_grid(alg: Algorithm, name: &str, values: &[f64]) -> HyperGrid {
    HyperGrid {
        axes: BTreeMap::from([(
            alg,
            vec![GridAxis {
                name: name.into(),
                values: values.to_vec(),
            }],
        )]),
    }
}

fn synthetic_bags(sizes: &[usize]) -> BagData {
    let n: usize = sizes.iter().sum();
    let ids: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
    let p = Array2::from_shape_fn((sizes.len(), 2), |(_, c)| if c == 0 { 0.4 } else { 0.6 });
    BagData::new(x, ids, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibrated_bag_hits_its_proportion(logits in proptest::collection::vec(-6.0f64..6.0, 2..40), target in 0.02f64..0.98) {
        let q = calibrate_bag(&logits, target);
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        prop_assert!((mean - target).abs() < 1e-6, "{mean} vs {target}");
        prop_assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn multiclass_calibration_hits_its_proportions(raw in proptest::collection::vec(0.05f64..1.0, 30), t in proptest::collection::vec(0.1f64..1.0, 3)) {
        let mut probs = Array2::from_shape_vec((10, 3), raw).unwrap();
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let s: f64 = t.iter().sum();
        let target = Array1::from_iter(t.iter().map(|v| v / s));
        let q = calibrate_bag_multiclass(&probs, target.view());
        let means = q.mean_axis(Axis(0)).unwrap();
        for c in 0..3 {
            prop_assert!((means[c] - target[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative(a in proptest::collection::vec(0.01f64..1.0, 4), b in proptest::collection::vec(0.01f64..1.0, 4)) {
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let p = Array1::from_iter(a.iter().map(|v| v / sa));
        let q = Array1::from_iter(b.iter().map(|v| v / sb));
        prop_assert!(kl_divergence(p.view(), q.view()) >= -1e-15);
        prop_assert!(kl_divergence(p.view(), p.view()).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_items_and_bags(sizes in proptest::collection::vec(6usize..20, 3..8), k in 2usize..4, seed: u64) {
        let bags = synthetic_bags(&sizes);
        let n = bags.n_items();
        for kind in [StrategyKind::FullBagKFold, StrategyKind::SplitBagKFold] {
            let strategy = SelectionStrategy { k, ..SelectionStrategy::new(kind) };
            let folds = make_folds(&bags, &strategy, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut seen = vec![0usize; n];
            for f in &folds {
                for &p in &f.validation_positions {
                    seen[p] += 1;
                }
                let mut all: Vec<usize> = f.train_positions.iter().chain(&f.validation_positions).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                if kind == StrategyKind::FullBagKFold {
                    // whole bags: no bag on both sides
                    let tb: BTreeSet<usize> = f.train_positions.iter().map(|&p| bags.bag_ids[p]).collect();
                    prop_assert!(f.validation_positions.iter().all(|&p| !tb.contains(&bags.bag_ids[p])));
                } else {
                    prop_assert_eq!(f.validation.n_bags(), sizes.len());
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(&folds, &make_folds(&bags, &strategy, seed).unwrap());
        }
    }
}

#[test]
fn amm_objective_never_increases() {
    let inst = simple_instance(two_gaussians(400, 0.5, 21), 4, 21);
    let model = fit(
        Algorithm::Amm,
        &inst.bag_data(),
        &hps(&[("lambda", 1.0), ("gamma", 0.1)]),
        0,
        &LearnerConfig::default(),
    )
    .unwrap();
    let t = &model.training_meta.trace;
    assert!(!t.is_empty());
    assert!(t.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{t:?}");
}

#[test]
fn predicted_proportions_are_stochastic_for_every_learner() {
    let inst = simple_instance(two_gaussians(300, 0.5, 5), 3, 5);
    let bags = inst.bag_data();
    let h = hps(&[
        ("C", 1.0),
        ("lambda", 1.0),
        ("gamma", 0.1),
        ("sigma", 1.0),
        ("alpha", 1e-2),
    ]);
    for alg in Algorithm::ALL {
        let model = fit(alg, &bags, &h, 3, &small_learner()).unwrap();
        assert!(model.weights_finite(), "{alg}");
        let p = model.predict_proportions(&bags).unwrap();
        assert_eq!(p.dim(), (3, 2));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9, "{alg}: {row}");
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn confident_model_reproduces_realized_proportions() {
    // label 1 items sit at +1, label 0 at -1
    let labels = [1, 1, 0, 0, 0, 1, 0, 0, 1, 1, 1, 0];
    let ids = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    let x = Array2::from_shape_fn((12, 1), |(i, _)| if labels[i] == 1 { 1.0 } else { -1.0 });
    let mut realized = Array2::<f64>::zeros((3, 2));
    for (&b, &y) in ids.iter().zip(&labels) {
        realized[[b, y]] += 0.25;
    }
    let bags = BagData::new(x, ids.to_vec(), realized.clone()).unwrap();
    let model = LLPModel {
        algorithm: Algorithm::Mm,
        n_features: 1,
        n_classes: 2,
        hyperparameters: Hyperparameters::new(),
        parameters: Parameters::Linear {
            theta: vec![60.0, 0.0],
        },
        training_meta: TrainingMeta {
            iterations: 0,
            final_loss: 0.0,
            trace: vec![],
        },
    };
    let p = model.predict_proportions(&bags).unwrap();
    assert!((&p - &realized).mapv(f64::abs).sum() < 1e-9, "{p}");
}

#[test]
fn single_point_and_duplicate_grids() {
    let inst = simple_instance(two_gaussians(300, 0.5, 6), 4, 6);
    let bags = inst.bag_data();
    let strategy = SelectionStrategy {
        k: 3,
        ..SelectionStrategy::new(StrategyKind::SplitBagKFold)
    };
    let one = select(
        Algorithm::Mm,
        &bags,
        &one_axis_grid(Algorithm::Mm, "lambda", &[10.0]),
        &strategy,
        1,
        &small_learner(),
    )
    .unwrap();
    assert_eq!(one.best_index, 0);
    assert_eq!(one.best_hyperparameters["lambda"], 10.0);
    let dup = select(
        Algorithm::Mm,
        &bags,
        &one_axis_grid(Algorithm::Mm, "lambda", &[1.0, 1.0, 1.0]),
        &strategy,
        1,
        &small_learner(),
    )
    .unwrap();
    assert_eq!(dup.best_index, 0);
    assert!(dup
        .scores
        .windows(2)
        .all(|w| w[0].mean_score == w[1].mean_score));
}

#[test]
fn emlr_selection_stays_near_the_labelled_best() {
    let inst = simple_instance(two_gaussians(800, 0.5, 13), 5, 13);
    let (train, test) = train_test_split(&inst, 0.75, 2).unwrap();
    let bags = train.bag_data();
    let values = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];
    let grid = one_axis_grid(Algorithm::Emlr, "C", &values);
    let strategy = SelectionStrategy::new(StrategyKind::SplitBagKFold);
    let chosen = select(
        Algorithm::Emlr,
        &bags,
        &grid,
        &strategy,
        4,
        &LearnerConfig::default(),
    )
    .unwrap();
    let f1_of = |c: f64| {
        let m = fit(
            Algorithm::Emlr,
            &bags,
            &hps(&[("C", c)]),
            0,
            &LearnerConfig::default(),
        )
        .unwrap();
        f1_score(&test.labels(), &m.predict(&test.features()).unwrap(), 2)
    };
    let best = values.iter().map(|&c| f1_of(c)).fold(f64::MIN, f64::max);
    let got = f1_of(chosen.best_hyperparameters["C"]);
    assert!(got >= best - 0.05, "selected {got}, labelled best {best}");
}

#[test]
fn run_once_is_deterministic_and_separable_data_is_learned() {
    let wide = TwoGaussians {
        n_items: 400,
        offset: 6.0,
        ..TwoGaussians::default()
    }
    .generate(17);
    let inst = simple_instance(wide, 4, 17);
    let grid = one_axis_grid(Algorithm::Emlr, "C", &[1.0, 10.0]);
    let strategy = SelectionStrategy {
        k: 3,
        ..SelectionStrategy::new(StrategyKind::SplitBagKFold)
    };
    let a = run_once(
        &inst,
        Algorithm::Emlr,
        &strategy,
        &grid,
        0.75,
        99,
        &LearnerConfig::default(),
    )
    .unwrap();
    let b = run_once(
        &inst,
        Algorithm::Emlr,
        &strategy,
        &grid,
        0.75,
        99,
        &LearnerConfig::default(),
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1, 1.0);
}

#[test]
fn benchmark_runs_the_requested_executions_with_distinct_seeds() {
    let inst = simple_instance(two_gaussians(300, 0.5, 3), 3, 3);
    let grid = one_axis_grid(Algorithm::Mm, "lambda", &[1.0]);
    let strategies = [
        SelectionStrategy {
            k: 3,
            ..SelectionStrategy::new(StrategyKind::FullBagKFold)
        },
        SelectionStrategy::new(StrategyKind::SplitBagShuffle),
    ];
    let cfg = BenchmarkConfig {
        n_executions: 2,
        ..BenchmarkConfig::default()
    };
    let records = run_benchmark("d", &inst, &[Algorithm::Mm], &strategies, &grid, &cfg).unwrap();
    assert_eq!(records.len(), 2);
    let mut seeds = BTreeSet::new();
    for r in &records {
        assert_eq!(r.executions.len(), 2);
        assert!(r.valid);
        for e in &r.executions {
            assert!(e.test_f1.is_some(), "{:?}", e.error);
            assert!(seeds.insert(e.seed));
        }
    }
}
