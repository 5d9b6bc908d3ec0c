use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use llp_core::baggen::regimes::{
    bag_sizes, proportions, ProportionRegime, RegimeConfig, SizeRegime,
};
use llp_core::baggen::{self, GenConfig};
use llp_core::citest::{verify_variant, CiConfig};
use llp_core::cluster::{kmeans, KMeansConfig};
use llp_core::dataset::{AssignmentMode, GenSpec, LlpInstance, Variant};
use llp_core::learners::{Algorithm, HyperGrid, LearnerConfig};
use llp_core::modelsel::{select, SelectionStrategy, StrategyKind};
use llp_core::synthetic::two_gaussians;

fn instance() -> LlpInstance {
    let base = Arc::new(two_gaussians(2000, 0.5, 1));
    let sizes = bag_sizes(SizeRegime::Equal, 2000, 5).unwrap();
    let rows = proportions(
        ProportionRegime::FarGlobal,
        &sizes,
        base.class_counts()[1],
        &RegimeConfig::default(),
    )
    .unwrap();
    let spec = GenSpec {
        variant: Variant::Simple,
        n_bags: 5,
        bag_sizes: sizes,
        proportions: rows,
        n_clusters: 5,
        assignment_mode: AssignmentMode::Exact,
        seed: 1,
    };
    baggen::generate(base, &spec, None, &GenConfig::default())
        .unwrap()
        .instance
}

fn pools(c: &mut Criterion) {
    let ds = two_gaussians(2000, 0.5, 1);
    let inst = instance();
    let bags = inst.bag_data();
    let grid = HyperGrid::published();
    let strategy = SelectionStrategy::new(StrategyKind::SplitBagKFold);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();

    for (name, pool) in [("one_thread", &single), ("default_pool", &default)] {
        let mut g = c.benchmark_group(name);
        g.sample_size(10);
        g.bench_function("kmeans_restarts", |b| {
            b.iter(|| pool.install(|| kmeans(&ds, 5, 7, KMeansConfig::default()).unwrap()))
        });
        g.bench_function("verify_variant", |b| {
            b.iter(|| {
                pool.install(|| verify_variant(&inst, 0.05, &CiConfig::default(), 3).unwrap())
            })
        });
        g.bench_function("select_mm_grid", |b| {
            b.iter(|| {
                pool.install(|| {
                    select(
                        Algorithm::Mm,
                        &bags,
                        &grid,
                        &strategy,
                        3,
                        &LearnerConfig::default(),
                    )
                    .unwrap()
                })
            })
        });
        g.finish();
    }
}

criterion_group!(benches, pools);
criterion_main!(benches);
