use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfdma_core::abg::{abg_eval, abg_fit, FitSample};
use sfdma_core::dataset::SyntheticSpec;
use sfdma_core::harness::{cdf_experiment, DEFAULT_CURVE};
use sfdma_core::power::{direct_solve, simplex_solve, PowerProblem};
use sfdma_core::rib::{entropy_y_given_s, mixture_entropy, pattern_means, pattern_weights};
use sfdma_core::trainer::train;
use sfdma_core::{DatasetSpec, SymbolDistribution, TrainConfig};

fn bench_entropy(c: &mut Criterion) {
    let weights = pattern_weights(&[0.3, 0.6, 0.8]);
    let means = pattern_means(0.0, &[1.0, 0.7, 0.5]);
    c.bench_function("mixture_entropy_8_components", |b| {
        b.iter(|| mixture_entropy(black_box(&means), black_box(&weights), 0.6).unwrap())
    });
    let own = SymbolDistribution::new(vec![0.4; 16]).unwrap();
    let other = SymbolDistribution::new(vec![0.7; 16]).unwrap();
    c.bench_function("entropy_y_given_s_two_users", |b| {
        b.iter(|| {
            entropy_y_given_s(
                &own,
                std::slice::from_ref(&other),
                &[1.0],
                1.0,
                1.0,
                black_box(3),
            )
            .unwrap()
        })
    });
}

fn bench_power(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let problems: Vec<PowerProblem> = (0..64)
        .map(|_| {
            let v = |r: &mut ChaCha8Rng, lo: f64, hi: f64| {
                (0..3).map(|_| r.random_range(lo..hi)).collect()
            };
            PowerProblem::new(
                v(&mut rng, 0.05, 0.5),
                v(&mut rng, 0.1, 3.0),
                v(&mut rng, 0.5, 2.0),
            )
            .unwrap()
        })
        .collect();
    c.bench_function("simplex_solve_3_users_x64", |b| {
        b.iter(|| {
            problems
                .iter()
                .map(|p| simplex_solve(p).unwrap().total)
                .sum::<f64>()
        })
    });
    c.bench_function("direct_solve_3_users_x64", |b| {
        b.iter(|| {
            problems
                .iter()
                .map(|p| direct_solve(p).unwrap().total)
                .sum::<f64>()
        })
    });
}

fn bench_abg(c: &mut Criterion) {
    let samples: Vec<FitSample> = (0..20)
        .map(|k| {
            let sinr = 10f64.powf(-2.0 + 4.0 * k as f64 / 19.0);
            FitSample {
                sinr,
                phi: abg_eval(&DEFAULT_CURVE, sinr).unwrap(),
            }
        })
        .collect();
    c.bench_function("abg_fit_20_samples", |b| {
        b.iter(|| abg_fit(black_box(&samples)).unwrap())
    });
}

fn bench_train_and_cdf(c: &mut Criterion) {
    let cfg = TrainConfig {
        epochs: 1,
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            classes: 4,
            input_dim: 8,
            per_class: 16,
            spread: 0.5,
            separation: 2.0,
        }),
        ..TrainConfig::default()
    };
    let data = cfg.train_datasets().unwrap();
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("train_one_epoch_64_samples", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| train(&cfg, &data).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let curves = [DEFAULT_CURVE; 2];
    group.bench_function("cdf_1000_draws", |b| {
        b.iter(|| cdf_experiment(&curves, &[92.0, 92.0], &[1.0, 1.0], 1000, 3).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_entropy,
    bench_power,
    bench_abg,
    bench_train_and_cdf
);
criterion_main!(benches);
