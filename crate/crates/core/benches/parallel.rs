use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedembed::eval::l2_distance_matrix_with;
use fedembed::federation::Federation;
use fedembed::presets::{benchmark_config, benchmark_suite};
use fedembed::rng::seeded;
use fedembed::ExecMode;
use ndarray::Array2;
use rand::Rng;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn federation_epoch(c: &mut Criterion) {
    let (train, _) = benchmark_suite().generate(0).unwrap();
    let mut group = c.benchmark_group("federation_epoch");
    for local_steps in [1, 10] {
        for (name, exec) in MODES {
            let mut cfg = benchmark_config();
            cfg.exec = exec;
            cfg.local_steps = local_steps;
            cfg.epochs = usize::MAX;
            let mut fed = Federation::new(&cfg, train.clone()).unwrap();
            group.bench_with_input(BenchmarkId::new(name, format!("t{local_steps}")), &(), |b, _| {
                b.iter(|| black_box(fed.run_epoch().unwrap()))
            });
        }
    }
    group.finish();
}

fn distance_matrix(c: &mut Criterion) {
    let mut rng = seeded(1);
    let q = Array2::from_shape_fn((200, 64), |_| rng.random_range(-1.0..1.0));
    let g = Array2::from_shape_fn((800, 64), |_| rng.random_range(-1.0..1.0));
    let mut group = c.benchmark_group("distance_matrix_200x800");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(l2_distance_matrix_with(exec, q.view(), g.view()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, federation_epoch, distance_matrix);
criterion_main!(benches);
