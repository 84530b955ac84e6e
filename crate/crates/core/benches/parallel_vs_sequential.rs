use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedod::detmetrics::{evaluate_with, SizeBuckets};
use fedod::synthdata::{build_partitions, build_partitions_with, PartitionSpec};
use fedod::tinydet::{batch_gradient, infer_batch, init_params, DetectorConfig};
use fedod::{Execution, Rng};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gradient(c: &mut Criterion) {
    let cfg = DetectorConfig::default();
    let w = init_params(&cfg, &mut Rng::new(1)).unwrap().to_flat();
    let samples = build_partitions(&PartitionSpec::cabin2(1))
        .unwrap()
        .clients
        .remove(0)
        .train;
    let batch: Vec<usize> = (0..cfg.batch_size.min(samples.len())).collect();
    let mut g = c.benchmark_group("batch_gradient");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&cfg, &w, &samples, &batch, exec).unwrap())
        });
    }
    g.finish();
}

fn partitions(c: &mut Criterion) {
    let spec = PartitionSpec::cabin2(1);
    let mut g = c.benchmark_group("build_partitions");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_partitions_with(&spec, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let cfg = DetectorConfig::default();
    let p = init_params(&cfg, &mut Rng::new(2)).unwrap();
    let test = build_partitions(&PartitionSpec::cabin2(2)).unwrap().cross_test;
    let images: Vec<_> = test.iter().map(|s| &s.image).collect();
    let dets = infer_batch(&p, &images, &cfg, 0.001, 0.45, Execution::Sequential).unwrap();
    let truths: Vec<_> = test.iter().map(|s| s.boxes.clone()).collect();
    let buckets = SizeBuckets::default();
    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_with(&dets, &truths, cfg.num_classes, &buckets, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gradient, partitions, evaluation);
criterion_main!(benches);
