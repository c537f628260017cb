// Sequential vs rayon-parallel throughput. "sequential" runs inside a
// one-thread pool, "parallel" inside the default pool; results are
// bit-identical either way. Built without the `parallel` feature both
// variants take the sequential path.

use std::hint::black_box;

use cellfree::dataset::{assemble_dataset, Seeds, TargetMode};
use cellfree::geometry::{CaseId, NetworkConfig};
use cellfree::nn::{build_conv_net, build_dense_net, ForwardMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pools() -> [(&'static str, rayon::ThreadPool); 2] {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    [("sequential", one), ("parallel", all)]
}

fn assembly(c: &mut Criterion) {
    let cfg = NetworkConfig { num_setups: 8, num_realizations: 20, ..CaseId::Desk.config() };
    let mut group = c.benchmark_group("assemble_dataset");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "desk_s8_o20"), |b| {
            b.iter(|| {
                pool.install(|| {
                    assemble_dataset(CaseId::Desk, black_box(&cfg), Seeds { master: 7 }, TargetMode::SetupSummary)
                        .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let rows = 2048;
    let dense_in = 32;
    let x: Vec<f32> = (0..rows * dense_in).map(|i| ((i * 37 % 101) as f32 - 50.0) / 50.0).collect();
    let mut group = c.benchmark_group("forward");
    for (name, pool) in pools() {
        let parallel = name == "parallel";
        let mut dense = build_dense_net::<f32>(dense_in, 4, 1).unwrap();
        dense.set_parallel(parallel);
        let mut conv = build_conv_net::<f32>(dense_in, 4, 1).unwrap();
        conv.set_parallel(parallel);
        group.bench_function(BenchmarkId::new(name, "dense_2048"), |b| {
            b.iter(|| pool.install(|| dense.forward(black_box(&x), rows, ForwardMode::Inference).unwrap()))
        });
        group.bench_function(BenchmarkId::new(name, "conv_2048"), |b| {
            b.iter(|| pool.install(|| conv.forward(black_box(&x), rows, ForwardMode::Inference).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, inference);
criterion_main!(benches);
