use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pwconv::cloud::FeatureMap;
use pwconv::exec::Exec;
use pwconv::harness::uniform_cloud;
use pwconv::pointconv::{conv_backward, conv_forward_binned, ConvParams, Geometry, KernelSpec, Neighborhoods};
use pwconv::rng::XorShift64;
use pwconv::spatial::build_grid;

const N: usize = 8192;
const RADIUS: f64 = 0.1;

fn executors() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::sequential())];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Exec::available()));
    }
    v
}

fn setup() -> (pwconv::PointCloud, FeatureMap<f32>, ConvParams<f32>, KernelSpec) {
    let cloud = uniform_cloud(N, 3);
    let mut rng = XorShift64::new(9);
    let feats = FeatureMap::from_fn(N, 8, |_, _| rng.uniform(-1.0, 1.0) as f32);
    let kernel = KernelSpec::new(RADIUS, 3, Geometry::Ball).unwrap();
    let mut params = ConvParams::zeros(8, 16, kernel.cells());
    params.weights.iter_mut().for_each(|w| *w = rng.uniform(-0.1, 0.1) as f32);
    (cloud, feats, params, kernel)
}

fn neighbors(c: &mut Criterion) {
    let (cloud, feats, params, kernel) = setup();
    let grid = build_grid(&cloud, RADIUS).unwrap();
    let mut group = c.benchmark_group("grid_sweep");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| exec.install(|| black_box(Neighborhoods::build(&cloud, &kernel, &grid, exec).unwrap())))
        });
    }
    group.finish();

    let nb = Arc::new(Neighborhoods::build(&cloud, &kernel, &grid, &Exec::sequential()).unwrap());
    let mut group = c.benchmark_group("conv_forward");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| exec.install(|| black_box(conv_forward_binned(&nb, &feats, &params, exec).unwrap())))
        });
    }
    group.finish();

    let (out, cache) = conv_forward_binned(&nb, &feats, &params, &Exec::sequential()).unwrap();
    let mut group = c.benchmark_group("conv_backward");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| exec.install(|| black_box(conv_backward(&cache, &params, &out, exec).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, neighbors);
criterion_main!(benches);
