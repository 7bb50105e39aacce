use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use comprint_core::dataset::synth::natural_gray;
use comprint_core::localization::{build_feature_field, em_fit, EmOptions};
use comprint_core::metrics::{max_mcc, ThresholdMode};
use comprint_core::net::{make_model, FingerprintNetConfig};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            (format!("threads={n}"), pool)
        })
        .collect()
}

fn bench_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plane = natural_gray((128, 128), 3);
    let model = make_model(FingerprintNetConfig::small(5, 16), 1).unwrap();
    let quantized = Array2::from_shape_fn((400, 400), |_| rng.random_range(-1i8..=1));
    let g = Normal::new(0.0, 1.0).unwrap();
    let points = Array2::from_shape_fn((1000, 25), |(i, j)| {
        g.sample(&mut rng) + if i % 3 == 0 && j == 0 { 4.0 } else { 0.0 }
    });
    let heat = Array2::from_shape_fn((400, 400), |_| rng.random::<f32>());
    let mask = Array2::from_shape_fn((400, 400), |(_, x)| u8::from(x >= 200));
    let em = EmOptions {
        restarts: 2,
        ..EmOptions::default()
    };

    for (label, pool) in pools() {
        let mut group = c.benchmark_group("kernels");
        group.sample_size(10);
        group.bench_function(BenchmarkId::new("conv_forward_128", &label), |b| {
            b.iter(|| pool.install(|| model.apply_plane(&plane)))
        });
        group.bench_function(BenchmarkId::new("feature_field_400", &label), |b| {
            b.iter(|| pool.install(|| build_feature_field(&quantized, 1, 64, 8, 4).unwrap()))
        });
        group.bench_function(BenchmarkId::new("em_fit_1000x25", &label), |b| {
            b.iter(|| pool.install(|| em_fit(&points, false, &em).unwrap()))
        });
        group.bench_function(BenchmarkId::new("max_mcc_400", &label), |b| {
            b.iter(|| pool.install(|| max_mcc(&heat, &mask, ThresholdMode::Quantile(256)).unwrap()))
        });
        group.finish();
    }
}

criterion_group!(benches, bench_kernels);
criterion_main!(benches);
