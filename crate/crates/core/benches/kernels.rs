//! Parallel vs sequential timings for the hot kernels.
//!
//! Every group runs the same closure twice: once with the default dispatch
//! and once inside `par::sequential`. Without the `parallel` feature both
//! rows measure the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rcdm_core::data::WindowMode;
use rcdm_core::model::{build_model, run_sequence, ModelConfig};
use rcdm_core::nn::{conv2d, deformable_conv2d, ConvSpec};
use rcdm_core::par;
use rcdm_core::rng::RngStream;
use rcdm_core::{DType, Tensor};

fn both<F: Fn()>(c: &mut Criterion, group: &str, size: usize, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::new("parallel", size), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("sequential", size), |b| {
        b.iter(|| par::sequential(&f))
    });
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let mut rng = RngStream::new(0);
    for size in [32, 64] {
        let spec = ConvSpec::new2d(16, 16, 3);
        let x = Tensor::uniform(&[16, size, size], -1.0, 1.0, &mut rng, DType::F32);
        let w = Tensor::uniform(&spec.weight_shape(), -0.1, 0.1, &mut rng, DType::F32);
        let b = Tensor::zeros(&[16], DType::F32);
        let off = Tensor::uniform(&[2 * 9, size, size], -1.5, 1.5, &mut rng, DType::F32);
        both(c, "conv2d_16x16_k3", size, || {
            black_box(conv2d(&x, &w, Some(&b), &spec).unwrap());
        });
        both(c, "deformable_conv2d_16x16_k3", size, || {
            black_box(deformable_conv2d(&x, &w, Some(&b), &off, &spec).unwrap());
        });
    }
}

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::unit();
    let weights = build_model(&cfg, 0).unwrap();
    let mut rng = RngStream::new(1);
    let size = 32;
    let frames = Tensor::uniform(&[6, 1, 3, size, size], 0.0, 1.0, &mut rng, DType::F32);
    both(c, "run_sequence_unit_2_windows", size, || {
        black_box(run_sequence(&frames, &weights, &cfg, WindowMode::Center).unwrap());
    });
}

criterion_group!(benches, kernels, model);
criterion_main!(benches);
