//! Criterion benchmarks for the kernels the attack loop spends its time
//! in: convolution forward, the decomposition and its adjoint, a full
//! attack step with and without the spectral hook, and linear CKA.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use svdatk_bench::{fresh_model, image_batch, random_vec, random_vec_f64};
use svdatk_core::attack::{run_attack, AttackConfig, SvdHook};
use svdatk_core::cka::linear_cka;
use svdatk_core::spectral::{svd, truncation_backward};
use svdatk_core::tensor::{Graph, Tensor};

fn bench_conv_forward(c: &mut Criterion) {
    let x = Tensor::new(vec![8, 16, 16, 16], random_vec(1, 8 * 16 * 16 * 16)).unwrap();
    let w = Tensor::new(vec![32, 16, 3, 3], random_vec(2, 32 * 16 * 9)).unwrap();
    let b = Tensor::new(vec![32], random_vec(3, 32)).unwrap();
    c.bench_function("conv2d_forward_8x16x16x16_to_32", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let xi = g.leaf(black_box(x.clone()));
            let wi = g.leaf(w.clone());
            let bi = g.leaf(b.clone());
            black_box(g.conv2d(xi, wi, bi, 1, 1).unwrap())
        })
    });
}

fn bench_model_forward(c: &mut Criterion) {
    let model = fresh_model();
    let (x, _) = image_batch(8);
    c.bench_function("model_forward_8_images", |bench| {
        bench.iter(|| black_box(model.predict(black_box(&x)).unwrap()))
    });
}

fn bench_svd(c: &mut Criterion) {
    let x = random_vec(4, 48 * 64);
    c.bench_function("svd_48x64_f32", |bench| {
        bench.iter(|| black_box(svd(black_box(&x), 48, 64).unwrap()))
    });
}

fn bench_truncation_backward(c: &mut Criterion) {
    let x = random_vec(5, 48 * 64);
    let up = random_vec(6, 48 * 64);
    c.bench_function("truncation_backward_48x64_k1", |bench| {
        bench.iter(|| {
            black_box(truncation_backward(black_box(&x), 48, 64, 1, &up, 1e-6f32, false).unwrap())
        })
    });
}

fn bench_attack_step(c: &mut Criterion) {
    let model = fresh_model();
    let (x, y) = image_batch(2);
    let plain = AttackConfig { steps: 1, ..AttackConfig::default() };
    let hooked =
        AttackConfig { steps: 1, svd: Some(SvdHook::default()), ..AttackConfig::default() };
    let mut group = c.benchmark_group("attack_step_2_images");
    group.sample_size(10);
    group.bench_function("plain", |bench| {
        bench.iter(|| black_box(run_attack(&model, &x, &y, &plain).unwrap()))
    });
    group.bench_function("svd_hook", |bench| {
        bench.iter(|| black_box(run_attack(&model, &x, &y, &hooked).unwrap()))
    });
    group.finish();
}

fn bench_linear_cka(c: &mut Criterion) {
    let x = random_vec_f64(7, 100 * 256);
    let y = random_vec_f64(8, 100 * 256);
    c.bench_function("linear_cka_100x256", |bench| {
        bench.iter(|| black_box(linear_cka(black_box(&x), &y, 100, 256, 256, true).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_conv_forward,
    bench_model_forward,
    bench_svd,
    bench_truncation_backward,
    bench_attack_step,
    bench_linear_cka
);
criterion_main!(benches);
