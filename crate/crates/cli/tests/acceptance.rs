//! Acceptance suite: one test per release criterion. Each test prints a
//! single `ACCEPTANCE <name>: PASS|FAIL (detail)` line before asserting, so
//! `cargo test -p svdatk-cli --test acceptance -- --nocapture` yields a
//! scoreboard. Tests that need trained models share a lazily built fixture
//! (three architectures trained with default settings on generated data);
//! the pure-numerics criteria run without it.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use svdatk_cli::commands::{model_seed, resolve_k};
use svdatk_core::attack::{
    run_attack, run_attack_traced, success_rate, AdversarialBatch, AttackConfig, Method, SvdHook,
    Transform,
};
use svdatk_core::cka::{cka_layerwise, linear_cka};
use svdatk_core::data::generate_range;
use svdatk_core::models::{
    load_checkpoint, save_checkpoint, slice_batch, train, ArchId, CheckpointMeta, LayerGraph,
    TrainConfig,
};
use svdatk_core::rng::{purpose, stream};
use svdatk_core::spectral::{svd, topk_of, topk_reconstruct, truncation_backward};
use svdatk_core::tensor::{grad_check, DiPlacement, Element, Graph, NodeId, PoolKind, Tensor};

// ── Scoreboard helper ───────────────────────────────────────────────────

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

// ── Shared fixture: three trained models + a held-out attack pool ───────

struct Fixture {
    models: Vec<(ArchId, LayerGraph<f32>)>,
    eval_x: Tensor<f32>,
    eval_y: Vec<usize>,
}

impl Fixture {
    fn model(&self, arch: ArchId) -> &LayerGraph<f32> {
        &self.models.iter().find(|(a, _)| *a == arch).expect("arch trained").1
    }

    /// `n` attack-pool images starting at `start`, with their labels.
    fn window(&self, start: usize, n: usize) -> (Tensor<f32>, Vec<usize>) {
        assert!(start + n <= self.eval_y.len(), "window past the pool");
        let x = slice_batch(&self.eval_x, start, start + n);
        (x, self.eval_y[start..start + n].to_vec())
    }
}

/// FNV-1a, for fingerprinting the training inputs in cache file names.
fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

static FIXTURE: LazyLock<Fixture> = LazyLock::new(|| {
    let t0 = Instant::now();
    let train_set = generate_range(0, 0, 1200);
    let test_set = generate_range(0, 1200, 300);
    let eval_set = generate_range(0, 1500, 500);
    let (tx, ty) = train_set.to_batch::<f32>();
    let (vx, vy) = test_set.to_batch::<f32>();
    let (ex, ey) = eval_set.to_batch::<f32>();

    // Cache trained models under target/; the fingerprint covers the data
    // and the training settings, so edits to either retrain automatically.
    let cfg0 = TrainConfig::default();
    let cfg_bytes = format!(
        "e{} lr{} d{} b{} m{}",
        cfg0.epochs, cfg0.lr, cfg0.lr_decay, cfg0.batch_size, cfg0.momentum
    );
    let fp = fnv1a(&[&train_set.images, &train_set.labels, cfg_bytes.as_bytes()]);
    let cache_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-fixture");
    std::fs::create_dir_all(&cache_dir).expect("fixture cache dir");

    let mut models = Vec::new();
    for arch in ArchId::ALL {
        let seed = model_seed(0, arch);
        let path = cache_dir.join(format!("{}_{}_{:016x}.svda", arch.as_str(), seed, fp));
        if let Ok((model, meta)) = load_checkpoint(&path) {
            eprintln!("fixture: {} cached, test acc {:.3}", arch.as_str(), meta.test_acc);
            models.push((arch, model));
            continue;
        }
        let mut model = LayerGraph::<f32>::build(arch, 10, seed);
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let metrics = train(&mut model, &tx, &ty, Some((&vx, &vy)), &cfg).expect("training");
        eprintln!(
            "fixture: {} test acc {:.3} ({:.0?} elapsed)",
            arch.as_str(),
            metrics.final_test_acc(),
            t0.elapsed()
        );
        let meta = CheckpointMeta {
            arch,
            num_classes: 10,
            seed,
            epochs: cfg.epochs,
            train_acc: metrics.final_train_acc(),
            test_acc: metrics.final_test_acc(),
        };
        save_checkpoint(&model, &meta, &path).expect("fixture cache write");
        models.push((arch, model));
    }
    Fixture { models, eval_x: ex, eval_y: ey }
});

/// Default attack (sign-gradient with momentum, eps 16, 10 steps) with an
/// optional spectral hook; the configuration every model-based criterion
/// crafts with.
fn craft(
    model: &LayerGraph<f32>,
    x: &Tensor<f32>,
    y: &[usize],
    svd: Option<SvdHook>,
    seed: u64,
) -> AdversarialBatch<f32> {
    let cfg = AttackConfig { svd, seed, ..AttackConfig::default() };
    run_attack(model, x, y, &cfg).expect("attack should run")
}

/// Ground-truth error rate of `model` on `x` (the transfer success of an
/// adversarial batch when `x` is its `adv` tensor).
fn error_rate(model: &LayerGraph<f32>, x: &Tensor<f32>, y: &[usize]) -> f64 {
    let preds = model.predict(x).expect("predict");
    let wrong = preds.iter().zip(y).filter(|(p, l)| p != l).count();
    wrong as f64 / y.len() as f64
}

// ── Small numeric helpers ───────────────────────────────────────────────

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Max off-identity entry of `Q^T Q` for a column-orthonormal `rows x m`.
fn orthonormality_defect(q: &[f64], rows: usize, m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += q[r * m + i] * q[r * m + j];
            }
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

/// Rebuilds a matrix with prescribed singular values on the singular
/// frames of a random matrix: guarantees well-gapped spectra.
fn gapped_matrix(salt: u64, rows: usize, cols: usize, spectrum: &[f64]) -> Vec<f64> {
    let mut rng = stream(salt, purpose::TEST, 0x9a);
    let raw: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = svd(&raw, rows, cols).expect("svd of random frame");
    let m = d.rank_dim();
    assert_eq!(spectrum.len(), m);
    let mut x = vec![0.0; rows * cols];
    for t in 0..m {
        for r in 0..rows {
            let u = d.u[r * m + t] * spectrum[t];
            for c in 0..cols {
                x[r * cols + c] += u * d.v[c * m + t];
            }
        }
    }
    x
}

// ── Criterion 1: autodiff gradient checks ───────────────────────────────

type Build<T> = fn(&mut Graph<T>, NodeId) -> NodeId;

/// Deterministic auxiliary tensor (same draw at both precisions).
fn aux<T: Element>(salt: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = stream(salt, purpose::TEST, 7);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Auxiliary tensor whose entries keep magnitude in [0.5, 1.5): used where
/// a near-zero multiplier would make a probed gradient ill-conditioned.
fn aux_signed<T: Element>(salt: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = stream(salt, purpose::TEST, 8);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.5..1.5);
            let sign = if rng.random_range(0..2u32) == 0 { -1.0 } else { 1.0 };
            T::of(mag * sign)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `y` against fixed sign-bounded weights and sums to a scalar,
/// so every output coordinate feeds the loss with a non-negligible weight.
fn weighted<T: Element>(g: &mut Graph<T>, y: NodeId, salt: u64) -> NodeId {
    let shape = g.value(y).shape().to_vec();
    let w = g.leaf(aux_signed::<T>(salt, &shape));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

/// Uniform random point.
fn pt_uniform(salt: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    aux::<f64>(salt, shape, lo, hi)
}

/// Point whose entries are a shuffled even grid over [lo, hi]: all values
/// distinct with gap (hi-lo)/(n-1), so kinked ops (relu, max-pool) have no
/// ties for finite differences to straddle.
fn pt_spaced(salt: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> =
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut rng = stream(salt, purpose::TEST, 9);
    vals.shuffle(&mut rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Rank-4 feature whose C x HW matrix has singular values 4, 2.5, 1:
/// comfortably gapped for the decomposition gradient.
fn pt_gapped_feature(salt: u64) -> Tensor<f64> {
    let x = gapped_matrix(salt, 3, 16, &[4.0, 2.5, 1.0]);
    Tensor::new(vec![1, 3, 4, 4], x).unwrap()
}

fn b_scale<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.scale(x, T::of(-1.7));
    weighted(g, y, 11)
}

fn b_add<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let a = g.leaf(aux::<T>(21, &[3, 4], -1.5, 1.5));
    let y = g.add(x, a).unwrap();
    weighted(g, y, 22)
}

fn b_mul<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let a = g.leaf(aux_signed::<T>(31, &[3, 4]));
    let y = g.mul(x, a).unwrap();
    weighted(g, y, 32)
}

fn b_mix<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let a = g.leaf(aux::<T>(41, &[3, 4], -1.5, 1.5));
    let y = g.mix(x, a, T::of(0.3)).unwrap();
    weighted(g, y, 42)
}

fn b_sum<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    g.sum(x)
}

fn b_relu<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.relu(x);
    weighted(g, y, 61)
}

fn b_reshape<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.reshape(x, vec![2, 6]).unwrap();
    weighted(g, y, 71)
}

fn b_flatten<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.flatten(x).unwrap();
    weighted(g, y, 81)
}

fn b_conv_x<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let w = g.leaf(aux::<T>(91, &[3, 2, 3, 3], -0.6, 0.6));
    let b = g.leaf(aux::<T>(92, &[3], -0.3, 0.3));
    let y = g.conv2d(x, w, b, 1, 1).unwrap();
    weighted(g, y, 93)
}

fn b_conv_w<T: Element>(g: &mut Graph<T>, w: NodeId) -> NodeId {
    let x = g.leaf(aux::<T>(94, &[2, 2, 5, 5], -1.2, 1.2));
    let b = g.leaf(aux::<T>(95, &[3], -0.3, 0.3));
    let y = g.conv2d(x, w, b, 2, 1).unwrap();
    weighted(g, y, 96)
}

fn b_conv_b<T: Element>(g: &mut Graph<T>, b: NodeId) -> NodeId {
    let x = g.leaf(aux::<T>(97, &[2, 2, 5, 5], -1.2, 1.2));
    let w = g.leaf(aux::<T>(98, &[3, 2, 3, 3], -0.6, 0.6));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    weighted(g, y, 99)
}

fn b_dense_x<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let w = g.leaf(aux::<T>(101, &[6, 5], -0.8, 0.8));
    let b = g.leaf(aux::<T>(102, &[5], -0.3, 0.3));
    let y = g.dense(x, w, b).unwrap();
    weighted(g, y, 103)
}

fn b_dense_w<T: Element>(g: &mut Graph<T>, w: NodeId) -> NodeId {
    let x = g.leaf(aux::<T>(104, &[4, 6], -1.2, 1.2));
    let b = g.leaf(aux::<T>(105, &[5], -0.3, 0.3));
    let y = g.dense(x, w, b).unwrap();
    weighted(g, y, 106)
}

fn b_dense_b<T: Element>(g: &mut Graph<T>, b: NodeId) -> NodeId {
    let x = g.leaf(aux::<T>(107, &[4, 6], -1.2, 1.2));
    let w = g.leaf(aux::<T>(108, &[6, 5], -0.8, 0.8));
    let y = g.dense(x, w, b).unwrap();
    weighted(g, y, 109)
}

fn b_pool_max<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.pool(x, PoolKind::Max, 2, 2).unwrap();
    weighted(g, y, 111)
}

fn b_pool_avg<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.pool(x, PoolKind::Avg, 3, 3).unwrap();
    weighted(g, y, 112)
}

fn b_cross_entropy<T: Element>(g: &mut Graph<T>, logits: NodeId) -> NodeId {
    g.cross_entropy(logits, &[0, 3, 7, 9]).unwrap()
}

fn b_svd_truncate<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let y = g.svd_truncate(x, 1, T::of(1e-9), false).unwrap();
    weighted(g, y, 121)
}

fn b_diversity<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let placements = vec![Some(DiPlacement { side: 5, top: 1, left: 0 }), None];
    let y = g.diversity(x, placements).unwrap();
    weighted(g, y, 131)
}

/// A complete toy CNN loss: scale, two conv+relu blocks, max and average
/// pooling, flatten, dense, cross-entropy. Positive conv biases keep most
/// units active so the landscape near the probe point is smooth.
fn b_cnn<T: Element>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let w1 = g.leaf(aux::<T>(141, &[3, 2, 3, 3], -0.5, 0.5));
    let b1 = g.leaf(aux::<T>(142, &[3], 0.1, 0.4));
    let w2 = g.leaf(aux::<T>(143, &[4, 3, 3, 3], -0.4, 0.4));
    let b2 = g.leaf(aux::<T>(144, &[4], 0.1, 0.4));
    let wd = g.leaf(aux_signed::<T>(145, &[4, 5]));
    let bd = g.leaf(aux::<T>(146, &[5], -0.2, 0.2));
    let s = g.scale(x, T::of(1.0 / 3.0));
    let c1 = g.conv2d(s, w1, b1, 1, 1).unwrap();
    let r1 = g.relu(c1);
    let p1 = g.pool(r1, PoolKind::Max, 2, 2).unwrap();
    let c2 = g.conv2d(p1, w2, b2, 1, 1).unwrap();
    let r2 = g.relu(c2);
    let p2 = g.pool(r2, PoolKind::Avg, 3, 3).unwrap();
    let f = g.flatten(p2).unwrap();
    let logits = g.dense(f, wd, bd).unwrap();
    g.cross_entropy(logits, &[1, 4]).unwrap()
}

/// 32-bit check: compares the f32 reverse-mode gradient against central
/// finite differences of the same function evaluated in f64, so the
/// reference is trustworthy at the 1e-3 tolerance (an all-f32 difference
/// quotient would drown in round-off at usable step sizes). Returns the
/// max relative error over `probes` seeded coordinates.
fn cross_check_f32(
    b64: Build<f64>,
    b32: Build<f32>,
    point: &Tensor<f64>,
    eps: f64,
    probes: usize,
    salt: u64,
) -> f64 {
    let p32: Tensor<f32> = Tensor::new(
        point.shape().to_vec(),
        point.data().iter().map(|&v| v as f32).collect::<Vec<f32>>(),
    )
    .unwrap();
    let mut g = Graph::<f32>::new();
    let x = g.leaf(p32.requiring_grad());
    let loss = b32(&mut g, x);
    g.backward(loss).expect("f32 backward");
    let analytic: Vec<f64> = g.grad(x).expect("leaf grad").iter().map(|&v| v as f64).collect();

    let mut coords: Vec<usize> = (0..point.numel()).collect();
    let mut rng = stream(salt, purpose::GRAD_CHECK, 1);
    coords.shuffle(&mut rng);
    coords.truncate(probes.min(point.numel()));

    let eval = |t: &Tensor<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t.clone());
        let l = b64(&mut g, x);
        g.value(l).data()[0]
    };
    let mut max_rel: f64 = 0.0;
    for &ci in &coords {
        let mut plus = point.clone();
        plus.data_mut()[ci] += eps;
        let mut minus = point.clone();
        minus.data_mut()[ci] -= eps;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        let a = analytic[ci];
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[test]
fn c01_autodiff_gradient_checks() {
    let t0 = Instant::now();
    let cases: Vec<(&str, Build<f64>, Build<f32>, Tensor<f64>)> = vec![
        ("scale", b_scale::<f64>, b_scale::<f32>, pt_uniform(1, &[3, 4], -2.0, 2.0)),
        ("add", b_add::<f64>, b_add::<f32>, pt_uniform(2, &[3, 4], -2.0, 2.0)),
        ("mul", b_mul::<f64>, b_mul::<f32>, pt_uniform(3, &[3, 4], -2.0, 2.0)),
        ("mix", b_mix::<f64>, b_mix::<f32>, pt_uniform(4, &[3, 4], -2.0, 2.0)),
        ("sum", b_sum::<f64>, b_sum::<f32>, pt_uniform(5, &[3, 4], -2.0, 2.0)),
        ("relu", b_relu::<f64>, b_relu::<f32>, pt_spaced(6, &[3, 4], -2.0, 2.0)),
        ("reshape", b_reshape::<f64>, b_reshape::<f32>, pt_uniform(7, &[3, 4], -2.0, 2.0)),
        ("flatten", b_flatten::<f64>, b_flatten::<f32>, pt_uniform(8, &[2, 3, 2, 2], -2.0, 2.0)),
        ("conv2d/x", b_conv_x::<f64>, b_conv_x::<f32>, pt_uniform(9, &[2, 2, 5, 5], -1.5, 1.5)),
        ("conv2d/w", b_conv_w::<f64>, b_conv_w::<f32>, pt_uniform(10, &[3, 2, 3, 3], -0.6, 0.6)),
        ("conv2d/b", b_conv_b::<f64>, b_conv_b::<f32>, pt_uniform(11, &[3], -0.4, 0.4)),
        ("dense/x", b_dense_x::<f64>, b_dense_x::<f32>, pt_uniform(12, &[4, 6], -1.5, 1.5)),
        ("dense/w", b_dense_w::<f64>, b_dense_w::<f32>, pt_uniform(13, &[6, 5], -0.8, 0.8)),
        ("dense/b", b_dense_b::<f64>, b_dense_b::<f32>, pt_uniform(14, &[5], -0.4, 0.4)),
        ("pool/max", b_pool_max::<f64>, b_pool_max::<f32>, pt_spaced(15, &[2, 3, 6, 6], -3.0, 3.0)),
        ("pool/avg", b_pool_avg::<f64>, b_pool_avg::<f32>, pt_uniform(16, &[2, 3, 6, 6], -2.0, 2.0)),
        ("cross-entropy", b_cross_entropy::<f64>, b_cross_entropy::<f32>, pt_uniform(17, &[4, 10], -3.0, 3.0)),
        ("svd-truncate", b_svd_truncate::<f64>, b_svd_truncate::<f32>, pt_gapped_feature(18)),
        ("diversity", b_diversity::<f64>, b_diversity::<f32>, pt_uniform(19, &[2, 2, 6, 6], -2.0, 2.0)),
        ("cnn", b_cnn::<f64>, b_cnn::<f32>, pt_spaced(20, &[2, 2, 6, 6], -3.0, 3.0)),
    ];

    let mut worst64: (f64, &str) = (0.0, "-");
    let mut worst32: (f64, &str) = (0.0, "-");
    for (i, (name, b64, b32, point)) in cases.iter().enumerate() {
        let salt = 500 + i as u64;
        let rep = grad_check(b64, point, 1e-5, 1e-5, 20, salt).expect("grad check runs");
        assert!(
            rep.pass,
            "{name} (f64): max rel err {:.3e}, non-finite {}",
            rep.max_rel_err, rep.non_finite
        );
        if rep.max_rel_err > worst64.0 {
            worst64 = (rep.max_rel_err, name);
        }
        let rel32 = cross_check_f32(*b64, *b32, point, 1e-5, 20, salt);
        assert!(rel32 <= 1e-3, "{name} (f32): max rel err {rel32:.3e}");
        if rel32 > worst32.0 {
            worst32 = (rel32, name);
        }
    }
    let dt = t0.elapsed();
    verdict(
        "autodiff_gradient_checks",
        dt.as_secs_f64() < 60.0,
        &format!(
            "{} primitives + cnn; worst f64 {:.2e} [{}], worst f32 {:.2e} [{}], {:.1?}",
            cases.len() - 1,
            worst64.0,
            worst64.1,
            worst32.0,
            worst32.1,
            dt
        ),
    );
}

// ── Criterion 2: decomposition invariants on 200 random matrices ────────

#[test]
fn c02_svd_invariants_and_optimality() {
    let t0 = Instant::now();
    let mut rng = stream(0xACC, purpose::TEST, 2);
    let mut worst_recon: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut competitors_beaten = 0usize;
    for case in 0..200 {
        let rows: usize = rng.random_range(2..=10);
        let cols: usize = rng.random_range(2..=12);
        let scale = [0.05, 1.0, 20.0][case % 3];
        let mut x: Vec<f64> =
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        if case % 10 == 9 && cols >= 2 {
            // Force rank deficiency: copy one column over another.
            for r in 0..rows {
                x[r * cols + 1] = x[r * cols];
            }
        }
        let m = rows.min(cols);
        let d = svd(&x, rows, cols).expect("svd");
        assert_eq!(d.rank_dim(), m);

        // Orthonormality of both frames.
        let orth =
            orthonormality_defect(&d.u, rows, m).max(orthonormality_defect(&d.v, cols, m));
        assert!(orth <= 1e-10, "case {case}: orthonormality defect {orth:.3e}");
        worst_orth = worst_orth.max(orth);

        // Non-negative, descending spectrum.
        for i in 0..m {
            assert!(d.s[i] >= 0.0, "case {case}: negative singular value");
            if i + 1 < m {
                assert!(
                    d.s[i] + 1e-12 * (1.0 + d.s[0]) >= d.s[i + 1],
                    "case {case}: spectrum not descending at {i}"
                );
            }
        }

        // Full reconstruction.
        let full = topk_reconstruct(&d, m).expect("full reconstruction");
        let recon_err = frob(&sub(&x, &full)) / (1.0 + frob(&x));
        assert!(recon_err <= 1e-9, "case {case}: reconstruction error {recon_err:.3e}");
        worst_recon = worst_recon.max(recon_err);

        // Truncation error monotone in k, and equal to the spectral tail.
        let mut prev = f64::INFINITY;
        for k in 1..=m {
            let z = topk_reconstruct(&d, k).expect("rank-k reconstruction");
            let err = frob(&sub(&x, &z));
            let tail: f64 = d.s[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!(
                (err - tail).abs() <= 1e-9 * (1.0 + tail),
                "case {case}: rank-{k} error {err:.6e} != tail {tail:.6e}"
            );
            assert!(
                err <= prev + 1e-12 * (1.0 + d.s[0]),
                "case {case}: truncation error grew at k={k}"
            );
            prev = err;
        }

        // Best-rank-k optimality against random competitors.
        let k = rng.random_range(1..=m);
        let z = topk_reconstruct(&d, k).expect("rank-k reconstruction");
        let err_z = frob(&sub(&x, &z));
        for _ in 0..50 {
            let a: Vec<f64> =
                (0..rows * k).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let b: Vec<f64> = (0..k * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut w = vec![0.0; rows * cols];
            for r in 0..rows {
                for t in 0..k {
                    let art = a[r * k + t];
                    for c in 0..cols {
                        w[r * cols + c] += art * b[t * cols + c];
                    }
                }
            }
            let err_w = frob(&sub(&x, &w));
            assert!(
                err_z <= err_w + 1e-9,
                "case {case}: rank-{k} truncation beaten by a random competitor"
            );
            competitors_beaten += 1;
        }
    }
    let dt = t0.elapsed();
    verdict(
        "svd_invariants_and_optimality",
        dt.as_secs_f64() < 60.0,
        &format!(
            "200 matrices; worst orth {worst_orth:.2e}, worst recon {worst_recon:.2e}, \
             {competitors_beaten} competitors beaten, {dt:.1?}"
        ),
    );
}

// ── Criterion 3: truncation adjoint vs finite differences ───────────────

#[test]
fn c03_truncation_adjoint_matches_finite_differences() {
    let mut rng = stream(0xACC, purpose::TEST, 3);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let rows: usize = rng.random_range(2..=6);
        let cols: usize = rng.random_range(2..=6);
        let m = rows.min(cols);
        // Spectrum with adjacent gaps of 0.75 (>= the 0.5 the criterion asks).
        let spectrum: Vec<f64> = (0..m).map(|i| 1.0 + 0.75 * (m - i) as f64).collect();
        let x = gapped_matrix(7000 + case, rows, cols, &spectrum);
        let k = rng.random_range(1..m.max(2));
        let g: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();

        let adjoint = truncation_backward(&x, rows, cols, k, &g, 1e-9, false).expect("adjoint");
        let h = 1e-6;
        let objective = |x: &[f64]| -> f64 {
            let z = topk_of(x, rows, cols, k).expect("truncation");
            z.iter().zip(&g).map(|(zi, gi)| zi * gi).sum()
        };
        for ci in 0..rows * cols {
            let mut plus = x.clone();
            plus[ci] += h;
            let mut minus = x.clone();
            minus[ci] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = adjoint[ci];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            assert!(
                rel <= 1e-3,
                "case {case} ({rows}x{cols}, k={k}), coord {ci}: adjoint {a:.6e} vs fd {fd:.6e}"
            );
            worst = worst.max(rel);
        }
    }

    // At diag(3, 1) the top singular value's gradient is u1 v1^T = e11.
    let x: Vec<f64> = vec![3.0, 0.0, 0.0, 1.0];
    let want = [1.0f64, 0.0, 0.0, 0.0];
    let h = 1e-6;
    let mut worst_s1: f64 = 0.0;
    for ci in 0..4 {
        let mut plus = x.clone();
        plus[ci] += h;
        let mut minus = x.clone();
        minus[ci] -= h;
        let sp = svd(&plus, 2, 2).expect("svd").s[0];
        let sm = svd(&minus, 2, 2).expect("svd").s[0];
        let fd = (sp - sm) / (2.0 * h);
        worst_s1 = worst_s1.max((fd - want[ci]).abs());
    }
    assert!(worst_s1 <= 1e-5, "ds1/dX at diag(3,1): worst deviation {worst_s1:.3e}");

    verdict(
        "truncation_adjoint_matches_finite_differences",
        true,
        &format!("100 gapped matrices, worst rel {worst:.2e}; ds1/dX defect {worst_s1:.2e}"),
    );
}

// ── Criterion 4: fusion degeneracies reproduce the plain attack ─────────

#[test]
fn c04_fusion_degeneracies_reproduce_the_plain_attack() {
    let fx = &*FIXTURE;
    let model = fx.model(ArchId::ConvnetA);
    let (x, y) = fx.window(0, 20);
    let base = AttackConfig { seed: 0, ..AttackConfig::default() };

    let (_, trace_plain) = run_attack_traced(model, &x, &y, &base).expect("plain attack");
    assert_eq!(trace_plain.len(), base.steps);

    let beta_one = AttackConfig {
        svd: Some(SvdHook { beta: 1.0, ..SvdHook::default() }),
        ..base.clone()
    };
    let (_, trace_beta) = run_attack_traced(model, &x, &y, &beta_one).expect("beta=1 attack");

    let k_full = resolve_k(model, "block3", "full").expect("full rank resolves");
    let full_rank = AttackConfig {
        svd: Some(SvdHook { k: k_full, ..SvdHook::default() }),
        ..base.clone()
    };
    let (_, trace_full) = run_attack_traced(model, &x, &y, &full_rank).expect("k=full attack");

    let max_gap = |a: &[Tensor<f32>], b: &[Tensor<f32>]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(ta, tb)| {
                ta.data()
                    .iter()
                    .zip(tb.data())
                    .map(|(p, q)| (p - q).abs() as f64)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    let gap_beta = max_gap(&trace_plain, &trace_beta);
    let gap_full = max_gap(&trace_plain, &trace_full);
    verdict(
        "fusion_degeneracies_reproduce_the_plain_attack",
        gap_beta <= 1e-4 && gap_full <= 1e-4,
        &format!(
            "20 images, 10 steps: beta=1 gap {gap_beta:.2e}, k={k_full} gap {gap_full:.2e}"
        ),
    );
}

// ── Criterion 5: threat-model constraint on every crafted image ─────────

#[test]
fn c05_threat_model_holds_everywhere() {
    let fx = &*FIXTURE;
    let model = fx.model(ArchId::ConvnetA);
    let (x, y) = fx.window(0, 6);

    let mut configs: Vec<AttackConfig> = Vec::new();
    for method in Method::ALL {
        for svd in [None, Some(SvdHook::default())] {
            for seed in [0u64, 1] {
                configs.push(AttackConfig {
                    method,
                    svd: svd.clone(),
                    seed,
                    ..AttackConfig::default()
                });
            }
        }
    }
    // The full transform stack (fewer variance samples to keep this quick),
    // and a tighter budget.
    configs.push(AttackConfig {
        transforms: vec![
            Transform::Di { p: 0.5 },
            Transform::Ti { kernel: 7 },
            Transform::Si { copies: 5 },
            Transform::Vt { spread: 1.5, samples: 5 },
        ],
        svd: Some(SvdHook::default()),
        seed: 3,
        ..AttackConfig::default()
    });
    configs.push(AttackConfig {
        method: Method::IFgsm,
        epsilon: 4.0,
        seed: 4,
        ..AttackConfig::default()
    });

    let mut images = 0usize;
    let mut worst_excess = f64::MIN;
    for cfg in &configs {
        let batch = run_attack(model, &x, &y, cfg).expect("attack");
        let per = batch.clean.numel() / y.len();
        for i in 0..y.len() {
            let clean = &batch.clean.data()[i * per..(i + 1) * per];
            let adv = &batch.adv.data()[i * per..(i + 1) * per];
            let linf = clean
                .iter()
                .zip(adv)
                .map(|(c, a)| (c - a).abs() as f64)
                .fold(0.0, f64::max);
            assert!(
                linf <= cfg.epsilon + 1e-4,
                "method {} seed {}: image {i} linf {linf} > {}",
                cfg.method.as_str(),
                cfg.seed,
                cfg.epsilon
            );
            worst_excess = worst_excess.max(linf - cfg.epsilon);
            assert!(
                adv.iter().all(|&v| (0.0..=255.0).contains(&v)),
                "method {} seed {}: image {i} leaves [0,255]",
                cfg.method.as_str(),
                cfg.seed
            );
            images += 1;
        }
    }
    verdict(
        "threat_model_holds_everywhere",
        true,
        &format!(
            "{images} images over {} configs in budget; worst linf excess {worst_excess:.2e}",
            configs.len()
        ),
    );
}

// ── Criterion 6: white-box strength on every source model ───────────────

#[test]
fn c06_whitebox_attacks_cripple_each_model() {
    let fx = &*FIXTURE;
    let (x, y) = fx.window(0, 500);
    let mut details = Vec::new();
    let mut pass = true;
    for (arch, model) in &fx.models {
        let clean_acc = model.accuracy(&fx.eval_x, &fx.eval_y).expect("accuracy");
        let t0 = Instant::now();
        let batch = craft(model, &x, &y, None, 0);
        let rate = success_rate(model, &batch).expect("success rate");
        let dt = t0.elapsed();
        pass &= clean_acc >= 0.90 && rate >= 0.90 && dt.as_secs_f64() < 300.0;
        details.push(format!(
            "{}: clean {:.3}, whitebox {:.3}, {:.0?}",
            arch.as_str(),
            clean_acc,
            rate,
            dt
        ));
    }
    verdict("whitebox_attacks_cripple_each_model", pass, &details.join("; "));
}

// ── Criterion 7: directional transfer with the spectral hook ────────────

#[test]
fn c07_transfer_direction_with_the_svd_hook() {
    let fx = &*FIXTURE;
    let pairs = [
        (ArchId::ConvnetA, ArchId::ConvnetB),
        (ArchId::ConvnetA, ArchId::ConvnetC),
        (ArchId::ConvnetB, ArchId::ConvnetC),
    ];
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut lines = Vec::new();
    for seed in 0u64..3 {
        let (x, y) = fx.window(100 * seed as usize, 100);
        // One crafted pair per source; both targets read from it.
        let mut batches: BTreeMap<&str, (AdversarialBatch<f32>, AdversarialBatch<f32>)> =
            BTreeMap::new();
        for source in [ArchId::ConvnetA, ArchId::ConvnetB] {
            let model = fx.model(source);
            let plain = craft(model, &x, &y, None, seed);
            let hooked = craft(model, &x, &y, Some(SvdHook::default()), seed);
            batches.insert(source.as_str(), (plain, hooked));
        }
        for (source, target) in pairs {
            let (plain, hooked) = &batches[source.as_str()];
            let tm = fx.model(target);
            let r_plain = error_rate(tm, &plain.adv, &y);
            let r_hooked = error_rate(tm, &hooked.adv, &y);
            without.push(r_plain);
            with.push(r_hooked);
            lines.push(format!(
                "{}->{} s{}: {:.2} vs {:.2}",
                source.as_str(),
                target.as_str(),
                seed,
                r_plain,
                r_hooked
            ));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_with, m_without) = (mean(&with), mean(&without));
    verdict(
        "transfer_direction_with_the_svd_hook",
        m_with >= m_without - 0.02,
        &format!(
            "mean transfer with hook {:.3} vs without {:.3} (delta {:+.1}pp) over 9 cells [{}]",
            m_with,
            m_without,
            (m_with - m_without) * 100.0,
            lines.join(", ")
        ),
    );
}

// ── Criterion 8: ablation sweep shapes ──────────────────────────────────

#[test]
fn c08_ablation_shapes() {
    let fx = &*FIXTURE;
    let source = fx.model(ArchId::ConvnetA);
    let targets = [ArchId::ConvnetB, ArchId::ConvnetC];
    let (x, y) = fx.window(0, 100);

    let transfer_mean = |batch: &AdversarialBatch<f32>| -> f64 {
        targets
            .iter()
            .map(|t| error_rate(fx.model(*t), &batch.adv, &y))
            .sum::<f64>()
            / targets.len() as f64
    };
    let transfer_each = |batch: &AdversarialBatch<f32>| -> Vec<f64> {
        targets.iter().map(|t| error_rate(fx.model(*t), &batch.adv, &y)).collect()
    };

    let plain = craft(source, &x, &y, None, 0);
    let plain_each = transfer_each(&plain);

    // Blend sweep at k = 1.
    let betas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut beta_mean = Vec::new();
    let mut beta_last_each = Vec::new();
    for &beta in &betas {
        let b = craft(source, &x, &y, Some(SvdHook { beta, ..SvdHook::default() }), 0);
        beta_mean.push(transfer_mean(&b));
        if beta == 1.0 {
            beta_last_each = transfer_each(&b);
        }
    }
    let interior_max =
        beta_mean[1..4].iter().cloned().fold(f64::MIN, f64::max);
    let interior_beats_zero = interior_max > beta_mean[0];
    let beta_one_matches = beta_last_each
        .iter()
        .zip(&plain_each)
        .all(|(a, b)| (a - b).abs() <= 1e-5);

    // Rank sweep at beta = 0.5 (k = 1 is the middle blend point above).
    let k_full = resolve_k(source, "block3", "full").expect("full rank");
    let mut k_rates = vec![(1usize, beta_mean[2])];
    let mut full_each = Vec::new();
    for k in [2usize, 4, k_full] {
        let b = craft(source, &x, &y, Some(SvdHook { k, ..SvdHook::default() }), 0);
        k_rates.push((k, transfer_mean(&b)));
        if k == k_full {
            full_each = transfer_each(&b);
        }
    }
    let full_matches =
        full_each.iter().zip(&plain_each).all(|(a, b)| (a - b).abs() <= 1e-4);

    let beta_str = betas
        .iter()
        .zip(&beta_mean)
        .map(|(b, r)| format!("b{b}={r:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    let k_str = k_rates
        .iter()
        .map(|(k, r)| format!("k{k}={r:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        "ablation_shapes",
        interior_beats_zero && beta_one_matches && full_matches,
        &format!(
            "interior max {:.3} vs beta0 {:.3}; beta1==plain: {}; k={} == plain: {}; [{}] [{}]",
            interior_max, beta_mean[0], beta_one_matches, k_full, full_matches, beta_str, k_str
        ),
    );
}

// ── Criterion 9: representation-similarity suite ────────────────────────

#[test]
fn c09_cka_suite() {
    // Self-similarity.
    let mut rng = stream(0xACC, purpose::TEST, 9);
    let (n, d) = (40usize, 30usize);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let self_sim = linear_cka(&x, &x, n, d, d, true).expect("cka");
    assert!((self_sim - 1.0).abs() <= 1e-6, "cka(X,X) = {self_sim}");

    // Orthogonal invariance: Y = X Q with Q from a random matrix's frame.
    let raw: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q = svd(&raw, d, d).expect("svd").u;
    let mut xq = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for t in 0..d {
                acc += x[i * d + t] * q[t * d + j];
            }
            xq[i * d + j] = acc;
        }
    }
    let rot = linear_cka(&x, &xq, n, d, d, true).expect("cka");
    assert!((rot - 1.0).abs() <= 1e-5, "cka(X, XQ) = {rot}");

    // Isotropic-scale invariance.
    let y: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = linear_cka(&x, &y, n, d, d, true).expect("cka");
    let xs: Vec<f64> = x.iter().map(|v| v * 2.7).collect();
    let ys: Vec<f64> = y.iter().map(|v| v * 0.3).collect();
    let scaled = linear_cka(&xs, &ys, n, d, d, true).expect("cka");
    assert!((scaled - base).abs() <= 1e-5, "scale moved cka {base} -> {scaled}");

    // Layerwise clean-vs-adversarial similarity collapses toward the head
    // under a successful white-box attack.
    let fx = &*FIXTURE;
    let model = fx.model(ArchId::ConvnetA);
    let (cx, cy) = fx.window(0, 100);
    let batch = craft(model, &cx, &cy, None, 0);
    let wb = success_rate(model, &batch).expect("success rate");
    assert!(wb >= 0.9, "white-box premise failed: {wb}");
    let layers = ["block1", "block2", "block3", "block4", "pool", "fc"];
    let report =
        cka_layerwise(model, &batch.clean, &batch.adv, &layers, "adv").expect("layerwise cka");
    let first = report.value("block1", "adv").expect("block1 row");
    let last = report.value("fc", "adv").expect("fc row");
    let profile = layers
        .iter()
        .map(|l| format!("{l}={:.3}", report.value(l, "adv").unwrap()))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        "cka_suite",
        last < first,
        &format!(
            "identity {self_sim:.8}, rotation {rot:.8}, scale drift {:.1e}; {profile}",
            (scaled - base).abs()
        ),
    );
}

// ── Criterion 10: byte-identical pipeline reruns ────────────────────────

fn walk(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                map.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    map
}

fn run_pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_svdatk"))
            .current_dir(dir)
            .args(args)
            .output()
            .expect("binary launches");
        assert!(
            out.status.success(),
            "svdatk {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let seed = ["--seed", "7"];
    run(&[&seed[..], &["gen-data", "--set", "train_n=80", "--set", "test_n=20", "--set", "eval_n=12"]].concat());
    run(&[&seed[..], &["train", "--set", "models=convnet_a,convnet_b", "--set", "epochs=2"]].concat());
    let attack = ["attack", "--set", "attack_n=8", "--set", "targets=convnet_a,convnet_b"];
    run(&[&seed[..], &attack].concat());
    run(&[&seed[..], &attack, &["--set", "svd=false"][..]].concat());
    run(&[&seed[..], &["eval", "--set", "targets=convnet_a,convnet_b"]].concat());
    run(&[&seed[..], &["cka", "--set", "targets=convnet_a,convnet_b"]].concat());
    run(&[&seed[..], &["cam", "--set", "cam_images=2"]].concat());
}

#[test]
fn c10_pipeline_reruns_are_byte_identical() {
    let dir_a = tempfile::tempdir().expect("temp dir");
    let dir_b = tempfile::tempdir().expect("temp dir");
    run_pipeline(dir_a.path());
    run_pipeline(dir_b.path());
    let a = walk(dir_a.path());
    let b = walk(dir_b.path());
    assert!(a.len() > 20, "pipeline produced only {} files", a.len());
    let names_a: Vec<&String> = a.keys().collect();
    let names_b: Vec<&String> = b.keys().collect();
    assert_eq!(names_a, names_b, "file sets differ between reruns");
    let mut mismatched = Vec::new();
    for (name, bytes) in &a {
        if b[name] != *bytes {
            mismatched.push(name.clone());
        }
    }
    verdict(
        "pipeline_reruns_are_byte_identical",
        mismatched.is_empty(),
        &format!("{} files compared; mismatches: {:?}", a.len(), mismatched),
    );
}
