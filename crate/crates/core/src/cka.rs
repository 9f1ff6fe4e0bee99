//! Linear centered-kernel-alignment similarity between activation sets.
//!
//! The score of two activation matrices X (n x d1) and Y (n x d2) is
//! `||Y'X||_F^2 / (||X'X||_F * ||Y'Y||_F)`,
//! computed here through the n x n Gram matrices (tr(Kx Ky) equals the
//! numerator), which keeps the cost at n^2 * d instead of d^2 * n. The
//! literal formula above carries no mean subtraction; pass `center =
//! true` to remove per-feature means first.
//!
//! Two report builders mirror the common measurement protocols: layerwise
//! clean-versus-adversarial similarity on one model, and source-versus-
//! target similarity of the same inputs at the pooling and logit layers.

use crate::models::{LayerGraph, ModelError};
use crate::tensor::{Element, Tensor};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CkaError {
    SampleMismatch { x: usize, y: usize },
    TooFewSamples { n: usize },
    SizeMismatch { want: usize, got: usize },
    ZeroMatrix { which: &'static str },
    NonFinite { which: &'static str },
    Unpaired { detail: String },
    Model(ModelError),
}

impl std::fmt::Display for CkaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkaError::SampleMismatch { x, y } => {
                write!(f, "activation sets have {x} vs {y} samples")
            }
            CkaError::TooFewSamples { n } => write!(f, "need at least 2 samples, got {n}"),
            CkaError::SizeMismatch { want, got } => {
                write!(f, "matrix has {got} entries, expected {want}")
            }
            CkaError::ZeroMatrix { which } => {
                write!(f, "{which} matrix is zero; similarity undefined")
            }
            CkaError::NonFinite { which } => write!(f, "{which} matrix has non-finite entries"),
            CkaError::Unpaired { detail } => write!(f, "batches are not paired: {detail}"),
            CkaError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CkaError {}

impl From<ModelError> for CkaError {
    fn from(e: ModelError) -> Self {
        CkaError::Model(e)
    }
}

// ── Core score ──────────────────────────────────────────────────────────

/// Linear CKA of two row-major matrices with `n` rows each.
pub fn linear_cka(
    x: &[f64],
    y: &[f64],
    n: usize,
    d1: usize,
    d2: usize,
    center: bool,
) -> Result<f64, CkaError> {
    if n < 2 {
        return Err(CkaError::TooFewSamples { n });
    }
    if x.len() != n * d1 {
        return Err(CkaError::SizeMismatch { want: n * d1, got: x.len() });
    }
    if y.len() != n * d2 {
        return Err(CkaError::SizeMismatch { want: n * d2, got: y.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CkaError::NonFinite { which: "first" });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CkaError::NonFinite { which: "second" });
    }
    let xc;
    let yc;
    let (x, y) = if center {
        xc = center_columns(x, n, d1);
        yc = center_columns(y, n, d2);
        (&xc[..], &yc[..])
    } else {
        (x, y)
    };

    let kx = gram(x, n, d1);
    let ky = gram(y, n, d2);
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for i in 0..n * n {
        dot += kx[i] * ky[i];
        nx += kx[i] * kx[i];
        ny += ky[i] * ky[i];
    }
    if nx <= 0.0 {
        return Err(CkaError::ZeroMatrix { which: "first" });
    }
    if ny <= 0.0 {
        return Err(CkaError::ZeroMatrix { which: "second" });
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

fn center_columns(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += x[i * d + j];
        }
        mean /= n as f64;
        for i in 0..n {
            out[i * d + j] -= mean;
        }
    }
    out
}

/// Row Gram matrix X X' of an n x d matrix, exploiting symmetry.
fn gram(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            let (ri, rj) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            for t in 0..d {
                s += ri[t] * rj[t];
            }
            k[i * n + j] = s;
            k[j * n + i] = s;
        }
    }
    k
}

// ── Activation sets ─────────────────────────────────────────────────────

/// Flattened activations of one model layer over a batch, tagged with the
/// sample ids they came from so pairings can be checked.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    pub model_id: String,
    pub layer: String,
    pub n: usize,
    pub d: usize,
    pub matrix: Vec<f64>,
    pub sample_ids: Vec<u32>,
}

/// Runs the batch through the model and flattens the named layer's output
/// to n x d. Sample ids default to 0..n.
pub fn collect_activations<T: Element>(
    model: &LayerGraph<T>,
    batch: &Tensor<T>,
    layer: &str,
    sample_ids: Option<&[u32]>,
) -> Result<ActivationSet, CkaError> {
    let n = batch.shape()[0];
    if n < 2 {
        return Err(CkaError::TooFewSamples { n });
    }
    let ids: Vec<u32> = match sample_ids {
        Some(s) => {
            if s.len() != n {
                return Err(CkaError::Unpaired {
                    detail: format!("{} ids for {} samples", s.len(), n),
                });
            }
            s.to_vec()
        }
        None => (0..n as u32).collect(),
    };
    let act = model.activation(batch, layer)?;
    let d: usize = act.shape()[1..].iter().product();
    let matrix: Vec<f64> = act.data().iter().map(|v| v.to_f()).collect();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(CkaError::NonFinite { which: "activation" });
    }
    Ok(ActivationSet {
        model_id: model.arch.as_str().to_string(),
        layer: layer.to_string(),
        n,
        d,
        matrix,
        sample_ids: ids,
    })
}

/// CKA between two activation sets, requiring identical sample pairing.
pub fn cka_of_sets(a: &ActivationSet, b: &ActivationSet, center: bool) -> Result<f64, CkaError> {
    if a.n != b.n {
        return Err(CkaError::SampleMismatch { x: a.n, y: b.n });
    }
    if a.sample_ids != b.sample_ids {
        return Err(CkaError::Unpaired {
            detail: format!(
                "sample ids differ between {}:{} and {}:{}",
                a.model_id, a.layer, b.model_id, b.layer
            ),
        });
    }
    linear_cka(&a.matrix, &b.matrix, a.n, a.d, b.d, center)
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct CkaRow {
    /// Layer name, optionally qualified by a model pair.
    pub subject: String,
    pub variant: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CkaReport {
    pub rows: Vec<CkaRow>,
}

impl CkaReport {
    pub fn value(&self, subject: &str, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.subject == subject && r.variant == variant)
            .map(|r| r.value)
    }
}

/// Clean-versus-adversarial similarity at each named layer of one model.
/// `variant` labels the rows (for example "adv_no_svd" or "adv_svd").
pub fn cka_layerwise<T: Element>(
    model: &LayerGraph<T>,
    clean: &Tensor<T>,
    adv: &Tensor<T>,
    layers: &[&str],
    variant: &str,
) -> Result<CkaReport, CkaError> {
    if clean.shape() != adv.shape() {
        return Err(CkaError::Unpaired {
            detail: format!("clean {:?} vs adversarial {:?}", clean.shape(), adv.shape()),
        });
    }
    let mut report = CkaReport::default();
    for layer in layers {
        let a = collect_activations(model, clean, layer, None)?;
        let b = collect_activations(model, adv, layer, None)?;
        report.rows.push(CkaRow {
            subject: layer.to_string(),
            variant: variant.to_string(),
            value: cka_of_sets(&a, &b, false)?,
        });
    }
    Ok(report)
}

/// Source-versus-target similarity of the same inputs at the given layers
/// (typically "pool" and "fc"), one row per (layer, batch variant).
pub fn cka_crossmodel<T: Element>(
    source: &LayerGraph<T>,
    target: &LayerGraph<T>,
    batches: &[(&str, &Tensor<T>)],
    layers: &[&str],
) -> Result<CkaReport, CkaError> {
    let mut report = CkaReport::default();
    for layer in layers {
        for (variant, batch) in batches {
            let a = collect_activations(source, batch, layer, None)?;
            let b = collect_activations(target, batch, layer, None)?;
            report.rows.push(CkaRow {
                subject: layer.to_string(),
                variant: variant.to_string(),
                value: cka_of_sets(&a, &b, false)?,
            });
        }
    }
    Ok(report)
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchId;
    use crate::rng::{purpose, stream};
    use crate::spectral::svd;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, purpose::TEST, 31);
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn self_similarity_is_one() {
        for seed in 0..5 {
            let x = random_matrix(6, 4, seed);
            let v = linear_cka(&x, &x, 6, 4, 4, false).unwrap();
            assert!((v - 1.0).abs() <= 1e-6, "{v}");
        }
    }

    #[test]
    fn orthogonal_features_score_zero() {
        let x = vec![1.0, 0.0];
        let y = vec![0.0, 1.0];
        let v = linear_cka(&x, &y, 2, 1, 1, false).unwrap();
        assert!(v.abs() <= 1e-12);
    }

    #[test]
    fn invariant_to_orthogonal_rotation() {
        let (n, d) = (8, 5);
        let x = random_matrix(n, d, 7);
        // An orthogonal factor from the SVD of a random square matrix.
        let q_src = random_matrix(d, d, 8);
        let dec = svd(&q_src, d, d).unwrap();
        let q = dec.u;
        let mut y = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                for t in 0..d {
                    s += x[i * d + t] * q[t * d + j];
                }
                y[i * d + j] = s;
            }
        }
        let v = linear_cka(&x, &y, n, d, d, false).unwrap();
        assert!((v - 1.0).abs() <= 1e-5, "{v}");
    }

    #[test]
    fn invariant_to_isotropic_scaling() {
        let (n, d) = (6, 3);
        let x = random_matrix(n, d, 9);
        let y = random_matrix(n, d, 10);
        let base = linear_cka(&x, &y, n, d, d, false).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * 3.7).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * -0.2).collect();
        let scaled = linear_cka(&xs, &ys, n, d, d, false).unwrap();
        assert!((base - scaled).abs() <= 1e-6);
    }

    #[test]
    fn symmetric_and_bounded() {
        for seed in 0..50 {
            let x = random_matrix(5, 3, 100 + seed);
            let y = random_matrix(5, 7, 200 + seed);
            let a = linear_cka(&x, &y, 5, 3, 7, false).unwrap();
            let b = linear_cka(&y, &x, 5, 7, 3, false).unwrap();
            assert!((a - b).abs() <= 1e-6);
            assert!((-1e-9..=1.0 + 1e-6).contains(&a), "{a}");
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = vec![1.0, 2.0];
        assert!(matches!(
            linear_cka(&x, &x, 1, 2, 2, false),
            Err(CkaError::TooFewSamples { n: 1 })
        ));
        let zero = vec![0.0; 4];
        assert!(matches!(
            linear_cka(&zero, &x, 2, 2, 1, false),
            Err(CkaError::ZeroMatrix { which: "first" })
        ));
        let nan = vec![f64::NAN, 1.0, 2.0, 3.0];
        assert!(matches!(
            linear_cka(&nan, &nan, 2, 2, 2, false),
            Err(CkaError::NonFinite { .. })
        ));
        assert!(matches!(
            linear_cka(&x, &x, 2, 3, 1, false),
            Err(CkaError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn centering_removes_shared_offsets() {
        let (n, d) = (6, 3);
        let x = random_matrix(n, d, 11);
        let y = random_matrix(n, d, 12);
        let base = linear_cka(&x, &y, n, d, d, true).unwrap();
        let shifted: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v + 10.0 * (i % d) as f64)
            .collect();
        let v = linear_cka(&shifted, &y, n, d, d, true).unwrap();
        assert!((v - base).abs() <= 1e-9);
        // A constant matrix centers to zero and is rejected.
        let constant = vec![4.0; n * d];
        assert!(matches!(
            linear_cka(&constant, &y, n, d, d, true),
            Err(CkaError::ZeroMatrix { .. })
        ));
    }

    fn small_batch(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = stream(seed, purpose::TEST, 32);
        let data: Vec<f32> = (0..n * 3 * 32 * 32)
            .map(|_| rng.random_range(0.0f64..255.0) as f32)
            .collect();
        Tensor::new(vec![n, 3, 32, 32], data).unwrap()
    }

    #[test]
    fn layerwise_identical_batches_score_one() {
        let m = LayerGraph::<f32>::build(ArchId::ConvnetA, 10, 21);
        let batch = small_batch(4, 22);
        let report =
            cka_layerwise(&m, &batch, &batch, &["block1", "block3", "pool", "fc"], "adv_no_svd")
                .unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert!((row.value - 1.0).abs() <= 1e-6, "{row:?}");
            assert_eq!(row.variant, "adv_no_svd");
        }
        assert!(report.value("pool", "adv_no_svd").is_some());
        assert!(report.value("pool", "other").is_none());
    }

    #[test]
    fn layerwise_rejects_unpaired_batches() {
        let m = LayerGraph::<f32>::build(ArchId::ConvnetA, 10, 23);
        let a = small_batch(4, 24);
        let b = small_batch(3, 25);
        assert!(matches!(
            cka_layerwise(&m, &a, &b, &["pool"], "x"),
            Err(CkaError::Unpaired { .. })
        ));
    }

    #[test]
    fn crossmodel_identical_models_score_one_and_all_bounded() {
        let m1 = LayerGraph::<f32>::build(ArchId::ConvnetA, 10, 26);
        let m2 = LayerGraph::<f32>::build(ArchId::ConvnetB, 10, 27);
        let batch = small_batch(4, 28);
        let same = cka_crossmodel(&m1, &m1, &[("clean", &batch)], &["pool", "fc"]).unwrap();
        for row in &same.rows {
            assert!((row.value - 1.0).abs() <= 1e-6);
        }
        let cross = cka_crossmodel(&m1, &m2, &[("clean", &batch)], &["pool", "fc"]).unwrap();
        assert_eq!(cross.rows.len(), 2);
        for row in &cross.rows {
            assert!((-1e-9..=1.0 + 1e-6).contains(&row.value));
        }
    }

    #[test]
    fn pairing_of_sets_is_enforced() {
        let m = LayerGraph::<f32>::build(ArchId::ConvnetA, 10, 29);
        let batch = small_batch(3, 30);
        let a = collect_activations(&m, &batch, "pool", Some(&[0, 1, 2])).unwrap();
        let b = collect_activations(&m, &batch, "pool", Some(&[5, 6, 7])).unwrap();
        assert!(matches!(cka_of_sets(&a, &b, false), Err(CkaError::Unpaired { .. })));
        assert!(matches!(
            collect_activations(&m, &batch, "pool", Some(&[0, 1])),
            Err(CkaError::Unpaired { .. })
        ));
    }
}
