//! Dense tensors and tape-based reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node whose
//! inputs already live on the tape, so node indices are topologically
//! ordered by construction. [`Graph::backward`] walks the tape once in
//! reverse, accumulating adjoints. Calling it again overwrites gradients
//! from scratch; nothing accumulates across calls.
//!
//! The element type is generic over [`Element`] so the same code runs in
//! f32 (the working precision of training and attacks) and f64 (used by
//! oracles and gradient checks).

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rayon::prelude::*;

use crate::spectral::{self, SpectralError, SvdResult};

// ── Element type ────────────────────────────────────────────────────────

/// Scalar types the engine runs on.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Floor for relative-error denominators in gradient comparisons.
    const REL_FLOOR: f64;
    const DTYPE_NAME: &'static str;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }
    fn to_f(self) -> f64 {
        self.to_f64().expect("f64 widening")
    }
}

impl Element for f32 {
    const REL_FLOOR: f64 = 1e-6;
    const DTYPE_NAME: &'static str = "f32";
}

impl Element for f64 {
    const REL_FLOOR: f64 = 1e-12;
    const DTYPE_NAME: &'static str = "f64";
}

/// Sign with `sign(0) = 0`, so a zero gradient moves a pixel by exactly 0.
pub fn sign<T: Element>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    ZeroDim { shape: Vec<usize> },
    RankMismatch { op: &'static str, want: usize, got: Vec<usize> },
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    ChannelMismatch { input: usize, weight: usize },
    BiasMismatch { out_channels: usize, bias_len: usize },
    KernelTooLarge { kernel: usize, padded_h: usize, padded_w: usize },
    WindowTooLarge { window: usize, height: usize, width: usize },
    ZeroStride,
    ReshapeMismatch { from: Vec<usize>, to: Vec<usize> },
    LabelCountMismatch { rows: usize, labels: usize },
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    NonScalarLoss { shape: Vec<usize> },
    PlacementCount { images: usize, placements: usize },
    BadPlacement { side: usize, top: usize, left: usize, height: usize, width: usize },
    Spectral(SpectralError),
}

impl std::fmt::Display for TensorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {shape:?} wants {} values, got {len}", numel_of(shape))
            }
            TensorError::ZeroDim { shape } => {
                write!(f, "shape {shape:?} has a zero dimension")
            }
            TensorError::RankMismatch { op, want, got } => {
                write!(f, "{op}: expected a rank-{want} tensor, got shape {got:?}")
            }
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape {lhs:?} does not match {rhs:?}")
            }
            TensorError::ChannelMismatch { input, weight } => {
                write!(f, "conv2d: input has {input} channels but kernel expects {weight}")
            }
            TensorError::BiasMismatch { out_channels, bias_len } => {
                write!(f, "bias length {bias_len} does not match {out_channels} output channels")
            }
            TensorError::KernelTooLarge { kernel, padded_h, padded_w } => {
                write!(f, "kernel {kernel} exceeds padded input {padded_h}x{padded_w}")
            }
            TensorError::WindowTooLarge { window, height, width } => {
                write!(f, "pool window {window} exceeds input {height}x{width}")
            }
            TensorError::ZeroStride => write!(f, "stride must be at least 1"),
            TensorError::ReshapeMismatch { from, to } => {
                write!(f, "cannot reshape {from:?} ({} values) to {to:?} ({} values)",
                    numel_of(from), numel_of(to))
            }
            TensorError::LabelCountMismatch { rows, labels } => {
                write!(f, "{rows} logit rows but {labels} labels")
            }
            TensorError::LabelOutOfRange { index, label, classes } => {
                write!(f, "label {label} at position {index} out of range for {classes} classes")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            TensorError::PlacementCount { images, placements } => {
                write!(f, "{images} images but {placements} diversity placements")
            }
            TensorError::BadPlacement { side, top, left, height, width } => {
                write!(f, "placement side={side} top={top} left={left} does not fit {height}x{width}")
            }
            TensorError::Spectral(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TensorError {}

impl From<SpectralError> for TensorError {
    fn from(e: SpectralError) -> Self {
        TensorError::Spectral(e)
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

// ── Tensor ──────────────────────────────────────────────────────────────

/// Dense row-major tensor. Convolutional data uses NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { shape });
        }
        if numel_of(&shape) != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, len: data.len() });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "zeros: bad shape {shape:?}");
        let n = numel_of(&shape);
        Tensor { shape, data: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|e| *e = v);
        t
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    /// Marks the tensor as a gradient target (builder style).
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient of the same shape as `data`, populated by `backward`.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Flat-index read with multi-dimensional index, for tests and tools.
    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape.iter()).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for dim {i} ({dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Elementwise copy into another precision; exact for f32 -> f64.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }
}

// ── Graph nodes ─────────────────────────────────────────────────────────

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Resize-and-pad placement used by the input-diversity transform: the
/// image is nearest-neighbor resized to `side x side` and pasted into a
/// zero canvas with its top-left corner at `(top, left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiPlacement {
    pub side: usize,
    pub top: usize,
    pub left: usize,
}

enum Op<T> {
    Leaf,
    Scale { x: NodeId, factor: T },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Mix { a: NodeId, b: NodeId, beta: T },
    Sum { x: NodeId },
    Relu { x: NodeId },
    Reshape { x: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Pool { x: NodeId, kind: PoolKind, window: usize, stride: usize },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
    SvdTruncate { x: NodeId, k: usize, gap_eps: T, detached: bool, saved: Option<Vec<SvdResult<T>>> },
    Diversity { x: NodeId, placements: Vec<Option<DiPlacement>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs: bool,
}

/// Append-only autodiff tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient stored on a node after `backward`; `None` when the node
    /// did not participate or `backward` has not run.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs
    }

    // ── Node constructors ───────────────────────────────────────────

    /// Inserts a tensor as a tape leaf. Gradient flows into it only when
    /// its `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&e| e * factor).collect(),
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, factor }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape.clone(),
                rhs: vb.shape.clone(),
            });
        }
        let data = va.data.iter().zip(vb.data.iter()).map(|(&x, &y)| x + y).collect();
        let out = Tensor { shape: va.shape.clone(), data, requires_grad: false, grad: None };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: va.shape.clone(),
                rhs: vb.shape.clone(),
            });
        }
        let data = va.data.iter().zip(vb.data.iter()).map(|(&x, &y)| x * y).collect();
        let out = Tensor { shape: va.shape.clone(), data, requires_grad: false, grad: None };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul { a, b }, needs))
    }

    /// Convex-style blend `beta*a + (1-beta)*b`; used to fuse the plain
    /// and truncated logit branches.
    pub fn mix(&mut self, a: NodeId, b: NodeId, beta: T) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mix",
                lhs: va.shape.clone(),
                rhs: vb.shape.clone(),
            });
        }
        let ib = T::one() - beta;
        let data = va
            .data
            .iter()
            .zip(vb.data.iter())
            .map(|(&x, &y)| beta * x + ib * y)
            .collect();
        let out = Tensor { shape: va.shape.clone(), data, requires_grad: false, grad: None };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mix { a, b, beta }, needs))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data.iter().fold(T::zero(), |acc, &v| acc + v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data.iter().map(|&e| if e > T::zero() { e } else { T::zero() }).collect();
        let out = Tensor { shape: v.shape.clone(), data, requires_grad: false, grad: None };
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId, TensorError> {
        let shape = shape.into();
        let v = self.value(x);
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { shape });
        }
        if numel_of(&shape) != v.numel() {
            return Err(TensorError::ReshapeMismatch { from: v.shape.clone(), to: shape });
        }
        let out = Tensor { shape, data: v.data.clone(), requires_grad: false, grad: None };
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, needs))
    }

    /// Collapses `[N, C, H, W]` to `[N, C*H*W]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let s = self.value(x).shape.clone();
        if s.len() < 2 {
            return Err(TensorError::RankMismatch { op: "flatten", want: 2, got: s });
        }
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// 2-D convolution: `x` is NCHW, `w` is `[O, C, K, K]`, `b` is `[O]`.
    /// Output spatial size is `floor((H + 2*pad - K)/stride) + 1`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        let xs = self.value(x).shape.clone();
        let ws = self.value(w).shape.clone();
        let bs = self.value(b).shape.clone();
        if xs.len() != 4 {
            return Err(TensorError::RankMismatch { op: "conv2d input", want: 4, got: xs });
        }
        if ws.len() != 4 {
            return Err(TensorError::RankMismatch { op: "conv2d kernel", want: 4, got: ws });
        }
        if ws[2] != ws[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d kernel (square expected)",
                lhs: ws.clone(),
                rhs: vec![ws[0], ws[1], ws[2], ws[2]],
            });
        }
        if bs.len() != 1 {
            return Err(TensorError::RankMismatch { op: "conv2d bias", want: 1, got: bs });
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, wc, k) = (ws[0], ws[1], ws[2]);
        if c != wc {
            return Err(TensorError::ChannelMismatch { input: c, weight: wc });
        }
        if bs[0] != o {
            return Err(TensorError::BiasMismatch { out_channels: o, bias_len: bs[0] });
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(TensorError::KernelTooLarge {
                kernel: k,
                padded_h: h + 2 * pad,
                padded_w: wd + 2 * pad,
            });
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let data = conv2d_forward(
            self.value(x).data(),
            n, c, h, wd,
            self.value(w).data(),
            o, k,
            self.value(b).data(),
            stride, pad, oh, ow,
        );
        let out = Tensor { shape: vec![n, o, oh, ow], data, requires_grad: false, grad: None };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, needs))
    }

    /// Fully connected layer: `x` is `[N, D]`, `w` is `[D, M]`, `b` is `[M]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.value(x).shape.clone();
        let ws = self.value(w).shape.clone();
        let bs = self.value(b).shape.clone();
        if xs.len() != 2 {
            return Err(TensorError::RankMismatch { op: "dense input", want: 2, got: xs });
        }
        if ws.len() != 2 {
            return Err(TensorError::RankMismatch { op: "dense weight", want: 2, got: ws });
        }
        if bs.len() != 1 {
            return Err(TensorError::RankMismatch { op: "dense bias", want: 1, got: bs });
        }
        if xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch { op: "dense", lhs: xs, rhs: ws });
        }
        if bs[0] != ws[1] {
            return Err(TensorError::BiasMismatch { out_channels: ws[1], bias_len: bs[0] });
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let data = dense_forward(self.value(x).data(), n, d, self.value(w).data(), m, self.value(b).data());
        let out = Tensor { shape: vec![n, m], data, requires_grad: false, grad: None };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Dense { x, w, b }, needs))
    }

    /// Spatial pooling over non-padded `window x window` patches.
    /// Max-pool ties route gradient to the first maximum in scan order.
    pub fn pool(
        &mut self,
        x: NodeId,
        kind: PoolKind,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, TensorError> {
        if stride == 0 || window == 0 {
            return Err(TensorError::ZeroStride);
        }
        let xs = self.value(x).shape.clone();
        if xs.len() != 4 {
            return Err(TensorError::RankMismatch { op: "pool input", want: 4, got: xs });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if window > h || window > w {
            return Err(TensorError::WindowTooLarge { window, height: h, width: w });
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let data = pool_forward(self.value(x).data(), n, c, h, w, kind, window, stride, oh, ow);
        let out = Tensor { shape: vec![n, c, oh, ow], data, requires_grad: false, grad: None };
        let needs = self.needs(x);
        Ok(self.push(out, Op::Pool { x, kind, window, stride }, needs))
    }

    /// Mean cross-entropy of logits `[N, C]` against integer labels, with
    /// the usual max-subtraction inside the log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, TensorError> {
        let ls = self.value(logits).shape.clone();
        if ls.len() != 2 {
            return Err(TensorError::RankMismatch { op: "cross_entropy", want: 2, got: ls });
        }
        let (n, c) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(TensorError::LabelCountMismatch { rows: n, labels: labels.len() });
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(TensorError::LabelOutOfRange { index: i, label: y, classes: c });
            }
        }
        let loss = ce_forward(self.value(logits).data(), n, c, labels);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec() },
            needs,
        ))
    }

    /// Per-image rank-k truncation of an NCHW feature, treating each image
    /// as a `C x (H*W)` matrix. When `k >= min(C, H*W)` the operation is
    /// the identity in both directions and no decomposition is computed.
    ///
    /// `gap_eps` clamps reciprocal spectral gaps in the adjoint; with
    /// `detached` the singular vectors are held constant during backward.
    pub fn svd_truncate(
        &mut self,
        x: NodeId,
        k: usize,
        gap_eps: T,
        detached: bool,
    ) -> Result<NodeId, TensorError> {
        if k == 0 {
            return Err(TensorError::Spectral(SpectralError::ZeroRank));
        }
        let xs = self.value(x).shape.clone();
        if xs.len() != 4 {
            return Err(TensorError::RankMismatch { op: "svd_truncate", want: 4, got: xs });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = h * w;
        let m = c.min(hw);
        let needs = self.needs(x);
        if k >= m {
            let out = Tensor {
                shape: xs,
                data: self.value(x).data.clone(),
                requires_grad: false,
                grad: None,
            };
            return Ok(self.push(out, Op::SvdTruncate { x, k, gap_eps, detached, saved: None }, needs));
        }
        let xd = self.value(x).data();
        let per_image: Result<Vec<(Vec<T>, SvdResult<T>)>, SpectralError> = (0..n)
            .into_par_iter()
            .map(|i| {
                let img = &xd[i * c * hw..(i + 1) * c * hw];
                let d = spectral::svd(img, c, hw)?;
                let z = spectral::topk_reconstruct(&d, k)?;
                Ok((z, d))
            })
            .collect();
        let per_image = per_image?;
        let mut data = Vec::with_capacity(n * c * hw);
        let mut saved = Vec::with_capacity(n);
        for (z, d) in per_image {
            data.extend_from_slice(&z);
            saved.push(d);
        }
        let out = Tensor { shape: xs, data, requires_grad: false, grad: None };
        Ok(self.push(out, Op::SvdTruncate { x, k, gap_eps, detached, saved: Some(saved) }, needs))
    }

    /// Applies per-image resize-and-pad placements (the input-diversity
    /// transform). `None` leaves that image untouched.
    pub fn diversity(
        &mut self,
        x: NodeId,
        placements: Vec<Option<DiPlacement>>,
    ) -> Result<NodeId, TensorError> {
        let xs = self.value(x).shape.clone();
        if xs.len() != 4 {
            return Err(TensorError::RankMismatch { op: "diversity", want: 4, got: xs });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if placements.len() != n {
            return Err(TensorError::PlacementCount { images: n, placements: placements.len() });
        }
        for p in placements.iter().flatten() {
            if p.side == 0 || p.top + p.side > h || p.left + p.side > w {
                return Err(TensorError::BadPlacement {
                    side: p.side,
                    top: p.top,
                    left: p.left,
                    height: h,
                    width: w,
                });
            }
        }
        let data = diversity_forward(self.value(x).data(), n, c, h, w, &placements);
        let out = Tensor { shape: xs, data, requires_grad: false, grad: None };
        let needs = self.needs(x);
        Ok(self.push(out, Op::Diversity { x, placements }, needs))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss node. Overwrites any stored
    /// gradients from earlier calls; every node that participates (and
    /// every `requires_grad` leaf) ends up with a populated gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_val.shape.clone() });
        }
        for node in self.nodes.iter_mut() {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let up = upper[0].as_ref().expect("gradient present").as_slice();
            self.dispatch_backward(id, up, lower);
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if !node.needs {
                continue;
            }
            match grads[id].take() {
                Some(g) => node.value.grad = Some(g),
                // A requires_grad leaf disconnected from the loss still
                // gets a (zero) gradient.
                None => node.value.grad = Some(vec![T::zero(); node.value.numel()]),
            }
        }
        Ok(())
    }

    fn dispatch_backward(&self, id: usize, up: &[T], lower: &mut [Option<Vec<T>>]) {
        // Tape order guarantees every input index is strictly below `id`,
        // so `lower` (the grads below `id`) can hold all input buffers.
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Scale { x, factor } => {
                if self.needs(*x) {
                    let g = acc_slot(&mut lower[x.0], up.len());
                    for (gi, &u) in g.iter_mut().zip(up) {
                        *gi = *gi + *factor * u;
                    }
                }
            }
            Op::Add { a, b } => {
                for side in [a, b] {
                    if self.needs(*side) {
                        let g = acc_slot(&mut lower[side.0], up.len());
                        for (gi, &u) in g.iter_mut().zip(up) {
                            *gi = *gi + u;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let vb = self.value(*b).data();
                    let g = acc_slot(&mut lower[a.0], up.len());
                    for i in 0..up.len() {
                        g[i] = g[i] + up[i] * vb[i];
                    }
                }
                if self.needs(*b) {
                    let va = self.value(*a).data();
                    let g = acc_slot(&mut lower[b.0], up.len());
                    for i in 0..up.len() {
                        g[i] = g[i] + up[i] * va[i];
                    }
                }
            }
            Op::Mix { a, b, beta } => {
                if self.needs(*a) {
                    let g = acc_slot(&mut lower[a.0], up.len());
                    for (gi, &u) in g.iter_mut().zip(up) {
                        *gi = *gi + *beta * u;
                    }
                }
                if self.needs(*b) {
                    let ib = T::one() - *beta;
                    let g = acc_slot(&mut lower[b.0], up.len());
                    for (gi, &u) in g.iter_mut().zip(up) {
                        *gi = *gi + ib * u;
                    }
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let len = self.value(*x).numel();
                    let u = up[0];
                    let g = acc_slot(&mut lower[x.0], len);
                    for gi in g.iter_mut() {
                        *gi = *gi + u;
                    }
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let vx = self.value(*x).data();
                    let g = acc_slot(&mut lower[x.0], up.len());
                    for i in 0..up.len() {
                        if vx[i] > T::zero() {
                            g[i] = g[i] + up[i];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    let g = acc_slot(&mut lower[x.0], up.len());
                    for (gi, &u) in g.iter_mut().zip(up) {
                        *gi = *gi + u;
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let os = self.value(NodeId(id)).shape();
                let (oh, ow) = (os[2], os[3]);
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let g = acc_slot(&mut lower[x.0], n * c * h * wd);
                    conv2d_backward_x(wv, n, c, h, wd, o, k, *stride, *pad, up, oh, ow, g);
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    let g = acc_slot(&mut lower[w.0], o * c * k * k);
                    conv2d_backward_w(xv, n, c, h, wd, o, k, *stride, *pad, up, oh, ow, g);
                }
                if self.needs(*b) {
                    let g = acc_slot(&mut lower[b.0], o);
                    for ni in 0..n {
                        for oi in 0..o {
                            let plane = &up[(ni * o + oi) * oh * ow..][..oh * ow];
                            let mut s = T::zero();
                            for &u in plane {
                                s = s + u;
                            }
                            g[oi] = g[oi] + s;
                        }
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (n, d, m) = (xs[0], xs[1], ws[1]);
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let g = acc_slot(&mut lower[x.0], n * d);
                    for i in 0..n {
                        let urow = &up[i * m..(i + 1) * m];
                        let grow = &mut g[i * d..(i + 1) * d];
                        for di in 0..d {
                            let wrow = &wv[di * m..(di + 1) * m];
                            let mut acc2 = T::zero();
                            for j in 0..m {
                                acc2 = acc2 + urow[j] * wrow[j];
                            }
                            grow[di] = grow[di] + acc2;
                        }
                    }
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    let g = acc_slot(&mut lower[w.0], d * m);
                    for i in 0..n {
                        let urow = &up[i * m..(i + 1) * m];
                        let xrow = &xv[i * d..(i + 1) * d];
                        for di in 0..d {
                            let xv2 = xrow[di];
                            let grow = &mut g[di * m..(di + 1) * m];
                            for j in 0..m {
                                grow[j] = grow[j] + xv2 * urow[j];
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let g = acc_slot(&mut lower[b.0], m);
                    for i in 0..n {
                        let urow = &up[i * m..(i + 1) * m];
                        for j in 0..m {
                            g[j] = g[j] + urow[j];
                        }
                    }
                }
            }
            Op::Pool { x, kind, window, stride } => {
                if self.needs(*x) {
                    let xs = self.value(*x).shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let os = self.value(NodeId(id)).shape();
                    let (oh, ow) = (os[2], os[3]);
                    let xv = self.value(*x).data();
                    let g = acc_slot(&mut lower[x.0], n * c * h * w);
                    pool_backward(xv, n, c, h, w, *kind, *window, *stride, up, oh, ow, g);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.needs(*logits) {
                    let ls = self.value(*logits).shape();
                    let (n, c) = (ls[0], ls[1]);
                    let lv = self.value(*logits).data();
                    let g = acc_slot(&mut lower[logits.0], n * c);
                    ce_backward(lv, n, c, labels, up[0], g);
                }
            }
            Op::SvdTruncate { x, k, gap_eps, detached, saved } => {
                if self.needs(*x) {
                    let xs = self.value(*x).shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let hw = h * w;
                    let g = acc_slot(&mut lower[x.0], n * c * hw);
                    match saved {
                        None => {
                            for (gi, &u) in g.iter_mut().zip(up) {
                                *gi = *gi + u;
                            }
                        }
                        Some(decomps) => {
                            let parts: Vec<Vec<T>> = (0..n)
                                .into_par_iter()
                                .map(|i| {
                                    let up_img = &up[i * c * hw..(i + 1) * c * hw];
                                    spectral::truncation_backward_svd(
                                        &decomps[i], *k, up_img, *gap_eps, *detached,
                                    )
                                    .expect("saved decomposition matches upstream shape")
                                })
                                .collect();
                            for (i, part) in parts.iter().enumerate() {
                                let gimg = &mut g[i * c * hw..(i + 1) * c * hw];
                                for (gi, &p) in gimg.iter_mut().zip(part) {
                                    *gi = *gi + p;
                                }
                            }
                        }
                    }
                }
            }
            Op::Diversity { x, placements } => {
                if self.needs(*x) {
                    let xs = self.value(*x).shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let g = acc_slot(&mut lower[x.0], n * c * h * w);
                    diversity_backward(n, c, h, w, placements, up, g);
                }
            }
        }
    }
}

/// Returns the gradient buffer for a slot, zero-initializing on first use.
fn acc_slot<T: Element>(slot: &mut Option<Vec<T>>, len: usize) -> &mut [T] {
    slot.get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice()
}

// ── Convolution kernels ─────────────────────────────────────────────────

/// Valid output-column range for a kernel column `kw`: all `ow` with
/// `0 <= ow*stride + kw - pad < w`.
fn ow_range(stride: usize, kw: usize, pad: usize, w: usize, ow: usize) -> Option<(usize, usize)> {
    let lo = if kw >= pad { 0 } else { (pad - kw).div_ceil(stride) };
    let top = w - 1 + pad;
    if kw > top {
        return None;
    }
    let hi = ((top - kw) / stride).min(ow - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    wt: &[T],
    o: usize,
    k: usize,
    bias: &[T],
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * oh * ow];
    let plane = oh * ow;
    let work = |plane_idx: usize, dst: &mut [T]| {
        let ni = plane_idx / o;
        let oi = plane_idx % o;
        let b = bias[oi];
        for v in dst.iter_mut() {
            *v = b;
        }
        let x_img = &x[ni * c * h * w..][..c * h * w];
        for ci in 0..c {
            let x_ch = &x_img[ci * h * w..][..h * w];
            let w_ch = &wt[((oi * c + ci) * k) * k..][..k * k];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w_ch[kh * k + kw];
                    let Some((lo, hi)) = ow_range(stride, kw, pad, w, ow) else { continue };
                    for ohi in 0..oh {
                        let ih = (ohi * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = &x_ch[(ih as usize) * w..][..w];
                        let d_row = &mut dst[ohi * ow..][..ow];
                        if stride == 1 {
                            // input col = ow + kw - pad, non-negative at lo
                            let start = lo + kw - pad;
                            let len = hi - lo + 1;
                            let xr = &x_row[start..][..len];
                            let dr = &mut d_row[lo..][..len];
                            for i in 0..len {
                                dr[i] = dr[i] + wv * xr[i];
                            }
                        } else {
                            for owi in lo..=hi {
                                let iw = owi * stride + kw - pad;
                                d_row[owi] = d_row[owi] + wv * x_row[iw];
                            }
                        }
                    }
                }
            }
        }
    };
    if n * o > 1 && out.len() >= 1 << 12 {
        out.par_chunks_mut(plane).enumerate().for_each(|(i, p)| work(i, p));
    } else {
        out.chunks_mut(plane).enumerate().for_each(|(i, p)| work(i, p));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_x<T: Element>(
    wt: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    up: &[T],
    oh: usize,
    ow: usize,
    xg: &mut [T],
) {
    let plane = h * w;
    let work = |plane_idx: usize, dst: &mut [T]| {
        let ni = plane_idx / c;
        let ci = plane_idx % c;
        for oi in 0..o {
            let up_plane = &up[(ni * o + oi) * oh * ow..][..oh * ow];
            let w_ch = &wt[((oi * c + ci) * k) * k..][..k * k];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w_ch[kh * k + kw];
                    let Some((lo, hi)) = ow_range(stride, kw, pad, w, ow) else { continue };
                    for ohi in 0..oh {
                        let ih = (ohi * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let d_row = &mut dst[(ih as usize) * w..][..w];
                        let u_row = &up_plane[ohi * ow..][..ow];
                        if stride == 1 {
                            let start = lo + kw - pad;
                            let len = hi - lo + 1;
                            let dr = &mut d_row[start..][..len];
                            let ur = &u_row[lo..][..len];
                            for i in 0..len {
                                dr[i] = dr[i] + wv * ur[i];
                            }
                        } else {
                            for owi in lo..=hi {
                                let iw = owi * stride + kw - pad;
                                d_row[iw] = d_row[iw] + wv * u_row[owi];
                            }
                        }
                    }
                }
            }
        }
    };
    if n * c > 1 && xg.len() >= 1 << 12 {
        xg.par_chunks_mut(plane).enumerate().for_each(|(i, p)| work(i, p));
    } else {
        xg.chunks_mut(plane).enumerate().for_each(|(i, p)| work(i, p));
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_w<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    up: &[T],
    oh: usize,
    ow: usize,
    wg: &mut [T],
) {
    let per_o = c * k * k;
    let work = |oi: usize, dst: &mut [T]| {
        for ni in 0..n {
            let up_plane = &up[(ni * o + oi) * oh * ow..][..oh * ow];
            let x_img = &x[ni * c * h * w..][..c * h * w];
            for ci in 0..c {
                let x_ch = &x_img[ci * h * w..][..h * w];
                for kh in 0..k {
                    for kw in 0..k {
                        let Some((lo, hi)) = ow_range(stride, kw, pad, w, ow) else { continue };
                        let mut acc = T::zero();
                        for ohi in 0..oh {
                            let ih = (ohi * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let x_row = &x_ch[(ih as usize) * w..][..w];
                            let u_row = &up_plane[ohi * ow..][..ow];
                            if stride == 1 {
                                let start = lo + kw - pad;
                                let len = hi - lo + 1;
                                let xr = &x_row[start..][..len];
                                let ur = &u_row[lo..][..len];
                                for i in 0..len {
                                    acc = acc + xr[i] * ur[i];
                                }
                            } else {
                                for owi in lo..=hi {
                                    let iw = owi * stride + kw - pad;
                                    acc = acc + x_row[iw] * u_row[owi];
                                }
                            }
                        }
                        let idx = (ci * k + kh) * k + kw;
                        dst[idx] = dst[idx] + acc;
                    }
                }
            }
        }
    };
    if o > 1 && n * o * oh * ow >= 1 << 12 {
        wg.par_chunks_mut(per_o).enumerate().for_each(|(i, p)| work(i, p));
    } else {
        wg.chunks_mut(per_o).enumerate().for_each(|(i, p)| work(i, p));
    }
}

// ── Dense, pool, cross-entropy kernels ──────────────────────────────────

fn dense_forward<T: Element>(x: &[T], n: usize, d: usize, w: &[T], m: usize, b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        orow.copy_from_slice(&b[..m]);
        let xrow = &x[i * d..(i + 1) * d];
        for di in 0..d {
            let xv = xrow[di];
            let wrow = &w[di * m..(di + 1) * m];
            for j in 0..m {
                orow[j] = orow[j] + xv * wrow[j];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn pool_forward<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kind: PoolKind,
    window: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * oh * ow];
    let inv = T::one() / T::of((window * window) as f64);
    for plane_idx in 0..n * c {
        let src = &x[plane_idx * h * w..][..h * w];
        let dst = &mut out[plane_idx * oh * ow..][..oh * ow];
        for ohi in 0..oh {
            for owi in 0..ow {
                let (r0, c0) = (ohi * stride, owi * stride);
                let v = match kind {
                    PoolKind::Max => {
                        let mut best = src[r0 * w + c0];
                        for kh in 0..window {
                            let row = &src[(r0 + kh) * w + c0..][..window];
                            for &e in row {
                                if e > best {
                                    best = e;
                                }
                            }
                        }
                        best
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for kh in 0..window {
                            let row = &src[(r0 + kh) * w + c0..][..window];
                            for &e in row {
                                acc = acc + e;
                            }
                        }
                        acc * inv
                    }
                };
                dst[ohi * ow + owi] = v;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn pool_backward<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kind: PoolKind,
    window: usize,
    stride: usize,
    up: &[T],
    oh: usize,
    ow: usize,
    xg: &mut [T],
) {
    let inv = T::one() / T::of((window * window) as f64);
    for plane_idx in 0..n * c {
        let src = &x[plane_idx * h * w..][..h * w];
        let gsrc = &mut xg[plane_idx * h * w..][..h * w];
        let gup = &up[plane_idx * oh * ow..][..oh * ow];
        for ohi in 0..oh {
            for owi in 0..ow {
                let u = gup[ohi * ow + owi];
                let (r0, c0) = (ohi * stride, owi * stride);
                match kind {
                    PoolKind::Max => {
                        // First maximum in (row, col) scan order takes the
                        // whole gradient; ties elsewhere get nothing.
                        let mut best = src[r0 * w + c0];
                        let mut best_at = r0 * w + c0;
                        for kh in 0..window {
                            for kw in 0..window {
                                let idx = (r0 + kh) * w + (c0 + kw);
                                if src[idx] > best {
                                    best = src[idx];
                                    best_at = idx;
                                }
                            }
                        }
                        gsrc[best_at] = gsrc[best_at] + u;
                    }
                    PoolKind::Avg => {
                        let s = u * inv;
                        for kh in 0..window {
                            let grow = &mut gsrc[(r0 + kh) * w + c0..][..window];
                            for e in grow.iter_mut() {
                                *e = *e + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn ce_forward<T: Element>(logits: &[T], n: usize, c: usize, labels: &[usize]) -> T {
    let mut total = T::zero();
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        let mut z = T::zero();
        for &v in row {
            z = z + (v - m).exp();
        }
        total = total + z.ln() + m - row[labels[i]];
    }
    total / T::of(n as f64)
}

fn ce_backward<T: Element>(logits: &[T], n: usize, c: usize, labels: &[usize], up: T, g: &mut [T]) {
    let scale = up / T::of(n as f64);
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        let mut z = T::zero();
        for &v in row {
            z = z + (v - m).exp();
        }
        let grow = &mut g[i * c..(i + 1) * c];
        for j in 0..c {
            let p = (row[j] - m).exp() / z;
            let delta = if j == labels[i] { T::one() } else { T::zero() };
            grow[j] = grow[j] + scale * (p - delta);
        }
    }
}

// ── Diversity kernels ───────────────────────────────────────────────────

fn diversity_forward<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    placements: &[Option<DiPlacement>],
) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * h * w];
    let img = c * h * w;
    for i in 0..n {
        let src = &x[i * img..(i + 1) * img];
        let dst = &mut out[i * img..(i + 1) * img];
        match placements[i] {
            None => dst.copy_from_slice(src),
            Some(p) => {
                for ch in 0..c {
                    let s_ch = &src[ch * h * w..][..h * w];
                    let d_ch = &mut dst[ch * h * w..][..h * w];
                    for r in 0..p.side {
                        let sr = r * h / p.side;
                        let drow = &mut d_ch[(p.top + r) * w + p.left..][..p.side];
                        let srow = &s_ch[sr * w..][..w];
                        for (cc, dv) in drow.iter_mut().enumerate() {
                            *dv = srow[cc * w / p.side];
                        }
                    }
                }
            }
        }
    }
    out
}

fn diversity_backward<T: Element>(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    placements: &[Option<DiPlacement>],
    up: &[T],
    xg: &mut [T],
) {
    let img = c * h * w;
    for i in 0..n {
        let u = &up[i * img..(i + 1) * img];
        let g = &mut xg[i * img..(i + 1) * img];
        match placements[i] {
            None => {
                for (gi, &uv) in g.iter_mut().zip(u) {
                    *gi = *gi + uv;
                }
            }
            Some(p) => {
                for ch in 0..c {
                    let u_ch = &u[ch * h * w..][..h * w];
                    let g_ch = &mut g[ch * h * w..][..h * w];
                    for r in 0..p.side {
                        let sr = r * h / p.side;
                        for cc in 0..p.side {
                            let sc = cc * w / p.side;
                            g_ch[sr * w + sc] =
                                g_ch[sr * w + sc] + u_ch[(p.top + r) * w + (p.left + cc)];
                        }
                    }
                }
            }
        }
    }
}

// ── Gradient checking ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub non_finite: usize,
    pub pass: bool,
}

/// Central-difference check of reverse-mode gradients at `point`.
///
/// `build` maps a fresh graph and a leaf node to a scalar loss node; the
/// analytic gradient from one backward pass is compared against
/// `(f(x+eps) - f(x-eps)) / (2 eps)` at `probes` coordinates sampled
/// deterministically from `seed`. The relative error denominator is
/// `max(|analytic| + |numeric|, REL_FLOOR)` for the element type. Probes
/// whose finite-difference evaluation goes non-finite are counted and
/// fail the check.
pub fn grad_check<T: Element, F>(
    build: &F,
    point: &Tensor<T>,
    eps: f64,
    tol: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<T>, NodeId) -> NodeId,
{
    use rand::seq::SliceRandom;

    let mut g = Graph::new();
    let x = g.leaf(point.clone().requiring_grad());
    let loss = build(&mut g, x);
    g.backward(loss)?;
    let analytic: Vec<f64> = g
        .grad(x)
        .expect("leaf gradient populated")
        .iter()
        .map(|&v| v.to_f())
        .collect();

    let numel = point.numel();
    let mut coords: Vec<usize> = (0..numel).collect();
    let mut rng = crate::rng::stream(seed, crate::rng::purpose::GRAD_CHECK, 0);
    coords.shuffle(&mut rng);
    coords.truncate(probes.min(numel));

    let eval = |t: &Tensor<T>| -> f64 {
        let mut g = Graph::new();
        let x = g.leaf(t.clone());
        let loss = build(&mut g, x);
        g.value(loss).data()[0].to_f()
    };

    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut non_finite = 0usize;
    for &ci in &coords {
        let mut plus = point.clone();
        plus.data_mut()[ci] = plus.data()[ci] + T::of(eps);
        let mut minus = point.clone();
        minus.data_mut()[ci] = minus.data()[ci] - T::of(eps);
        let (lp, lm) = (eval(&plus), eval(&minus));
        if !lp.is_finite() || !lm.is_finite() {
            non_finite += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * eps);
        let a = analytic[ci];
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(T::REL_FLOOR);
        sum_rel += rel;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    let counted = coords.len() - non_finite;
    let mean = if counted > 0 { sum_rel / counted as f64 } else { f64::INFINITY };
    Ok(GradCheckReport {
        probes: coords.len(),
        max_rel_err: max_rel,
        mean_rel_err: mean,
        non_finite,
        pass: non_finite == 0 && max_rel <= tol,
    })
}

// ── Tests ───────────────────────────────────────────────────────────────
