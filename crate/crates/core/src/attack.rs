//! Iterative sign-gradient attacks with input transforms and an optional
//! low-rank feature-fusion hook.
//!
//! The core update is x' <- clip(x' + alpha * sign(g)) projected onto the
//! L-inf ball of radius epsilon around the clean image and onto [0, 255].
//! Per step the gradient is assembled as: scale copies -> per-copy random
//! diversity -> gradient of the (optionally fused) loss -> Gaussian
//! smoothing -> variance correction -> momentum.
//!
//! The fusion hook splits the forward pass at a named layer, truncates the
//! feature of each image to its top-k singular components, pushes both the
//! raw and the truncated feature through the rest of the network, and
//! blends the two logit sets as beta * raw + (1 - beta) * truncated.
//!
//! All randomness comes from per-image streams keyed by (seed, image
//! index), so results do not depend on how a batch is chunked internally.

use rand::Rng;

use crate::models::{slice_batch, LayerGraph, ModelError};
use crate::rng::{purpose, stream};
use crate::tensor::{sign, DiPlacement, Element, Graph, NodeId, Tensor, TensorError};

/// Images processed together through the full step loop. Sized so the
/// activations of a five-copy scale stack stay comfortably in memory.
const CHUNK: usize = 32;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum AttackError {
    Invalid { field: &'static str, reason: String },
    UnknownMethod { name: String },
    UnknownGradMode { name: String },
    Model(ModelError),
    Tensor(TensorError),
}

impl std::fmt::Display for AttackError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackError::Invalid { field, reason } => write!(f, "invalid {field}: {reason}"),
            AttackError::UnknownMethod { name } => {
                write!(f, "unknown method '{name}'; expected ifgsm, mifgsm, or nifgsm")
            }
            AttackError::UnknownGradMode { name } => {
                write!(f, "unknown gradient mode '{name}'; expected full or detached")
            }
            AttackError::Model(e) => write!(f, "{e}"),
            AttackError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AttackError {}

impl From<ModelError> for AttackError {
    fn from(e: ModelError) -> Self {
        AttackError::Model(e)
    }
}

impl From<TensorError> for AttackError {
    fn from(e: TensorError) -> Self {
        AttackError::Tensor(e)
    }
}

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    IFgsm,
    MiFgsm,
    NiFgsm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::IFgsm, Method::MiFgsm, Method::NiFgsm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::IFgsm => "i-fgsm",
            Method::MiFgsm => "mi-fgsm",
            Method::NiFgsm => "ni-fgsm",
        }
    }

    fn uses_momentum(&self) -> bool {
        !matches!(self, Method::IFgsm)
    }
}

impl std::str::FromStr for Method {
    type Err = AttackError;
    fn from_str(s: &str) -> Result<Self, AttackError> {
        // Both the hyphenated literature spelling and the bare token parse.
        match s.replace('-', "").as_str() {
            "ifgsm" => Ok(Method::IFgsm),
            "mifgsm" => Ok(Method::MiFgsm),
            "nifgsm" => Ok(Method::NiFgsm),
            _ => Err(AttackError::UnknownMethod { name: s.to_string() }),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Random resize and placement applied with probability `p` per image
    /// per step.
    Di { p: f64 },
    /// Gaussian smoothing of the gradient with an odd kernel length.
    Ti { kernel: usize },
    /// Loss averaged over `copies` dyadic intensity scalings of the input.
    Si { copies: usize },
    /// Gradient variance correction from `samples` neighbors drawn in a
    /// box of half-width `spread * epsilon`.
    Vt { spread: f64, samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Differentiate through the decomposition itself.
    Full,
    /// Treat the singular subspaces as constants and only project the
    /// upstream gradient onto the kept components.
    Detached,
}

impl GradMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradMode::Full => "full",
            GradMode::Detached => "detached",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = AttackError;
    fn from_str(s: &str) -> Result<Self, AttackError> {
        match s {
            "full" => Ok(GradMode::Full),
            "detached" => Ok(GradMode::Detached),
            other => Err(AttackError::UnknownGradMode { name: other.to_string() }),
        }
    }
}

/// Where and how to splice the low-rank branch into the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdHook {
    pub layer: String,
    pub k: usize,
    /// Weight of the raw-feature logits in the blend; `1 - beta` goes to
    /// the truncated branch.
    pub beta: f64,
    pub grad_mode: GradMode,
    pub gap_eps: f64,
}

impl Default for SvdHook {
    fn default() -> Self {
        SvdHook {
            layer: "block3".to_string(),
            k: 1,
            beta: 0.5,
            grad_mode: GradMode::Full,
            gap_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub method: Method,
    /// L-inf budget in pixel units.
    pub epsilon: f64,
    pub steps: usize,
    /// Step size; defaults to epsilon / steps.
    pub alpha: Option<f64>,
    /// Momentum decay for mifgsm and nifgsm.
    pub momentum: f64,
    pub transforms: Vec<Transform>,
    pub svd: Option<SvdHook>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: Method::MiFgsm,
            epsilon: 16.0,
            steps: 10,
            alpha: None,
            momentum: 1.0,
            transforms: Vec::new(),
            svd: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / self.steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |field: &'static str, reason: String| Err(AttackError::Invalid { field, reason });
        if !(self.epsilon > 0.0) {
            return bad("epsilon", format!("{} is not positive", self.epsilon));
        }
        if self.steps == 0 {
            return bad("steps", "zero steps".to_string());
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return bad("alpha", format!("{a} is not positive"));
            }
        }
        if !(self.momentum >= 0.0) {
            return bad("momentum", format!("{} is negative", self.momentum));
        }
        for t in &self.transforms {
            match *t {
                Transform::Di { p } => {
                    if !(0.0..=1.0).contains(&p) {
                        return bad("di probability", format!("{p} is outside [0, 1]"));
                    }
                }
                Transform::Ti { kernel } => {
                    if kernel == 0 || kernel % 2 == 0 {
                        return bad("ti kernel", format!("{kernel} is not odd"));
                    }
                }
                Transform::Si { copies } => {
                    if copies == 0 {
                        return bad("si copies", "zero copies".to_string());
                    }
                }
                Transform::Vt { spread, samples } => {
                    if !(spread > 0.0) {
                        return bad("vt spread", format!("{spread} is not positive"));
                    }
                    if samples == 0 {
                        return bad("vt samples", "zero samples".to_string());
                    }
                }
            }
        }
        if let Some(hook) = &self.svd {
            if hook.k == 0 {
                return bad("svd rank", "k must be at least 1".to_string());
            }
            if !(0.0..=1.0).contains(&hook.beta) {
                return bad("svd beta", format!("{} is outside [0, 1]", hook.beta));
            }
            if !(hook.gap_eps > 0.0) {
                return bad("svd gap_eps", format!("{} is not positive", hook.gap_eps));
            }
        }
        Ok(())
    }

    fn di(&self) -> Option<f64> {
        self.transforms.iter().find_map(|t| match t {
            Transform::Di { p } => Some(*p),
            _ => None,
        })
    }

    fn ti(&self) -> Option<usize> {
        self.transforms.iter().find_map(|t| match t {
            Transform::Ti { kernel } => Some(*kernel),
            _ => None,
        })
    }

    fn si(&self) -> usize {
        self.transforms
            .iter()
            .find_map(|t| match t {
                Transform::Si { copies } => Some(*copies),
                _ => None,
            })
            .unwrap_or(1)
    }

    fn vt(&self) -> Option<(f64, usize)> {
        self.transforms.iter().find_map(|t| match t {
            Transform::Vt { spread, samples } => Some((*spread, *samples)),
            _ => None,
        })
    }
}

// ── Results ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AdversarialBatch<T> {
    pub clean: Tensor<T>,
    pub adv: Tensor<T>,
    pub labels: Vec<usize>,
    /// Max absolute pixel change per image.
    pub linf: Vec<T>,
    /// Indices of images whose gradient went non-finite; they stay frozen
    /// at their last valid iterate.
    pub failed: Vec<usize>,
    /// Architecture name of the model the batch was crafted on.
    pub source_model: String,
}

impl<T: Element> AdversarialBatch<T> {
    pub fn max_linf(&self) -> f64 {
        self.linf.iter().fold(0.0, |m, &v| m.max(v.to_f()))
    }
}

/// Fraction of images the model misclassifies.
pub fn success_rate<T: Element>(
    model: &LayerGraph<T>,
    batch: &AdversarialBatch<T>,
) -> Result<f64, ModelError> {
    Ok(1.0 - model.accuracy(&batch.adv, &batch.labels)?)
}

/// Clamps `v` into the epsilon box around `clean` intersected with
/// `[lo, hi]`.
pub fn project_clip<T: Element>(v: T, clean: T, eps: T, lo: T, hi: T) -> T {
    let low = (clean - eps).max(lo);
    let high = (clean + eps).min(hi);
    v.max(low).min(high)
}

// ── Named building blocks ───────────────────────────────────────────────

/// Forward pass with the spectral hook spliced in: the feature at the
/// hook layer continues twice, raw and rank-k truncated, and the two
/// logit sets are blended with weight `beta` on the raw branch. The
/// result stays differentiable with respect to `x`.
pub fn fused_logits<T: Element>(
    model: &LayerGraph<T>,
    g: &mut Graph<T>,
    x: NodeId,
    hook: &SvdHook,
) -> Result<NodeId, AttackError> {
    let feat = model.forward_to_layer(g, x, &hook.layer)?;
    let truncated = g.svd_truncate(
        feat,
        hook.k,
        T::of(hook.gap_eps),
        matches!(hook.grad_mode, GradMode::Detached),
    )?;
    let raw_logits = model.forward_from_layer(g, feat, &hook.layer)?;
    let trunc_logits = model.forward_from_layer(g, truncated, &hook.layer)?;
    Ok(g.mix(raw_logits, trunc_logits, T::of(hook.beta))?)
}

/// Mean cross-entropy of the (fused or plain) logits against the labels;
/// the quantity the attack ascends.
pub fn attack_loss<T: Element>(
    model: &LayerGraph<T>,
    g: &mut Graph<T>,
    x: NodeId,
    labels: &[usize],
    hook: Option<&SvdHook>,
) -> Result<NodeId, AttackError> {
    let logits = match hook {
        Some(h) => fused_logits(model, g, x, h)?,
        None => model.forward(g, x)?,
    };
    Ok(g.cross_entropy(logits, labels)?)
}

/// Momentum accumulation: `mu * g_prev + g / ||g||_1`, L1-normalized per
/// image of `per_image` elements. A zero-gradient image skips the
/// division and adds `g` unchanged.
pub fn step_momentum<T: Element>(g_prev: &[T], g: &[T], mu: T, per_image: usize) -> Vec<T> {
    debug_assert_eq!(g_prev.len(), g.len());
    let mut out = g_prev.to_vec();
    for (acc, gi) in out.chunks_mut(per_image).zip(g.chunks(per_image)) {
        momentum_update(acc, gi, mu);
    }
    out
}

fn momentum_update<T: Element>(acc: &mut [T], g: &[T], mu: T) {
    let l1: T = g.iter().fold(T::zero(), |s, &v| s + v.abs());
    if l1 > T::zero() {
        for (a, &gv) in acc.iter_mut().zip(g) {
            *a = mu * *a + gv / l1;
        }
    } else {
        for (a, &gv) in acc.iter_mut().zip(g) {
            *a = mu * *a + gv;
        }
    }
}

/// Per-image random resize-and-place on the graph: with probability `p`
/// an image is shrunk to a random side in [0.9 H, H] and pasted at a
/// random offset of a zero canvas; otherwise it passes through.
pub fn transform_di<T: Element>(
    g: &mut Graph<T>,
    x: NodeId,
    p: f64,
    rngs: &mut [impl Rng],
) -> Result<NodeId, AttackError> {
    let shape = g.value(x).shape();
    let (h, w) = (shape[2], shape[3]);
    let placements: Vec<Option<DiPlacement>> =
        rngs.iter_mut().map(|rng| draw_placement(rng, p, h, w)).collect();
    Ok(g.diversity(x, placements)?)
}

fn draw_placement(rng: &mut impl Rng, p: f64, h: usize, w: usize) -> Option<DiPlacement> {
    let coin: f64 = rng.random_range(0.0..1.0);
    if coin >= p {
        return None;
    }
    let min_side = (h.min(w) * 9).div_ceil(10);
    let side = rng.random_range(min_side..=h.min(w));
    let top = rng.random_range(0..=h - side);
    let left = rng.random_range(0..=w - side);
    Some(DiPlacement { side, top, left })
}

/// Gaussian smoothing of a gradient tensor; depthwise, zero padded so the
/// shape is preserved. The kernel length must be odd.
pub fn transform_ti<T: Element>(grad: &Tensor<T>, kernel: usize) -> Result<Tensor<T>, AttackError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(AttackError::Invalid {
            field: "ti kernel",
            reason: format!("{kernel} is not odd"),
        });
    }
    let mut out = grad.clone();
    let shape = out.shape().to_vec();
    ti_smooth(out.data_mut(), &shape, kernel);
    Ok(out)
}

/// Dyadic scale copies x, x/2, ..., x/2^(copies-1) as graph nodes.
pub fn transform_si<T: Element>(g: &mut Graph<T>, x: NodeId, copies: usize) -> Vec<NodeId> {
    si_factors(copies)
        .into_iter()
        .map(|f| {
            if (f - 1.0).abs() < f64::EPSILON {
                x
            } else {
                g.scale(x, T::of(f))
            }
        })
        .collect()
}

fn si_factors(copies: usize) -> Vec<f64> {
    (0..copies).map(|i| 1.0 / (1u64 << i) as f64).collect()
}

/// Variance correction: the mean gradient over `samples` uniform draws
/// from a box of half-width `half_width` around `x`, minus the gradient
/// at `x` itself. The attack adds this to its main gradient before the
/// momentum update. Gradients here are plain (hooked but untransformed).
pub fn variance_tuning<T: Element>(
    model: &LayerGraph<T>,
    x: &Tensor<T>,
    labels: &[usize],
    hook: Option<&SvdHook>,
    half_width: f64,
    samples: usize,
    rngs: &mut [impl Rng],
) -> Result<Tensor<T>, AttackError> {
    if samples == 0 {
        return Err(AttackError::Invalid {
            field: "vt samples",
            reason: "zero samples".to_string(),
        });
    }
    let per: usize = x.shape()[1..].iter().product();
    let half = T::of(half_width);
    let base = plain_gradient(model, x, labels, hook)?;
    let mut acc = vec![T::zero(); x.numel()];
    for _ in 0..samples {
        let mut neighbor = x.clone();
        let nd = neighbor.data_mut();
        for (i, rng) in rngs.iter_mut().enumerate() {
            for v in nd[i * per..(i + 1) * per].iter_mut() {
                let u: f64 = rng.random_range(-1.0..1.0);
                *v = *v + half * T::of(u);
            }
        }
        let sample = plain_gradient(model, &neighbor, labels, hook)?;
        for (a, s) in acc.iter_mut().zip(sample.data()) {
            *a = *a + *s;
        }
    }
    let inv = T::of(1.0 / samples as f64);
    for (a, b) in acc.iter_mut().zip(base.data()) {
        *a = *a * inv - *b;
    }
    Ok(Tensor::new(x.shape().to_vec(), acc)?)
}

fn plain_gradient<T: Element>(
    model: &LayerGraph<T>,
    x: &Tensor<T>,
    labels: &[usize],
    hook: Option<&SvdHook>,
) -> Result<Tensor<T>, AttackError> {
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone().requiring_grad());
    let loss = attack_loss(model, &mut g, leaf, labels, hook)?;
    g.backward(loss)?;
    Ok(Tensor::new(x.shape().to_vec(), g.grad(leaf).expect("input gradient").to_vec())?)
}

// ── Attack loop ─────────────────────────────────────────────────────────

/// Runs the configured attack over the batch in fixed-size chunks.
pub fn run_attack<T: Element>(
    model: &LayerGraph<T>,
    images: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>, AttackError> {
    run_attack_chunked(model, images, labels, cfg, CHUNK)
}

/// Like [`run_attack`] but also returns the full iterate after every step.
/// The whole batch is processed as one chunk, so keep it small.
pub fn run_attack_traced<T: Element>(
    model: &LayerGraph<T>,
    images: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<(AdversarialBatch<T>, Vec<Tensor<T>>), AttackError> {
    cfg.validate()?;
    check_labels(images, labels)?;
    let mut trace = Some(Vec::with_capacity(cfg.steps));
    let batch = attack_chunk(model, images, labels, cfg, 0, &mut trace)?;
    Ok((batch, trace.unwrap()))
}

pub(crate) fn run_attack_chunked<T: Element>(
    model: &LayerGraph<T>,
    images: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    chunk: usize,
) -> Result<AdversarialBatch<T>, AttackError> {
    cfg.validate()?;
    check_labels(images, labels)?;
    let n = images.shape()[0];
    let mut adv_data = Vec::with_capacity(images.numel());
    let mut linf = Vec::with_capacity(n);
    let mut failed = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let part = slice_batch(images, start, end);
        let out = attack_chunk(model, &part, &labels[start..end], cfg, start, &mut None)?;
        adv_data.extend_from_slice(out.adv.data());
        linf.extend_from_slice(&out.linf);
        failed.extend(out.failed.iter().map(|i| i + start));
    }
    Ok(AdversarialBatch {
        clean: images.clone(),
        adv: Tensor::new(images.shape().to_vec(), adv_data)?,
        labels: labels.to_vec(),
        linf,
        failed,
        source_model: model.arch.as_str().to_string(),
    })
}

fn check_labels<T: Element>(images: &Tensor<T>, labels: &[usize]) -> Result<(), AttackError> {
    if images.shape().len() != 4 {
        return Err(AttackError::Tensor(TensorError::RankMismatch {
            op: "attack input",
            want: 4,
            got: images.shape().to_vec(),
        }));
    }
    if images.shape()[0] != labels.len() {
        return Err(AttackError::Tensor(TensorError::LabelCountMismatch {
            rows: images.shape()[0],
            labels: labels.len(),
        }));
    }
    Ok(())
}

/// Full step loop for one chunk. `index_base` is the global index of the
/// chunk's first image, which keys the per-image RNG streams.
fn attack_chunk<T: Element>(
    model: &LayerGraph<T>,
    clean: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    index_base: usize,
    trace: &mut Option<Vec<Tensor<T>>>,
) -> Result<AdversarialBatch<T>, AttackError> {
    let n = clean.shape()[0];
    let per: usize = clean.shape()[1..].iter().product();
    let alpha = T::of(cfg.alpha_value());
    let eps = T::of(cfg.epsilon);
    let mu = T::of(cfg.momentum);

    let mut rngs: Vec<_> = (0..n)
        .map(|i| stream(cfg.seed, purpose::ATTACK, (index_base + i) as u64))
        .collect();

    let mut adv = clean.clone();
    let mut velocity = vec![T::zero(); n * per];
    let mut frozen = vec![false; n];
    let mut failed = Vec::new();

    for _step in 0..cfg.steps {
        // Nesterov lookahead evaluates the gradient ahead of the iterate.
        let eval = if matches!(cfg.method, Method::NiFgsm) {
            let mut e = adv.clone();
            let ed = e.data_mut();
            for i in 0..ed.len() {
                ed[i] = ed[i] + alpha * mu * velocity[i];
            }
            e
        } else {
            adv.clone()
        };

        let mut grad = shaped_gradient(model, cfg, &eval, labels, &mut rngs)?;
        if let Some(kernel) = cfg.ti() {
            let shape = grad.shape().to_vec();
            ti_smooth(grad.data_mut(), &shape, kernel);
        }
        if let Some((spread, samples)) = cfg.vt() {
            let v = variance_tuning(
                model,
                &eval,
                labels,
                cfg.svd.as_ref(),
                spread * cfg.epsilon,
                samples,
                &mut rngs,
            )?;
            let gd = grad.data_mut();
            for (gv, vv) in gd.iter_mut().zip(v.data()) {
                *gv = *gv + *vv;
            }
        }

        let ad = adv.data_mut();
        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let g = &grad.data()[i * per..(i + 1) * per];
            if g.iter().any(|v| !v.is_finite()) {
                frozen[i] = true;
                failed.push(i);
                continue;
            }
            let dir = &mut velocity[i * per..(i + 1) * per];
            if cfg.method.uses_momentum() {
                momentum_update(dir, g, mu);
            } else {
                dir.copy_from_slice(g);
            }
            for j in 0..per {
                let idx = i * per + j;
                let stepped = ad[idx] + alpha * sign(dir[j]);
                ad[idx] =
                    project_clip(stepped, clean.data()[idx], eps, T::zero(), T::of(255.0));
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(adv.clone());
        }
    }

    let mut linf = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = T::zero();
        for j in 0..per {
            let d = (adv.data()[i * per + j] - clean.data()[i * per + j]).abs();
            m = m.max(d);
        }
        linf.push(m);
    }
    Ok(AdversarialBatch {
        clean: clean.clone(),
        adv,
        labels: labels.to_vec(),
        linf,
        failed,
        source_model: model.arch.as_str().to_string(),
    })
}

/// Gradient of the mean loss at `x` with scale copies, per-image random
/// diversity, and the optional fusion hook composed into one graph.
fn shaped_gradient<T: Element>(
    model: &LayerGraph<T>,
    cfg: &AttackConfig,
    x: &Tensor<T>,
    labels: &[usize],
    rngs: &mut [impl Rng],
) -> Result<Tensor<T>, AttackError> {
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone().requiring_grad());
    let copies = transform_si(&mut g, leaf, cfg.si());
    let n_copies = copies.len();
    let mut total: Option<NodeId> = None;
    for node in copies {
        let staged = match cfg.di() {
            Some(p) => transform_di(&mut g, node, p, rngs)?,
            None => node,
        };
        let loss = attack_loss(model, &mut g, staged, labels, cfg.svd.as_ref())?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let mut loss = total.expect("at least one scale copy");
    if n_copies > 1 {
        loss = g.scale(loss, T::of(1.0 / n_copies as f64));
    }
    g.backward(loss)?;
    let grad = g.grad(leaf).expect("input gradient").to_vec();
    Ok(Tensor::new(x.shape().to_vec(), grad)?)
}

/// Separable Gaussian blur of every gradient plane, zero padded.
fn ti_smooth<T: Element>(data: &mut [T], shape: &[usize], kernel: usize) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let k = ti_kernel::<T>(kernel);
    let half = kernel / 2;
    let mut tmp = vec![T::zero(); h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..h {
            for col in 0..w {
                let mut acc = T::zero();
                for (ki, &kv) in k.iter().enumerate() {
                    let src = col as isize + ki as isize - half as isize;
                    if src >= 0 && (src as usize) < w {
                        acc = acc + kv * data[base + r * w + src as usize];
                    }
                }
                tmp[r * w + col] = acc;
            }
        }
        for r in 0..h {
            for col in 0..w {
                let mut acc = T::zero();
                for (ki, &kv) in k.iter().enumerate() {
                    let src = r as isize + ki as isize - half as isize;
                    if src >= 0 && (src as usize) < h {
                        acc = acc + kv * tmp[src as usize * w + col];
                    }
                }
                data[base + r * w + col] = acc;
            }
        }
    }
}

/// Normalized 1-D Gaussian taps with sigma tied to the kernel length.
fn ti_kernel<T: Element>(len: usize) -> Vec<T> {
    let sigma = len as f64 / 3.0;
    let half = (len / 2) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps.into_iter().map(T::of).collect()
}

// ── Tests ───────────────────────────────────────────────────────────────
