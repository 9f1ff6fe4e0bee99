//! Small convolutional classifiers with named, hookable layers.
//!
//! A model is a flat list of layers; the name of each ReLU that closes a
//! conv block ("block1" .. "block4") is the hook point where features can
//! be taken out of or fed back into the network. [`LayerGraph::forward_to_layer`]
//! and [`LayerGraph::forward_from_layer`] split the forward pass at such a
//! layer so an attack can run the tail twice: once on the raw feature and
//! once on its rank-k truncation.
//!
//! Three architectures are provided so transfer between genuinely
//! different networks can be measured. All take 3x32x32 input; "block3"
//! always produces an 8x8 feature map.
//!
//! | layer        | convnet_a        | convnet_b        | convnet_c        |
//! |--------------|------------------|------------------|------------------|
//! | scale        | x/255            | x/255            | x/255            |
//! | block1_conv  | 3>16 k3 p1       | 3>12 k5 p2       | 3>20 k3 p1       |
//! | block1       | relu 16x32x32    | relu 12x32x32    | relu 20x32x32    |
//! | block1_pool  | max2             | max2             | avg2             |
//! | block2_conv  | 16>32 k3 p1      | 12>24 k3 p1      | 20>28 k3 s2 p1   |
//! | block2       | relu 32x16x16    | relu 24x16x16    | relu 28x8x8      |
//! | block2_pool  | max2             | max2             | (none)           |
//! | block3_conv  | 32>48 k3 p1      | 24>40 k3 p1      | 28>40 k3 p1      |
//! | block3       | relu 48x8x8      | relu 40x8x8      | relu 40x8x8      |
//! | block4_conv  | 48>64 k3 p1      | 40>56 k3 p1      | 40>52 k3 p1      |
//! | block4       | relu 64x8x8      | relu 56x8x8      | relu 52x8x8      |
//! | pool         | global avg       | global avg       | global avg       |
//! | flatten      | 64               | 56               | 52               |
//! | fc           | dense 64>10      | dense 56>10      | dense 52>10      |

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use crate::container::{self, Container, ContainerError, Entry};
use crate::rng::{purpose, stream};
use crate::tensor::{Element, Graph, NodeId, PoolKind, Tensor, TensorError};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum ModelError {
    UnknownLayer { name: String, available: Vec<String> },
    UnknownArch { name: String },
    BadInput { expected: Vec<usize>, got: Vec<usize> },
    BadFeature { layer: String, expected: Vec<usize>, got: Vec<usize> },
    LayerCountMismatch { expected: usize, got: usize },
    WeightShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
    MissingMeta { key: String },
    NotACheckpoint { kind: String },
    Tensor(TensorError),
    Container(ContainerError),
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::UnknownLayer { name, available } => {
                write!(f, "unknown layer '{name}'; available: {}", available.join(", "))
            }
            ModelError::UnknownArch { name } => {
                write!(f, "unknown architecture '{name}'; expected convnet_a, convnet_b, or convnet_c")
            }
            ModelError::BadInput { expected, got } => {
                write!(f, "model expects input shape [N, {expected:?}], got {got:?}")
            }
            ModelError::BadFeature { layer, expected, got } => {
                write!(f, "feature for layer '{layer}' should be [N, {expected:?}], got {got:?}")
            }
            ModelError::LayerCountMismatch { expected, got } => {
                write!(f, "checkpoint holds {got} parameter tensors, model wants {expected}")
            }
            ModelError::WeightShapeMismatch { name, expected, got } => {
                write!(f, "checkpoint entry '{name}' has shape {got:?}, expected {expected:?}")
            }
            ModelError::MissingMeta { key } => write!(f, "checkpoint metadata lacks '{key}'"),
            ModelError::NotACheckpoint { kind } => {
                write!(f, "container is of kind '{kind}', not a checkpoint")
            }
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Container(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<ContainerError> for ModelError {
    fn from(e: ContainerError) -> Self {
        ModelError::Container(e)
    }
}

// ── Architectures ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchId {
    ConvnetA,
    ConvnetB,
    ConvnetC,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::ConvnetA, ArchId::ConvnetB, ArchId::ConvnetC];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::ConvnetA => "convnet_a",
            ArchId::ConvnetB => "convnet_b",
            ArchId::ConvnetC => "convnet_c",
        }
    }
}

impl std::str::FromStr for ArchId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "convnet_a" => Ok(ArchId::ConvnetA),
            "convnet_b" => Ok(ArchId::ConvnetB),
            "convnet_c" => Ok(ArchId::ConvnetC),
            other => Err(ModelError::UnknownArch { name: other.to_string() }),
        }
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── Layers ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum LayerKind<T> {
    Scale { factor: T },
    Conv { weight: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize },
    Relu,
    Pool { kind: PoolKind, window: usize, stride: usize },
    Flatten,
    Dense { weight: Tensor<T>, bias: Tensor<T> },
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
}

/// Node ids of one layer's parameters inside a training graph.
struct ParamNodes {
    layer: usize,
    weight: NodeId,
    bias: NodeId,
}

#[derive(Debug, Clone)]
pub struct LayerGraph<T> {
    pub arch: ArchId,
    pub num_classes: usize,
    /// Input dims without batch: [C, H, W].
    pub input_dims: Vec<usize>,
    layers: Vec<Layer<T>>,
    /// Output shape (without batch) of each layer.
    shapes: Vec<Vec<usize>>,
}

/// Declarative layer spec used by the builders.
enum Spec {
    Scale,
    Conv { name: &'static str, out: usize, k: usize, stride: usize, pad: usize },
    Relu { name: &'static str },
    Pool { name: &'static str, kind: PoolKind, window: usize, stride: usize },
    GlobalAvg,
    Flatten,
    Dense,
}

fn arch_spec(arch: ArchId) -> Vec<Spec> {
    use PoolKind::*;
    use Spec::*;
    match arch {
        ArchId::ConvnetA => vec![
            Scale,
            Conv { name: "block1_conv", out: 24, k: 3, stride: 1, pad: 1 },
            Relu { name: "block1" },
            Pool { name: "block1_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block2_conv", out: 32, k: 3, stride: 1, pad: 1 },
            Relu { name: "block2" },
            Pool { name: "block2_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block3_conv", out: 48, k: 3, stride: 1, pad: 1 },
            Relu { name: "block3" },
            Conv { name: "block4_conv", out: 64, k: 3, stride: 1, pad: 1 },
            Relu { name: "block4" },
            GlobalAvg,
            Flatten,
            Dense,
        ],
        ArchId::ConvnetB => vec![
            Scale,
            Conv { name: "block1_conv", out: 12, k: 5, stride: 1, pad: 2 },
            Relu { name: "block1" },
            Pool { name: "block1_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block2_conv", out: 24, k: 3, stride: 1, pad: 1 },
            Relu { name: "block2" },
            Pool { name: "block2_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block3_conv", out: 40, k: 3, stride: 1, pad: 1 },
            Relu { name: "block3" },
            Conv { name: "block4_conv", out: 56, k: 3, stride: 1, pad: 1 },
            Relu { name: "block4" },
            GlobalAvg,
            Flatten,
            Dense,
        ],
        ArchId::ConvnetC => vec![
            Scale,
            Conv { name: "block1_conv", out: 20, k: 3, stride: 1, pad: 1 },
            Relu { name: "block1" },
            Pool { name: "block1_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block2_conv", out: 28, k: 3, stride: 1, pad: 1 },
            Relu { name: "block2" },
            Conv { name: "block3_conv", out: 40, k: 3, stride: 1, pad: 1 },
            Relu { name: "block3" },
            Pool { name: "block3_pool", kind: Max, window: 2, stride: 2 },
            Conv { name: "block4_conv", out: 52, k: 3, stride: 1, pad: 1 },
            Relu { name: "block4" },
            GlobalAvg,
            Flatten,
            Dense,
        ],
    }
}

impl<T: Element> LayerGraph<T> {
    /// Builds a model with He-initialized weights drawn from per-layer
    /// deterministic streams of `seed`. Input is 3x32x32.
    pub fn build(arch: ArchId, num_classes: usize, seed: u64) -> Self {
        let input_dims = vec![3usize, 32, 32];
        let mut layers = Vec::new();
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        let mut cur = input_dims.clone();
        for (li, spec) in arch_spec(arch).into_iter().enumerate() {
            let mut rng = stream(seed, purpose::WEIGHT_INIT, li as u64);
            let (name, kind) = match spec {
                Spec::Scale => (
                    "scale".to_string(),
                    LayerKind::Scale { factor: T::of(1.0 / 255.0) },
                ),
                Spec::Conv { name, out, k, stride, pad } => {
                    let cin = cur[0];
                    let weight = he_normal(&mut rng, &[out, cin, k, k], cin * k * k);
                    let bias = Tensor::zeros(vec![out]);
                    let h = (cur[1] + 2 * pad - k) / stride + 1;
                    let w = (cur[2] + 2 * pad - k) / stride + 1;
                    cur = vec![out, h, w];
                    (name.to_string(), LayerKind::Conv { weight, bias, stride, pad })
                }
                Spec::Relu { name } => (name.to_string(), LayerKind::Relu),
                Spec::Pool { name, kind, window, stride } => {
                    cur = vec![
                        cur[0],
                        (cur[1] - window) / stride + 1,
                        (cur[2] - window) / stride + 1,
                    ];
                    (name.to_string(), LayerKind::Pool { kind, window, stride })
                }
                Spec::GlobalAvg => {
                    let window = cur[1];
                    assert_eq!(cur[1], cur[2], "global pool expects square feature");
                    cur = vec![cur[0], 1, 1];
                    (
                        "pool".to_string(),
                        LayerKind::Pool { kind: PoolKind::Avg, window, stride: window },
                    )
                }
                Spec::Flatten => {
                    cur = vec![cur.iter().product()];
                    ("flatten".to_string(), LayerKind::Flatten)
                }
                Spec::Dense => {
                    let d = cur[0];
                    let weight = he_normal(&mut rng, &[d, num_classes], d);
                    let bias = Tensor::zeros(vec![num_classes]);
                    cur = vec![num_classes];
                    ("fc".to_string(), LayerKind::Dense { weight, bias })
                }
            };
            layers.push(Layer { name, kind });
            shapes.push(cur.clone());
        }
        LayerGraph { arch, num_classes, input_dims, layers, shapes }
    }

    /// Assembles a model from explicit layers, inferring per-layer shapes.
    /// Used by tests that need hand-crafted networks with known gradients.
    #[cfg(test)]
    pub(crate) fn from_layers_for_tests(
        layers: Vec<Layer<T>>,
        input_dims: Vec<usize>,
        num_classes: usize,
    ) -> Self {
        let mut shapes = Vec::new();
        let mut cur = input_dims.clone();
        for layer in &layers {
            cur = match &layer.kind {
                LayerKind::Scale { .. } | LayerKind::Relu => cur,
                LayerKind::Conv { weight, stride, pad, .. } => {
                    let (o, k) = (weight.shape()[0], weight.shape()[2]);
                    vec![
                        o,
                        (cur[1] + 2 * pad - k) / stride + 1,
                        (cur[2] + 2 * pad - k) / stride + 1,
                    ]
                }
                LayerKind::Pool { window, stride, .. } => vec![
                    cur[0],
                    (cur[1] - window) / stride + 1,
                    (cur[2] - window) / stride + 1,
                ],
                LayerKind::Flatten => vec![cur.iter().product()],
                LayerKind::Dense { weight, .. } => vec![weight.shape()[1]],
            };
            shapes.push(cur.clone());
        }
        LayerGraph { arch: ArchId::ConvnetA, num_classes, input_dims, layers, shapes }
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize, ModelError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownLayer {
                name: name.to_string(),
                available: self.layer_names(),
            })
    }

    /// Output shape (without batch) of the named layer.
    pub fn layer_shape(&self, name: &str) -> Result<&[usize], ModelError> {
        Ok(&self.shapes[self.layer_index(name)?])
    }

    /// Names of layers that make sense as feature hooks or similarity
    /// probes: the post-ReLU block outputs plus pool and fc.
    pub fn hook_layers(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| {
                matches!(l.kind, LayerKind::Relu) || l.name == "pool" || l.name == "fc"
            })
            .map(|l| l.name.clone())
            .collect()
    }

    /// Number of parameter tensors (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Dense { .. }))
            .count()
            * 2
    }

    pub fn total_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias } => {
                    weight.numel() + bias.numel()
                }
                _ => 0,
            })
            .sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        if shape.len() != 4 || shape[1..] != self.input_dims[..] {
            return Err(ModelError::BadInput {
                expected: self.input_dims.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Applies `layers[range]` on the graph. When `trainable`, parameter
    /// leaves are inserted with gradients enabled and reported back.
    fn apply_layers(
        &self,
        g: &mut Graph<T>,
        mut x: NodeId,
        range: std::ops::Range<usize>,
        trainable: bool,
    ) -> Result<(NodeId, Vec<ParamNodes>), ModelError> {
        let mut params = Vec::new();
        for li in range {
            let layer = &self.layers[li];
            x = match &layer.kind {
                LayerKind::Scale { factor } => g.scale(x, *factor),
                LayerKind::Conv { weight, bias, stride, pad } => {
                    let mut wt = weight.clone();
                    let mut bt = bias.clone();
                    wt.set_requires_grad(trainable);
                    bt.set_requires_grad(trainable);
                    let w = g.leaf(wt);
                    let b = g.leaf(bt);
                    if trainable {
                        params.push(ParamNodes { layer: li, weight: w, bias: b });
                    }
                    g.conv2d(x, w, b, *stride, *pad)?
                }
                LayerKind::Relu => g.relu(x),
                LayerKind::Pool { kind, window, stride } => g.pool(x, *kind, *window, *stride)?,
                LayerKind::Flatten => g.flatten(x)?,
                LayerKind::Dense { weight, bias } => {
                    let mut wt = weight.clone();
                    let mut bt = bias.clone();
                    wt.set_requires_grad(trainable);
                    bt.set_requires_grad(trainable);
                    let w = g.leaf(wt);
                    let b = g.leaf(bt);
                    if trainable {
                        params.push(ParamNodes { layer: li, weight: w, bias: b });
                    }
                    g.dense(x, w, b)?
                }
            };
        }
        Ok((x, params))
    }

    /// Full forward pass with frozen weights; `x` must be an NCHW batch
    /// node matching the model input.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, ModelError> {
        self.check_input(g.value(x).shape())?;
        let (out, _) = self.apply_layers(g, x, 0..self.layers.len(), false)?;
        Ok(out)
    }

    /// Runs layers up to and including `layer`, returning its output node.
    pub fn forward_to_layer(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        layer: &str,
    ) -> Result<NodeId, ModelError> {
        self.check_input(g.value(x).shape())?;
        let idx = self.layer_index(layer)?;
        let (out, _) = self.apply_layers(g, x, 0..idx + 1, false)?;
        Ok(out)
    }

    /// Resumes the forward pass after `layer`, from a feature node shaped
    /// like that layer's output.
    pub fn forward_from_layer(
        &self,
        g: &mut Graph<T>,
        feature: NodeId,
        layer: &str,
    ) -> Result<NodeId, ModelError> {
        let idx = self.layer_index(layer)?;
        let want = &self.shapes[idx];
        let got = g.value(feature).shape();
        if got.len() != want.len() + 1 || got[1..] != want[..] {
            return Err(ModelError::BadFeature {
                layer: layer.to_string(),
                expected: want.clone(),
                got: got.to_vec(),
            });
        }
        let (out, _) = self.apply_layers(g, feature, idx + 1..self.layers.len(), false)?;
        Ok(out)
    }

    /// Logits for a batch, on a throwaway graph.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Output of the named layer for a batch, on a throwaway graph.
    pub fn activation(&self, batch: &Tensor<T>, layer: &str) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let out = self.forward_to_layer(&mut g, x, layer)?;
        Ok(g.value(out).clone())
    }

    /// Argmax class per image, evaluated in bounded-memory chunks.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>, ModelError> {
        let n = batch.shape()[0];
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(n);
            let part = slice_batch(batch, start, end);
            let logits = self.logits(&part)?;
            out.extend(argmax_rows(&logits));
        }
        Ok(out)
    }

    pub fn accuracy(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<f64, ModelError> {
        let pred = self.predict(batch)?;
        let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }

    /// Casts all weights to another element type (exact for f32 -> f64).
    pub fn cast<U: Element>(&self) -> LayerGraph<U> {
        LayerGraph {
            arch: self.arch,
            num_classes: self.num_classes,
            input_dims: self.input_dims.clone(),
            shapes: self.shapes.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: match &l.kind {
                        LayerKind::Scale { factor } => {
                            LayerKind::Scale { factor: U::of(factor.to_f()) }
                        }
                        LayerKind::Conv { weight, bias, stride, pad } => LayerKind::Conv {
                            weight: weight.cast(),
                            bias: bias.cast(),
                            stride: *stride,
                            pad: *pad,
                        },
                        LayerKind::Relu => LayerKind::Relu,
                        LayerKind::Pool { kind, window, stride } => LayerKind::Pool {
                            kind: *kind,
                            window: *window,
                            stride: *stride,
                        },
                        LayerKind::Flatten => LayerKind::Flatten,
                        LayerKind::Dense { weight, bias } => LayerKind::Dense {
                            weight: weight.cast(),
                            bias: bias.cast(),
                        },
                    },
                })
                .collect(),
        }
    }
}

const PREDICT_CHUNK: usize = 128;

fn he_normal<T: Element>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Copies rows `[start, end)` of an NCHW batch into a new tensor.
pub fn slice_batch<T: Element>(batch: &Tensor<T>, start: usize, end: usize) -> Tensor<T> {
    let shape = batch.shape();
    let per: usize = shape[1..].iter().product();
    let mut s = shape.to_vec();
    s[0] = end - start;
    Tensor::new(s, batch.data()[start * per..end * per].to_vec()).expect("slice shape")
}

/// Gathers selected rows of an NCHW batch into a new tensor.
pub fn gather_batch<T: Element>(batch: &Tensor<T>, idxs: &[usize]) -> Tensor<T> {
    let shape = batch.shape();
    let per: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(idxs.len() * per);
    for &i in idxs {
        data.extend_from_slice(&batch.data()[i * per..(i + 1) * per]);
    }
    let mut s = shape.to_vec();
    s[0] = idxs.len();
    Tensor::new(s, data).expect("gather shape")
}

pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut best = 0usize;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    out
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied each epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 16,
            lr: 0.02,
            lr_decay: 0.85,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainMetrics {
    /// Running accuracy of pre-update predictions, one entry per epoch.
    pub train_acc: Vec<f64>,
    /// Mean loss per epoch.
    pub train_loss: Vec<f64>,
    /// Accuracy on the held-out set after each epoch (empty if none given).
    pub test_acc: Vec<f64>,
}

impl TrainMetrics {
    pub fn final_train_acc(&self) -> f64 {
        self.train_acc.last().copied().unwrap_or(0.0)
    }
    pub fn final_test_acc(&self) -> f64 {
        self.test_acc.last().copied().unwrap_or(0.0)
    }
}

/// SGD with momentum on mean cross-entropy. Shuffling is deterministic in
/// `cfg.seed`; zero epochs leaves the model at its initialization.
pub fn train<T: Element>(
    model: &mut LayerGraph<T>,
    images: &Tensor<T>,
    labels: &[usize],
    test: Option<(&Tensor<T>, &[usize])>,
    cfg: &TrainConfig,
) -> Result<TrainMetrics, ModelError> {
    use rand::seq::SliceRandom;

    model.check_input(images.shape())?;
    let n = images.shape()[0];
    if labels.len() != n {
        return Err(ModelError::Tensor(TensorError::LabelCountMismatch {
            rows: n,
            labels: labels.len(),
        }));
    }
    let mut velocity: Vec<(Vec<T>, Vec<T>)> = model
        .layers
        .iter()
        .filter_map(|l| match &l.kind {
            LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias } => {
                Some((vec![T::zero(); weight.numel()], vec![T::zero(); bias.numel()]))
            }
            _ => None,
        })
        .collect();

    let mu = T::of(cfg.momentum);
    let mut metrics = TrainMetrics::default();

    for epoch in 0..cfg.epochs {
        let lr = T::of(cfg.lr * cfg.lr_decay.powi(epoch as i32));
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(cfg.seed, purpose::TRAIN_SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);

        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_batch(images, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let x = g.leaf(xb);
            let (logits, params) = model.apply_layers(&mut g, x, 0..model.layers.len(), true)?;
            let loss = g.cross_entropy(logits, &yb)?;
            loss_sum += g.value(loss).data()[0].to_f();
            batches += 1;
            correct += argmax_rows(g.value(logits))
                .iter()
                .zip(&yb)
                .filter(|(p, y)| p == y)
                .count();
            g.backward(loss)?;

            let mut vi = 0usize;
            for p in &params {
                let (wg, bg) = {
                    let wg = g.grad(p.weight).expect("weight gradient").to_vec();
                    let bg = g.grad(p.bias).expect("bias gradient").to_vec();
                    (wg, bg)
                };
                let (vw, vb) = &mut velocity[vi];
                vi += 1;
                let layer = &mut model.layers[p.layer];
                match &mut layer.kind {
                    LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias } => {
                        let wd = weight.data_mut();
                        for i in 0..wd.len() {
                            vw[i] = mu * vw[i] - lr * wg[i];
                            wd[i] = wd[i] + vw[i];
                        }
                        let bd = bias.data_mut();
                        for i in 0..bd.len() {
                            vb[i] = mu * vb[i] - lr * bg[i];
                            bd[i] = bd[i] + vb[i];
                        }
                    }
                    _ => unreachable!("param binding points at a parameter layer"),
                }
            }
        }
        metrics.train_acc.push(correct as f64 / n as f64);
        metrics.train_loss.push(loss_sum / batches.max(1) as f64);
        if let Some((tx, ty)) = test {
            metrics.test_acc.push(model.accuracy(tx, ty)?);
        }
    }
    Ok(metrics)
}

// ── Checkpoints ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub arch: ArchId,
    pub num_classes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Saves weights as f32 entries named `<layer>.weight` / `<layer>.bias`,
/// plus a metadata entry.
pub fn save_checkpoint<T: Element>(
    model: &LayerGraph<T>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), ModelError> {
    let mut c = Container::new();
    let pairs = vec![
        ("kind".to_string(), "checkpoint".to_string()),
        ("arch".to_string(), meta.arch.as_str().to_string()),
        ("classes".to_string(), meta.num_classes.to_string()),
        ("seed".to_string(), meta.seed.to_string()),
        ("epochs".to_string(), meta.epochs.to_string()),
        ("train_acc".to_string(), format!("{:.6}", meta.train_acc)),
        ("test_acc".to_string(), format!("{:.6}", meta.test_acc)),
    ];
    c.push(Entry::bytes("meta", container::meta_to_bytes(&pairs)));
    for layer in &model.layers {
        if let LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias } =
            &layer.kind
        {
            let wf: Vec<f32> = weight.data().iter().map(|&v| v.to_f() as f32).collect();
            let bf: Vec<f32> = bias.data().iter().map(|&v| v.to_f() as f32).collect();
            c.push(Entry::f32(&format!("{}.weight", layer.name), weight.shape(), wf));
            c.push(Entry::f32(&format!("{}.bias", layer.name), bias.shape(), bf));
        }
    }
    c.save(path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LayerGraph<f32>, CheckpointMeta), ModelError> {
    let c = Container::load(path)?;
    let meta_pairs = container::meta_from_bytes(c.require_bytes("meta")?)?;
    let get = |key: &str| -> Result<&str, ModelError> {
        container::meta_get(&meta_pairs, key)
            .ok_or_else(|| ModelError::MissingMeta { key: key.to_string() })
    };
    let kind = get("kind")?;
    if kind != "checkpoint" {
        return Err(ModelError::NotACheckpoint { kind: kind.to_string() });
    }
    let arch: ArchId = get("arch")?.parse()?;
    let classes: usize = get("classes")?.parse().map_err(|_| ModelError::MissingMeta {
        key: "classes".to_string(),
    })?;
    let meta = CheckpointMeta {
        arch,
        num_classes: classes,
        seed: get("seed")?.parse().unwrap_or(0),
        epochs: get("epochs")?.parse().unwrap_or(0),
        train_acc: get("train_acc")?.parse().unwrap_or(0.0),
        test_acc: get("test_acc")?.parse().unwrap_or(0.0),
    };

    let mut model = LayerGraph::<f32>::build(arch, classes, 0);
    let weight_entries = c.entries.iter().filter(|e| e.name != "meta").count();
    if weight_entries != model.param_count() {
        return Err(ModelError::LayerCountMismatch {
            expected: model.param_count(),
            got: weight_entries,
        });
    }
    for layer in model.layers.iter_mut() {
        if let LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias } =
            &mut layer.kind
        {
            for (tensor, suffix) in [(weight, "weight"), (bias, "bias")] {
                let name = format!("{}.{}", layer.name, suffix);
                let (dims, data) = c.require_f32(&name)?;
                let dims_usize: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
                if dims_usize != tensor.shape() {
                    return Err(ModelError::WeightShapeMismatch {
                        name,
                        expected: tensor.shape().to_vec(),
                        got: dims_usize,
                    });
                }
                tensor.data_mut().copy_from_slice(data);
            }
        }
    }
    Ok((model, meta))
}

// ── Tests ───────────────────────────────────────────────────────────────
