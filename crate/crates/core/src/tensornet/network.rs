//! Layer graph with skip connections: construction, forward pass, and
//! reverse-mode gradients.
//!
//! Nodes are stored in topological order (every edge points backward), so
//! the forward pass is a single sweep and backpropagation is the reverse
//! sweep with gradient accumulation at fan-out points.

use super::tensor::{Tensor, TensorShape};
use crate::transform::{FeatureImage, CHANNELS, IMAGE_SIDE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `KERNEL - 1`.
    Valid,
    /// Zero padding preserving the spatial size.
    Same,
}

/// Layer descriptor. Convolutions are fixed at 3x3 stride 1; pooling is
/// fixed at 3x3 stride 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Input,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        padding: Padding,
    },
    Relu,
    MaxPool,
    Add,
    GlobalAvgPool,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Trainable parameter count (weights plus biases).
    pub fn parameter_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => KERNEL * KERNEL * in_channels * out_channels + out_channels,
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub spec: LayerSpec,
    /// Predecessor node ids; always lower than this node's own id.
    pub inputs: Vec<usize>,
    pub out_shape: TensorShape,
    /// Convolution / dense weights, row-major; empty for other layers.
    pub weights: Vec<f64>,
    /// Bias vector; empty for parameterless layers.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    /// A tensor did not match the shape a layer requires. Reaching this on a
    /// loaded model indicates a corrupted weight file.
    Structural { node: usize, detail: String },
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::Structural { node, detail } => {
                write!(f, "structural error at node {node}: {detail}")
            }
        }
    }
}

impl std::error::Error for NetworkError {}

/// Per-parameter gradients, mirroring the network's node layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.nodes.iter().map(|n| vec![0.0; n.weights.len()]).collect(),
            bias: net.nodes.iter().map(|n| vec![0.0; n.bias.len()]).collect(),
        }
    }

    pub fn weights(&self, node: usize) -> &[f64] {
        &self.weights[node]
    }

    pub fn bias(&self, node: usize) -> &[f64] {
        &self.bias[node]
    }

    /// Accumulates `other` into `self` (used for mini-batch averaging).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Forward-pass result for a two-class head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probabilities: [f64; 2],
}

impl Prediction {
    /// Argmax with ties resolving to class 0.
    pub fn predicted_label(&self) -> u8 {
        u8::from(self.probabilities[1] > self.probabilities[0])
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
}

/// Incremental graph construction. Shape errors are programmer errors and
/// panic immediately with the offending node.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        NetworkBuilder { nodes: Vec::new() }
    }

    fn shape_of(&self, id: usize) -> TensorShape {
        self.nodes[id].out_shape
    }

    fn push(&mut self, spec: LayerSpec, inputs: Vec<usize>, out_shape: TensorShape) -> usize {
        let id = self.nodes.len();
        for &i in &inputs {
            assert!(i < id, "node inputs must precede the node");
        }
        self.nodes.push(Node {
            spec,
            inputs,
            out_shape,
            weights: Vec::new(),
            bias: Vec::new(),
        });
        id
    }

    pub fn input(&mut self, channels: usize, height: usize, width: usize) -> usize {
        assert!(self.nodes.is_empty(), "input must be the first node");
        self.push(
            LayerSpec::Input,
            vec![],
            TensorShape::Map {
                channels,
                height,
                width,
            },
        )
    }

    pub fn conv(&mut self, input: usize, out_channels: usize, padding: Padding) -> usize {
        let TensorShape::Map {
            channels,
            height,
            width,
        } = self.shape_of(input)
        else {
            panic!("conv input must be a feature map");
        };
        let (out_h, out_w) = match padding {
            Padding::Valid => {
                assert!(height >= KERNEL && width >= KERNEL, "map too small for valid conv");
                (height - KERNEL + 1, width - KERNEL + 1)
            }
            Padding::Same => (height, width),
        };
        self.push(
            LayerSpec::Conv2d {
                in_channels: channels,
                out_channels,
                padding,
            },
            vec![input],
            TensorShape::Map {
                channels: out_channels,
                height: out_h,
                width: out_w,
            },
        )
    }

    pub fn relu(&mut self, input: usize) -> usize {
        let shape = self.shape_of(input);
        self.push(LayerSpec::Relu, vec![input], shape)
    }

    /// 3x3 max pooling with stride 3.
    pub fn maxpool(&mut self, input: usize) -> usize {
        let TensorShape::Map {
            channels,
            height,
            width,
        } = self.shape_of(input)
        else {
            panic!("maxpool input must be a feature map");
        };
        assert!(height >= 3 && width >= 3, "map too small for 3x3 pooling");
        self.push(
            LayerSpec::MaxPool,
            vec![input],
            TensorShape::Map {
                channels,
                height: (height - 3) / 3 + 1,
                width: (width - 3) / 3 + 1,
            },
        )
    }

    pub fn add(&mut self, left: usize, right: usize) -> usize {
        let shape = self.shape_of(left);
        assert_eq!(shape, self.shape_of(right), "add operands must match in shape");
        self.push(LayerSpec::Add, vec![left, right], shape)
    }

    pub fn global_avg_pool(&mut self, input: usize) -> usize {
        let TensorShape::Map { channels, .. } = self.shape_of(input) else {
            panic!("global average pool input must be a feature map");
        };
        self.push(
            LayerSpec::GlobalAvgPool,
            vec![input],
            TensorShape::Vector { len: channels },
        )
    }

    pub fn dense(&mut self, input: usize, out_dim: usize) -> usize {
        let TensorShape::Vector { len } = self.shape_of(input) else {
            panic!("dense input must be a vector");
        };
        self.push(
            LayerSpec::Dense {
                in_dim: len,
                out_dim,
            },
            vec![input],
            TensorShape::Vector { len: out_dim },
        )
    }

    pub fn softmax(&mut self, input: usize) -> usize {
        let shape = self.shape_of(input);
        assert!(
            matches!(shape, TensorShape::Vector { .. }),
            "softmax input must be a vector"
        );
        self.push(LayerSpec::Softmax, vec![input], shape)
    }

    /// Finalizes the graph with seeded He-uniform initialization. Weights
    /// are generated at 32-bit precision so the deployment weight format
    /// round-trips a fresh network losslessly; biases start at zero.
    pub fn build(mut self, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in &mut self.nodes {
            let (count, fan_in, bias_len) = match node.spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    ..
                } => (
                    KERNEL * KERNEL * in_channels * out_channels,
                    KERNEL * KERNEL * in_channels,
                    out_channels,
                ),
                LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, in_dim, out_dim),
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            node.weights = (0..count)
                .map(|_| rng.gen_range(-limit..limit) as f32 as f64)
                .collect();
            node.bias = vec![0.0; bias_len];
        }
        Network { nodes: self.nodes }
    }
}

impl Default for NetworkBuilder {
    fn default() -> Self {
        NetworkBuilder::new()
    }
}

/// The compact residual classifier: a two-conv stem, 3x3/3 max pooling, two
/// identity-skip residual blocks, a bottleneck conv, global average pooling
/// and a two-layer dense head. Exactly 7,914 trainable parameters.
pub fn build_toy_resnet_seeded(seed: u64) -> Network {
    let mut b = NetworkBuilder::new();
    let input = b.input(CHANNELS, IMAGE_SIDE, IMAGE_SIDE);
    let c1 = b.conv(input, 8, Padding::Valid);
    let r1 = b.relu(c1);
    let c2 = b.conv(r1, 16, Padding::Valid);
    let r2 = b.relu(c2);
    let pooled = b.maxpool(r2);

    let mut block_in = pooled;
    for _ in 0..2 {
        let ca = b.conv(block_in, 8, Padding::Same);
        let ra = b.relu(ca);
        let cb = b.conv(ra, 16, Padding::Same);
        let rb = b.relu(cb);
        block_in = b.add(rb, block_in);
    }

    let c5 = b.conv(block_in, 8, Padding::Valid);
    let r5 = b.relu(c5);
    let gap = b.global_avg_pool(r5);
    let d1 = b.dense(gap, 64);
    let rd = b.relu(d1);
    let d2 = b.dense(rd, 2);
    b.softmax(d2);

    let net = b.build(seed);
    assert_eq!(net.parameter_count(), 7_914, "parameter accounting drifted");
    net
}

pub fn build_toy_resnet() -> Network {
    build_toy_resnet_seeded(0)
}

/// Same topology at a fraction of the size (3x13x13 input, narrow widths).
/// Small enough for exhaustive finite-difference verification.
pub fn build_reduced_resnet(seed: u64) -> Network {
    let mut b = NetworkBuilder::new();
    let input = b.input(3, 13, 13);
    let c1 = b.conv(input, 4, Padding::Valid);
    let r1 = b.relu(c1);
    let c2 = b.conv(r1, 6, Padding::Valid);
    let r2 = b.relu(c2);
    let pooled = b.maxpool(r2);

    let mut block_in = pooled;
    for _ in 0..2 {
        let ca = b.conv(block_in, 3, Padding::Same);
        let ra = b.relu(ca);
        let cb = b.conv(ra, 6, Padding::Same);
        let rb = b.relu(cb);
        block_in = b.add(rb, block_in);
    }

    let c5 = b.conv(block_in, 4, Padding::Valid);
    let r5 = b.relu(c5);
    let gap = b.global_avg_pool(r5);
    let d1 = b.dense(gap, 5);
    let rd = b.relu(d1);
    let d2 = b.dense(rd, 2);
    b.softmax(d2);
    b.build(seed)
}

impl Network {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn weights_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.nodes[id].weights
    }

    pub fn bias_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.nodes[id].bias
    }

    pub fn input_shape(&self) -> TensorShape {
        self.nodes[0].out_shape
    }

    pub fn output_shape(&self) -> TensorShape {
        self.nodes.last().expect("non-empty network").out_shape
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.nodes.iter().map(|n| n.weights.len() + n.bias.len()).sum()
    }

    /// Parameter counts of the parameterized layers, in graph order.
    pub fn parameter_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| n.weights.len() + n.bias.len())
            .filter(|&c| c > 0)
            .collect()
    }

    fn check_shape(&self, id: usize, got: TensorShape, want: TensorShape) -> Result<(), NetworkError> {
        if got == want {
            Ok(())
        } else {
            Err(NetworkError::Structural {
                node: id,
                detail: format!("expected {want}, got {got}"),
            })
        }
    }

    /// Evaluates every node on `input`, returning all intermediate outputs
    /// (the last entry is the network output).
    pub fn forward_tensor(&self, input: &Tensor) -> Result<Vec<Tensor>, NetworkError> {
        self.check_shape(0, input.shape(), self.nodes[0].out_shape)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let out = match node.spec {
                LayerSpec::Input => input.clone(),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    padding,
                } => {
                    let src = &outputs[node.inputs[0]];
                    let TensorShape::Map {
                        channels, height, width,
                    } = src.shape()
                    else {
                        return Err(NetworkError::Structural {
                            node: id,
                            detail: "conv input is not a feature map".into(),
                        });
                    };
                    if channels != in_channels
                        || node.weights.len() != KERNEL * KERNEL * in_channels * out_channels
                        || node.bias.len() != out_channels
                    {
                        return Err(NetworkError::Structural {
                            node: id,
                            detail: "conv parameter shapes do not match the input".into(),
                        });
                    }
                    conv_forward(
                        src.values(),
                        channels,
                        height,
                        width,
                        out_channels,
                        padding,
                        &node.weights,
                        &node.bias,
                    )
                }
                LayerSpec::Relu => {
                    let src = &outputs[node.inputs[0]];
                    let values = src.values().iter().map(|&v| v.max(0.0)).collect();
                    Tensor::from_values(src.shape(), values)
                }
                LayerSpec::MaxPool => {
                    let src = &outputs[node.inputs[0]];
                    maxpool_forward(src)
                }
                LayerSpec::Add => {
                    let a = &outputs[node.inputs[0]];
                    let c = &outputs[node.inputs[1]];
                    self.check_shape(id, c.shape(), a.shape())?;
                    let values = a
                        .values()
                        .iter()
                        .zip(c.values())
                        .map(|(x, y)| x + y)
                        .collect();
                    Tensor::from_values(a.shape(), values)
                }
                LayerSpec::GlobalAvgPool => {
                    let src = &outputs[node.inputs[0]];
                    gap_forward(src)
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let src = &outputs[node.inputs[0]];
                    if src.len() != in_dim
                        || node.weights.len() != in_dim * out_dim
                        || node.bias.len() != out_dim
                    {
                        return Err(NetworkError::Structural {
                            node: id,
                            detail: format!(
                                "dense expects input {in_dim}, got {}",
                                src.len()
                            ),
                        });
                    }
                    dense_forward(src.values(), in_dim, out_dim, &node.weights, &node.bias)
                }
                LayerSpec::Softmax => {
                    let src = &outputs[node.inputs[0]];
                    softmax_forward(src)
                }
            };
            self.check_shape(id, out.shape(), node.out_shape)?;
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Classifies a feature image. Deterministic and side-effect free.
    pub fn forward(&self, image: &FeatureImage) -> Result<Prediction, NetworkError> {
        let input = image_to_tensor(image);
        let outputs = self.forward_tensor(&input)?;
        let n = outputs.len();
        let logits = &outputs[n - 2];
        let probs = &outputs[n - 1];
        if logits.len() != 2 || probs.len() != 2 {
            return Err(NetworkError::Structural {
                node: n - 1,
                detail: "classifier head must output two classes".into(),
            });
        }
        Ok(Prediction {
            logits: [logits.values()[0], logits.values()[1]],
            probabilities: [probs.values()[0], probs.values()[1]],
        })
    }

    /// Cross-entropy loss and parameter gradients for one labeled image.
    pub fn backward(
        &self,
        image: &FeatureImage,
        label: u8,
    ) -> Result<(f64, Gradients), NetworkError> {
        assert!(label <= 1, "labels are binary");
        let input = image_to_tensor(image);
        let outputs = self.forward_tensor(&input)?;
        let probs = outputs.last().expect("non-empty network");
        let raw = probs.values()[label as usize];
        // A non-finite probability means the parameters have diverged; keep
        // the loss NaN so callers can notice instead of masking it.
        let p = if raw.is_finite() { raw.max(1e-300) } else { f64::NAN };
        let loss = -p.ln();

        // dL/dp is nonzero only at the true class.
        let mut seed = Tensor::zeros(probs.shape());
        seed.values_mut()[label as usize] = -1.0 / p;

        let (grads, _) = self.backward_seeded(&outputs, &seed)?;
        Ok((loss, grads))
    }

    /// Reverse-mode sweep from an arbitrary gradient on the final node's
    /// output. Returns parameter gradients and the gradient at the input.
    pub fn backward_seeded(
        &self,
        outputs: &[Tensor],
        output_grad: &Tensor,
    ) -> Result<(Gradients, Tensor), NetworkError> {
        assert_eq!(outputs.len(), self.nodes.len(), "stale forward cache");
        let mut grads = Gradients::zeros_like(self);
        let mut node_grads: Vec<Tensor> =
            self.nodes.iter().map(|n| Tensor::zeros(n.out_shape)).collect();
        let last = self.nodes.len() - 1;
        self.check_shape(last, output_grad.shape(), self.nodes[last].out_shape)?;
        node_grads[last] = output_grad.clone();

        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            match node.spec {
                LayerSpec::Input => {}
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    padding,
                } => {
                    let src = &outputs[node.inputs[0]];
                    let TensorShape::Map { height, width, .. } = src.shape() else {
                        unreachable!("validated by forward");
                    };
                    let (gin, gw, gb) = conv_backward(
                        src.values(),
                        in_channels,
                        height,
                        width,
                        out_channels,
                        padding,
                        &node.weights,
                        node_grads[id].values(),
                    );
                    grads.weights[id] = gw;
                    grads.bias[id] = gb;
                    add_into(&mut node_grads, node.inputs[0], &gin);
                }
                LayerSpec::Relu => {
                    let src = &outputs[node.inputs[0]];
                    let gin: Vec<f64> = src
                        .values()
                        .iter()
                        .zip(node_grads[id].values())
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    add_into(&mut node_grads, node.inputs[0], &gin);
                }
                LayerSpec::MaxPool => {
                    let src = &outputs[node.inputs[0]];
                    let gin = maxpool_backward(src, &node_grads[id]);
                    add_into(&mut node_grads, node.inputs[0], gin.values());
                }
                LayerSpec::Add => {
                    let g = node_grads[id].values().to_vec();
                    add_into(&mut node_grads, node.inputs[0], &g);
                    add_into(&mut node_grads, node.inputs[1], &g);
                }
                LayerSpec::GlobalAvgPool => {
                    let src = &outputs[node.inputs[0]];
                    let gin = gap_backward(src.shape(), &node_grads[id]);
                    add_into(&mut node_grads, node.inputs[0], gin.values());
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let src = &outputs[node.inputs[0]];
                    let g = node_grads[id].values();
                    let mut gw = vec![0.0; in_dim * out_dim];
                    let mut gin = vec![0.0; in_dim];
                    for j in 0..out_dim {
                        let gj = g[j];
                        let row = &node.weights[j * in_dim..(j + 1) * in_dim];
                        let grow = &mut gw[j * in_dim..(j + 1) * in_dim];
                        for i in 0..in_dim {
                            grow[i] = gj * src.values()[i];
                            gin[i] += gj * row[i];
                        }
                    }
                    grads.weights[id] = gw;
                    grads.bias[id] = g.to_vec();
                    add_into(&mut node_grads, node.inputs[0], &gin);
                }
                LayerSpec::Softmax => {
                    let p = outputs[id].values();
                    let g = node_grads[id].values();
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    let gin: Vec<f64> = p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)).collect();
                    add_into(&mut node_grads, node.inputs[0], &gin);
                }
            }
        }
        let input_grad = node_grads.swap_remove(0);
        Ok((grads, input_grad))
    }
}

pub(crate) fn image_to_tensor(image: &FeatureImage) -> Tensor {
    Tensor::map(
        CHANNELS,
        IMAGE_SIDE,
        IMAGE_SIDE,
        image.values().iter().map(|&v| v as f64).collect(),
    )
}

fn add_into(node_grads: &mut [Tensor], id: usize, values: &[f64]) {
    for (dst, src) in node_grads[id].values_mut().iter_mut().zip(values) {
        *dst += *src;
    }
}

fn pad_of(padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => 1,
    }
}

/// Stride-1 convolution over a `kernel x kernel` window. The layer graph
/// always uses `KERNEL` = 3; other sizes exist for unit-level checks of the
/// convolution arithmetic itself. Accumulates one kernel tap at a time over
/// the whole output plane, which keeps the inner loop a contiguous slice
/// walk.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward_raw(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kernel: usize,
    pad: usize,
    weights: &[f64],
    bias: &[f64],
) -> Tensor {
    let out_h = h + 2 * pad - kernel + 1;
    let out_w = w + 2 * pad - kernel + 1;
    let mut out = vec![0.0; out_c * out_h * out_w];

    for o in 0..out_c {
        let plane = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        plane.fill(bias[o]);
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weights[((o * in_c + i) * kernel + ky) * kernel + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // Output rows whose sampled input row is in bounds.
                    for oy in 0..out_h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let in_row = &src[(iy - pad) * w..(iy - pad + 1) * w];
                        let out_row = &mut plane[oy * out_w..(oy + 1) * out_w];
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(out_w);
                        for ox in ox_lo..ox_hi {
                            out_row[ox] += wv * in_row[ox + kx - pad];
                        }
                    }
                }
            }
        }
    }
    Tensor::map(out_c, out_h, out_w, out)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    padding: Padding,
    weights: &[f64],
    bias: &[f64],
) -> Tensor {
    conv_forward_raw(input, in_c, h, w, out_c, KERNEL, pad_of(padding), weights, bias)
}

/// Gradients of [`conv_forward`]: returns (input grad, weight grad, bias grad).
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    padding: Padding,
    weights: &[f64],
    out_grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = pad_of(padding);
    let out_h = h + 2 * pad - KERNEL + 1;
    let out_w = w + 2 * pad - KERNEL + 1;
    let mut gin = vec![0.0; in_c * h * w];
    let mut gw = vec![0.0; out_c * in_c * KERNEL * KERNEL];
    let mut gb = vec![0.0; out_c];

    for o in 0..out_c {
        let gplane = &out_grad[o * out_h * out_w..(o + 1) * out_h * out_w];
        gb[o] += gplane.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            let gsrc = &mut gin[i * h * w..(i + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((o * in_c + i) * KERNEL + ky) * KERNEL + kx;
                    let wv = weights[widx];
                    let mut wacc = 0.0;
                    for oy in 0..out_h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let in_row = &src[(iy - pad) * w..(iy - pad + 1) * w];
                        let gin_row = &mut gsrc[(iy - pad) * w..(iy - pad + 1) * w];
                        let g_row = &gplane[oy * out_w..(oy + 1) * out_w];
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(out_w);
                        for ox in ox_lo..ox_hi {
                            let g = g_row[ox];
                            wacc += g * in_row[ox + kx - pad];
                            gin_row[ox + kx - pad] += g * wv;
                        }
                    }
                    gw[widx] += wacc;
                }
            }
        }
    }
    (gin, gw, gb)
}

fn maxpool_forward(src: &Tensor) -> Tensor {
    let TensorShape::Map {
        channels,
        height,
        width,
    } = src.shape()
    else {
        panic!("maxpool input must be a feature map");
    };
    let out_h = (height - 3) / 3 + 1;
    let out_w = (width - 3) / 3 + 1;
    let mut out = vec![0.0; channels * out_h * out_w];
    for c in 0..channels {
        let plane = &src.values()[c * height * width..(c + 1) * height * width];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..3 {
                    for dx in 0..3 {
                        best = best.max(plane[(oy * 3 + dy) * width + ox * 3 + dx]);
                    }
                }
                out[(c * out_h + oy) * out_w + ox] = best;
            }
        }
    }
    Tensor::map(channels, out_h, out_w, out)
}

/// Routes gradient to the first maximum in each 3x3 block (matching the
/// forward scan order, so ties are resolved deterministically).
fn maxpool_backward(src: &Tensor, out_grad: &Tensor) -> Tensor {
    let TensorShape::Map {
        channels,
        height,
        width,
    } = src.shape()
    else {
        panic!("maxpool input must be a feature map");
    };
    let out_h = (height - 3) / 3 + 1;
    let out_w = (width - 3) / 3 + 1;
    let mut gin = Tensor::zeros(src.shape());
    for c in 0..channels {
        let plane = &src.values()[c * height * width..(c + 1) * height * width];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let (mut best, mut best_at) = (f64::NEG_INFINITY, 0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let idx = (oy * 3 + dy) * width + ox * 3 + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_at = idx;
                        }
                    }
                }
                gin.values_mut()[c * height * width + best_at] +=
                    out_grad.values()[(c * out_h + oy) * out_w + ox];
            }
        }
    }
    gin
}

fn gap_forward(src: &Tensor) -> Tensor {
    let TensorShape::Map {
        channels,
        height,
        width,
    } = src.shape()
    else {
        panic!("global average pool input must be a feature map");
    };
    let area = (height * width) as f64;
    let values = (0..channels)
        .map(|c| {
            src.values()[c * height * width..(c + 1) * height * width]
                .iter()
                .sum::<f64>()
                / area
        })
        .collect();
    Tensor::vector(values)
}

fn gap_backward(in_shape: TensorShape, out_grad: &Tensor) -> Tensor {
    let TensorShape::Map {
        channels,
        height,
        width,
    } = in_shape
    else {
        panic!("global average pool input must be a feature map");
    };
    let area = (height * width) as f64;
    let mut gin = Tensor::zeros(in_shape);
    for c in 0..channels {
        let g = out_grad.values()[c] / area;
        for v in &mut gin.values_mut()[c * height * width..(c + 1) * height * width] {
            *v = g;
        }
    }
    gin
}

fn dense_forward(input: &[f64], in_dim: usize, out_dim: usize, weights: &[f64], bias: &[f64]) -> Tensor {
    let mut out = Vec::with_capacity(out_dim);
    for j in 0..out_dim {
        let row = &weights[j * in_dim..(j + 1) * in_dim];
        let acc: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
        out.push(acc + bias[j]);
    }
    Tensor::vector(out)
}

fn softmax_forward(src: &Tensor) -> Tensor {
    let max = src.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = src.values().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::vector(exps.iter().map(|&e| e / total).collect())
}
