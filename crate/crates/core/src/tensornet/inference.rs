//! Deployment-precision forward pass.
//!
//! A frozen 32-bit snapshot of a trained network, matching what a
//! microcontroller build would run. Inference is pure: one snapshot can be
//! shared across threads.

use super::network::{LayerSpec, Network, NetworkError, Padding, KERNEL};
use super::tensor::TensorShape;
use crate::transform::FeatureImage;

struct FrozenNode {
    spec: LayerSpec,
    inputs: Vec<usize>,
    out_shape: TensorShape,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

/// Read-only f32 view of a network's layers and parameters.
pub struct InferenceNet {
    nodes: Vec<FrozenNode>,
}

/// Forward-pass result at deployment precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction32 {
    pub logits: [f32; 2],
    pub probabilities: [f32; 2],
}

impl InferenceNet {
    pub fn freeze(net: &Network) -> Self {
        let nodes = net
            .nodes()
            .iter()
            .map(|n| FrozenNode {
                spec: n.spec,
                inputs: n.inputs.clone(),
                out_shape: n.out_shape,
                weights: n.weights.iter().map(|&w| w as f32).collect(),
                bias: n.bias.iter().map(|&b| b as f32).collect(),
            })
            .collect();
        InferenceNet { nodes }
    }

    pub fn forward(&self, image: &FeatureImage) -> Result<Prediction32, NetworkError> {
        let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let out = match node.spec {
                LayerSpec::Input => {
                    let TensorShape::Map {
                        channels,
                        height,
                        width,
                    } = node.out_shape
                    else {
                        return Err(structural(id, "input must be a feature map"));
                    };
                    if image.values().len() != channels * height * width {
                        return Err(structural(id, "image does not match the input shape"));
                    }
                    image.values().to_vec()
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    padding,
                } => {
                    let TensorShape::Map { height, width, .. } =
                        self.nodes[node.inputs[0]].out_shape
                    else {
                        return Err(structural(id, "conv input is not a feature map"));
                    };
                    if node.weights.len() != KERNEL * KERNEL * in_channels * out_channels
                        || node.bias.len() != out_channels
                    {
                        return Err(structural(id, "conv parameters have the wrong size"));
                    }
                    conv_forward32(
                        &outputs[node.inputs[0]],
                        in_channels,
                        height,
                        width,
                        out_channels,
                        padding,
                        &node.weights,
                        &node.bias,
                    )
                }
                LayerSpec::Relu => outputs[node.inputs[0]].iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool => {
                    let TensorShape::Map {
                        channels,
                        height,
                        width,
                    } = self.nodes[node.inputs[0]].out_shape
                    else {
                        return Err(structural(id, "maxpool input is not a feature map"));
                    };
                    maxpool_forward32(&outputs[node.inputs[0]], channels, height, width)
                }
                LayerSpec::Add => {
                    let a = &outputs[node.inputs[0]];
                    let b = &outputs[node.inputs[1]];
                    if a.len() != b.len() {
                        return Err(structural(id, "add operands differ in size"));
                    }
                    a.iter().zip(b).map(|(x, y)| x + y).collect()
                }
                LayerSpec::GlobalAvgPool => {
                    let TensorShape::Map {
                        channels,
                        height,
                        width,
                    } = self.nodes[node.inputs[0]].out_shape
                    else {
                        return Err(structural(id, "pool input is not a feature map"));
                    };
                    let area = (height * width) as f32;
                    let src = &outputs[node.inputs[0]];
                    (0..channels)
                        .map(|c| {
                            src[c * height * width..(c + 1) * height * width]
                                .iter()
                                .sum::<f32>()
                                / area
                        })
                        .collect()
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let src = &outputs[node.inputs[0]];
                    if src.len() != in_dim
                        || node.weights.len() != in_dim * out_dim
                        || node.bias.len() != out_dim
                    {
                        return Err(structural(id, "dense parameters have the wrong size"));
                    }
                    (0..out_dim)
                        .map(|j| {
                            let row = &node.weights[j * in_dim..(j + 1) * in_dim];
                            row.iter().zip(src).map(|(w, x)| w * x).sum::<f32>() + node.bias[j]
                        })
                        .collect()
                }
                LayerSpec::Softmax => {
                    let src = &outputs[node.inputs[0]];
                    let max = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let exps: Vec<f32> = src.iter().map(|&v| (v - max).exp()).collect();
                    let total: f32 = exps.iter().sum();
                    exps.iter().map(|&e| e / total).collect()
                }
            };
            if out.len() != node.out_shape.element_count() {
                return Err(structural(id, "layer produced the wrong output size"));
            }
            outputs.push(out);
        }

        let n = outputs.len();
        if outputs[n - 1].len() != 2 || outputs[n - 2].len() != 2 {
            return Err(structural(n - 1, "classifier head must output two classes"));
        }
        Ok(Prediction32 {
            logits: [outputs[n - 2][0], outputs[n - 2][1]],
            probabilities: [outputs[n - 1][0], outputs[n - 1][1]],
        })
    }
}

fn structural(node: usize, detail: &str) -> NetworkError {
    NetworkError::Structural {
        node,
        detail: detail.to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward32(
    input: &[f32],
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    padding: Padding,
    weights: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let pad = match padding {
        Padding::Valid => 0,
        Padding::Same => 1,
    };
    let out_h = h + 2 * pad - KERNEL + 1;
    let out_w = w + 2 * pad - KERNEL + 1;
    let mut out = vec![0.0f32; out_c * out_h * out_w];
    for o in 0..out_c {
        let plane = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        plane.fill(bias[o]);
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = weights[((o * in_c + i) * KERNEL + ky) * KERNEL + kx];
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
    out
}

fn maxpool_forward32(input: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let out_h = (h - 3) / 3 + 1;
    let out_w = (w - 3) / 3 + 1;
    let mut out = vec![0.0f32; channels * out_h * out_w];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..3 {
                    for dx in 0..3 {
                        best = best.max(plane[(oy * 3 + dy) * w + ox * 3 + dx]);
                    }
                }
                out[(c * out_h + oy) * out_w + ox] = best;
            }
        }
    }
    out
}
