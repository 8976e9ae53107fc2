//! Portable weight blob: a compact 32-bit little-endian container that can
//! be injected into a microcontroller image or shipped to an external
//! processor.
//!
//! Layout: magic `TRNW`, version u16, layer count u16, then per layer a
//! kind byte, four u16 shape dims, and the f32 payload (weights then
//! biases); a CRC-32 (IEEE) over everything preceding it closes the file.

use super::network::{build_toy_resnet, LayerSpec, Network};
use std::fmt;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TRNW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsError {
    BadMagic,
    BadVersion { got: u16 },
    /// The blob ended before the layer table said it would.
    Truncated,
    /// Bytes remained after the checksum.
    TrailingBytes { extra: usize },
    ChecksumMismatch { expected: u32, got: u32 },
    /// Layer table does not describe the expected architecture.
    ShapeMismatch { layer: usize, detail: String },
}

impl fmt::Display for WeightsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightsError::BadMagic => write!(f, "not a weight file (bad magic)"),
            WeightsError::BadVersion { got } => {
                write!(f, "unsupported weight file version {got}")
            }
            WeightsError::Truncated => write!(f, "weight file is truncated"),
            WeightsError::TrailingBytes { extra } => {
                write!(f, "{extra} unexpected bytes after the checksum")
            }
            WeightsError::ChecksumMismatch { expected, got } => {
                write!(f, "checksum mismatch: stored {got:#010x}, computed {expected:#010x}")
            }
            WeightsError::ShapeMismatch { layer, detail } => {
                write!(f, "layer {layer} does not match the expected architecture: {detail}")
            }
        }
    }
}

impl std::error::Error for WeightsError {}

fn kind_code(spec: &LayerSpec) -> u8 {
    match spec {
        LayerSpec::Input => 0,
        LayerSpec::Conv2d { .. } => 1,
        LayerSpec::MaxPool => 2,
        LayerSpec::Add => 3,
        LayerSpec::GlobalAvgPool => 4,
        LayerSpec::Dense { .. } => 5,
        LayerSpec::Relu => 6,
        LayerSpec::Softmax => 7,
    }
}

fn dims_of(spec: &LayerSpec) -> [u16; 4] {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            ..
        } => [out_channels as u16, in_channels as u16, 3, 3],
        LayerSpec::Dense { in_dim, out_dim } => [out_dim as u16, in_dim as u16, 1, 1],
        _ => [0, 0, 0, 0],
    }
}

/// Serializes all parameters at 32-bit precision.
pub fn save_weights(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.num_nodes() as u16).to_le_bytes());
    for node in net.nodes() {
        buf.push(kind_code(&node.spec));
        for d in dims_of(&node.spec) {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &w in node.weights.iter().chain(node.bias.iter()) {
            buf.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.pos + n > self.data.len() {
            return Err(WeightsError::Truncated);
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32, WeightsError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Deserializes a weight blob into the classifier architecture, validating
/// layer kinds, shapes, and the trailing checksum.
pub fn load_weights(data: &[u8]) -> Result<Network, WeightsError> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4)? != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = cur.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::BadVersion { got: version });
    }
    let layer_count = cur.u16()? as usize;

    let mut net = build_toy_resnet();
    if layer_count != net.num_nodes() {
        return Err(WeightsError::ShapeMismatch {
            layer: 0,
            detail: format!("expected {} layers, file has {layer_count}", net.num_nodes()),
        });
    }

    for id in 0..net.num_nodes() {
        let spec = net.node(id).spec;
        let kind = cur.u8()?;
        if kind != kind_code(&spec) {
            return Err(WeightsError::ShapeMismatch {
                layer: id,
                detail: format!("kind {kind} vs expected {}", kind_code(&spec)),
            });
        }
        let mut dims = [0u16; 4];
        for d in &mut dims {
            *d = cur.u16()?;
        }
        if dims != dims_of(&spec) {
            return Err(WeightsError::ShapeMismatch {
                layer: id,
                detail: format!("dims {dims:?} vs expected {:?}", dims_of(&spec)),
            });
        }
        let weight_len = net.node(id).weights.len();
        let bias_len = net.node(id).bias.len();
        for i in 0..weight_len {
            net.weights_mut(id)[i] = cur.f32()? as f64;
        }
        for i in 0..bias_len {
            net.bias_mut(id)[i] = cur.f32()? as f64;
        }
    }

    let body_end = cur.pos;
    let stored = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if cur.pos != data.len() {
        return Err(WeightsError::TrailingBytes {
            extra: data.len() - cur.pos,
        });
    }
    let computed = crc32fast::hash(&data[..body_end]);
    if stored != computed {
        return Err(WeightsError::ChecksumMismatch {
            expected: computed,
            got: stored,
        });
    }
    Ok(net)
}

/// Expected blob size for a network: 8-byte header, 9 bytes of layer
/// metadata per node, 4 bytes per parameter, 4-byte checksum.
pub fn expected_blob_size(net: &Network) -> usize {
    8 + 9 * net.num_nodes() + 4 * net.parameter_count() + 4
}
