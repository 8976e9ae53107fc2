//! Dense tensors for the layer graph: feature maps `(channels, height,
//! width)` and flat vectors, both stored row-major in 64-bit floats.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorShape {
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector {
        len: usize,
    },
}

impl TensorShape {
    pub fn element_count(&self) -> usize {
        match *self {
            TensorShape::Map {
                channels,
                height,
                width,
            } => channels * height * width,
            TensorShape::Vector { len } => len,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TensorShape::Map {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            TensorShape::Vector { len } => write!(f, "vec{len}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Tensor {
            values: vec![0.0; shape.element_count()],
            shape,
        }
    }

    pub fn from_values(shape: TensorShape, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            shape.element_count(),
            "value count must match shape {shape}"
        );
        Tensor { shape, values }
    }

    pub fn map(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Self {
        Tensor::from_values(
            TensorShape::Map {
                channels,
                height,
                width,
            },
            values,
        )
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor::from_values(TensorShape::Vector { len: values.len() }, values)
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 32-bit view of the values, for the deployment-precision path.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}
