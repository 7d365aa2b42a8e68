//! Dense tensors and the reverse-mode autodiff engine.
//!
//! The engine is deliberately small: it implements exactly the operations the
//! segmentation network needs (2-D convolution and its transpose, 2×2 max
//! pooling, pixel-interval down-sampling, ReLU, channel concatenation,
//! channel softmax, cross-entropy) plus Adam and a checkpoint container.
//!
//! Layout is row-major NCHW throughout: a 4-D tensor of shape
//! `[n, c, h, w]` stores element `(i, j, y, x)` at
//! `((i * c + j) * h + y) * w + x`.

mod adam;
mod checkpoint;
mod graph;
mod ops;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Graph, NodeId};
pub use ops::{pid_reassemble, FOREGROUND_CHANNEL};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense row-major tensor.
///
/// `grad` is populated for parameter tensors after a backward pass; it always
/// matches `data` in length when present.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    /// Wraps existing data; the element count must match the shape's volume.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel], grad: None, requires_grad: false }
    }

    /// Tensor filled with one value.
    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel], grad: None, requires_grad: false }
    }

    /// A 0-D scalar tensor.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value], grad: None, requires_grad: false }
    }

    /// Marks this tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interprets the shape as `[n, c, h, w]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::Shape(format!("expected a 4-D tensor, got shape {:?}", other))),
        }
    }

    /// Flat index of `(n, c, y, x)` in a 4-D tensor. No bounds checks beyond debug.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    /// Converts elementwise to another scalar width through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}
