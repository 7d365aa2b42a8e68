//! Single-use reverse-mode computation graph.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value and enough context to replay its backward kernel. [`Graph::backward`]
//! walks the tape once in reverse, accumulates gradients into the leaves that
//! requested them, and consumes the graph; a second backward call is a state
//! error. A graph is confined to one thread; concurrent batches each build
//! their own graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, stride: usize, padding: usize },
    ConvTranspose2d { input: NodeId, weight: NodeId, bias: NodeId },
    MaxPool2d { input: NodeId, argmax: Vec<usize> },
    PidDownsample { input: NodeId },
    Relu { input: NodeId },
    ConcatChannels { inputs: Vec<NodeId> },
    SoftmaxChannels { input: NodeId },
    CrossEntropy { probs: NodeId, target: Vec<u8> },
    CrossEntropyLogits { logits: NodeId, target: Vec<u8> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op,
    requires: bool,
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at a node by the backward pass, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::State("graph already consumed by a backward pass".into()))
        } else {
            Ok(())
        }
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            Err(Error::State(format!("node id {} does not belong to this graph", id.0)))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, grad: None, op, requires });
        id
    }

    /// Registers an input tensor. It participates in gradient accumulation
    /// iff `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> NodeId {
        let requires = tensor.requires_grad;
        self.push(tensor, Op::Leaf, requires)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check_open()?;
        for id in [input, weight, bias] {
            self.check_id(id)?;
        }
        let out = ops::conv2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
            stride,
            padding,
        )?;
        let requires = self.nodes[input.0].requires
            || self.nodes[weight.0].requires
            || self.nodes[bias.0].requires;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, stride, padding }, requires))
    }

    pub fn conv_transpose2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_open()?;
        for id in [input, weight, bias] {
            self.check_id(id)?;
        }
        let out = ops::conv_transpose2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        )?;
        let requires = self.nodes[input.0].requires
            || self.nodes[weight.0].requires
            || self.nodes[bias.0].requires;
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias }, requires))
    }

    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(input)?;
        let (out, argmax) = ops::maxpool2d_forward(&self.nodes[input.0].value)?;
        let requires = self.nodes[input.0].requires;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, requires))
    }

    pub fn pid_downsample(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(input)?;
        let out = ops::pid_downsample_forward(&self.nodes[input.0].value)?;
        let requires = self.nodes[input.0].requires;
        Ok(self.push(out, Op::PidDownsample { input }, requires))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(input)?;
        let out = ops::relu_forward(&self.nodes[input.0].value);
        let requires = self.nodes[input.0].requires;
        Ok(self.push(out, Op::Relu { input }, requires))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        self.check_open()?;
        for &id in inputs {
            self.check_id(id)?;
        }
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let out = ops::concat_channels_forward(&tensors)?;
        let requires = inputs.iter().any(|id| self.nodes[id.0].requires);
        Ok(self.push(out, Op::ConcatChannels { inputs: inputs.to_vec() }, requires))
    }

    pub fn softmax_channels(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(input)?;
        let out = ops::softmax_channels_forward(&self.nodes[input.0].value)?;
        let requires = self.nodes[input.0].requires;
        Ok(self.push(out, Op::SoftmaxChannels { input }, requires))
    }

    /// Mean binary cross-entropy of the foreground channel against a flat
    /// `[n, h, w]` buffer of 0/1 labels; produces a scalar node.
    pub fn cross_entropy(&mut self, probs: NodeId, target: &[u8]) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(probs)?;
        let loss = ops::cross_entropy_forward(&self.nodes[probs.0].value, target)?;
        let requires = self.nodes[probs.0].requires;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { probs, target: target.to_vec() },
            requires,
        ))
    }

    /// Mean binary cross-entropy computed directly from the pre-softmax
    /// logits via a max-shifted log-sum-exp; produces a scalar node. Equal
    /// to `softmax_channels` followed by `cross_entropy` wherever the latter
    /// is away from its clamp, but keeps a live gradient on saturated
    /// pixels, so the training loop uses this form.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: &[u8]) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(logits)?;
        let loss = ops::cross_entropy_logits_forward(&self.nodes[logits.0].value, target)?;
        let requires = self.nodes[logits.0].requires;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLogits { logits, target: target.to_vec() },
            requires,
        ))
    }

    /// Runs the backward pass from a scalar loss node, consuming the graph.
    ///
    /// Afterwards every leaf registered with `requires_grad` holds a gradient
    /// buffer; leaves not on any path to the loss hold zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_id(loss)?;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        self.backward_seeded(loss, &[T::one()])
    }

    /// General vector-Jacobian product: seeds `root` with `seed` and runs the
    /// backward pass, consuming the graph. `backward` is the scalar case.
    pub fn backward_seeded(&mut self, root: NodeId, seed: &[T]) -> Result<()> {
        self.check_open()?;
        self.check_id(root)?;
        if seed.len() != self.nodes[root.0].value.numel() {
            return Err(Error::Shape(format!(
                "seed gradient has {} elements, node has {}",
                seed.len(),
                self.nodes[root.0].value.numel()
            )));
        }
        self.consumed = true;
        self.nodes[root.0].grad = Some(seed.to_vec());

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
                continue;
            }
            let grad_out = Tensor {
                shape: self.nodes[i].value.shape.clone(),
                data: g,
                grad: None,
                requires_grad: false,
            };
            let contributions: Vec<(NodeId, Vec<T>)> = match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, stride, padding } => {
                    let (gi, gw, gb) = ops::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        *stride,
                        *padding,
                        &grad_out,
                    )?;
                    vec![(*input, gi.data), (*weight, gw.data), (*bias, gb.data)]
                }
                Op::ConvTranspose2d { input, weight, bias } => {
                    let (gi, gw, gb) = ops::conv_transpose2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &grad_out,
                    )?;
                    vec![(*input, gi.data), (*weight, gw.data), (*bias, gb.data)]
                }
                Op::MaxPool2d { input, argmax } => {
                    let gi = ops::maxpool2d_backward(
                        argmax,
                        &grad_out,
                        self.nodes[input.0].value.numel(),
                    );
                    vec![(*input, gi.data)]
                }
                Op::PidDownsample { input } => {
                    let gi =
                        ops::pid_downsample_backward(&grad_out, &self.nodes[input.0].value.shape);
                    vec![(*input, gi.data)]
                }
                Op::Relu { input } => {
                    let gi = ops::relu_backward(&self.nodes[input.0].value, &grad_out);
                    vec![(*input, gi.data)]
                }
                Op::ConcatChannels { inputs } => {
                    let shapes: Vec<Vec<usize>> =
                        inputs.iter().map(|id| self.nodes[id.0].value.shape.clone()).collect();
                    let parts = ops::concat_channels_backward(&grad_out, &shapes);
                    inputs.iter().zip(parts).map(|(id, t)| (*id, t.data)).collect()
                }
                Op::SoftmaxChannels { input } => {
                    let gi = ops::softmax_channels_backward(&self.nodes[i].value, &grad_out);
                    vec![(*input, gi.data)]
                }
                Op::CrossEntropy { probs, target } => {
                    let gi = ops::cross_entropy_backward(
                        &self.nodes[probs.0].value,
                        target,
                        grad_out.data[0],
                    );
                    vec![(*probs, gi.data)]
                }
                Op::CrossEntropyLogits { logits, target } => {
                    let gi = ops::cross_entropy_logits_backward(
                        &self.nodes[logits.0].value,
                        target,
                        grad_out.data[0],
                    );
                    vec![(*logits, gi.data)]
                }
            };
            for (id, delta) in contributions {
                self.accumulate(id, delta);
            }
        }

        // Leaves that asked for gradients but were never reached get zeros.
        for i in 0..=root.0 {
            let node = &mut self.nodes[i];
            if matches!(node.op, Op::Leaf) && node.value.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Vec<T>) {
        let node = &mut self.nodes[id.0];
        if !node.requires {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => node.grad = Some(delta),
        }
    }
}
