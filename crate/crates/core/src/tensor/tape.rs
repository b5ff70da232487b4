//! Reverse-mode differentiation over a recorded sequence of operations.
//!
//! A [`Tape`] is filled by one forward pass and consumed by
//! [`Tape::backward`], which accumulates parameter gradients into a
//! [`Gradients`] buffer. Tapes are cheap; build a fresh one per batch.

use std::collections::BTreeMap;

use super::{ops, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        if let Some(&id) = self.by_name.get(&name) {
            self.values[id.0] = value;
            return id;
        }
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn checksum(&self) -> u64 {
        self.values
            .iter()
            .fold(0u64, |acc, t| acc.rotate_left(7) ^ t.checksum())
    }
}

/// Gradient buffers aligned with a [`ParamStore`]. Backward passes add into
/// them until [`Gradients::zero`] is called.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params
                .values
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let slot = self
            .grads
            .get_mut(id.0)
            .ok_or_else(|| Error::State(format!("no gradient slot for parameter {}", id.0)))?;
        slot.add_assign(grad)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        stride: usize,
    },
    Dense {
        input: Var,
        weight: Var,
    },
    Bias {
        input: Var,
        bias: Var,
    },
    Relu(Var),
    /// Elementwise product with a constant of the same shape.
    MulConst {
        input: Var,
        factor: Tensor,
    },
    /// Per-image, per-channel constant mask of shape `[N, C]`.
    ChannelMask {
        input: Var,
        mask: Tensor,
    },
    Add(Var, Var),
    ResizeChannels {
        input: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Concat(Var, Var),
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        grad: Tensor,
    },
    SquaredError {
        pred: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable parameter; its gradient lands in slot `id`.
    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(input), self.value(weight), stride)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                weight,
                stride,
            },
        ))
    }

    pub fn dense(&mut self, input: Var, weight: Var) -> Result<Var> {
        let y = ops::dense_forward(self.value(input), self.value(weight))?;
        Ok(self.push(y, Op::Dense { input, weight }))
    }

    pub fn bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let y = ops::add_channel_bias(self.value(input), self.value(bias))?;
        Ok(self.push(y, Op::Bias { input, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = ops::relu(self.value(input));
        self.push(y, Op::Relu(input))
    }

    pub fn mul_const(&mut self, input: Var, factor: Tensor) -> Result<Var> {
        let x = self.value(input);
        x.check_same_shape("mul_const", &factor)?;
        let mut y = x.clone();
        for (a, b) in y.data_mut().iter_mut().zip(factor.data()) {
            *a *= b;
        }
        Ok(self.push(y, Op::MulConst { input, factor }))
    }

    pub fn channel_mask(&mut self, input: Var, mask: Tensor) -> Result<Var> {
        let y = ops::mul_channel_mask(self.value(input), &mask)?;
        Ok(self.push(y, Op::ChannelMask { input, mask }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn resize_channels(&mut self, input: Var, channels: usize) -> Result<Var> {
        let y = ops::resize_channels(self.value(input), channels)?;
        Ok(self.push(y, Op::ResizeChannels { input }))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let y = ops::slice_channels(self.value(input), start, end)?;
        Ok(self.push(y, Op::SliceChannels { input, start }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(y, Op::GlobalAvgPool(input)))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, grad) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, grad },
        ))
    }

    pub fn squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let (loss, grad) = ops::squared_error(self.value(pred), target)?;
        Ok(self.push(Tensor::scalar(loss), Op::SquaredError { pred, grad }))
    }

    /// Propagates `d loss / d loss = 1` back through the tape and adds each
    /// parameter's gradient into `grads`. Parameters the loss does not depend
    /// on receive nothing (their slots stay as they were).
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward pass".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("loss does not belong to this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }

        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |to: Var, grad: Tensor| -> Result<()> {
                match &mut adj[to.0] {
                    Some(existing) => existing.add_assign(&grad),
                    slot @ None => {
                        *slot = Some(grad);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &g)?,
                Op::Conv2d {
                    input,
                    weight,
                    stride,
                } => {
                    let (gi, gw) =
                        ops::conv2d_backward(self.value(*input), self.value(*weight), *stride, &g)?;
                    send(*input, gi)?;
                    send(*weight, gw)?;
                }
                Op::Dense { input, weight } => {
                    let (gi, gw) =
                        ops::dense_backward(self.value(*input), self.value(*weight), &g)?;
                    send(*input, gi)?;
                    send(*weight, gw)?;
                }
                Op::Bias { input, bias } => {
                    send(*bias, ops::channel_bias_backward(&g)?)?;
                    send(*input, g)?;
                }
                Op::Relu(input) => send(*input, ops::relu_backward(&node.value, &g))?,
                Op::MulConst { input, factor } => {
                    let mut gi = g;
                    for (a, b) in gi.data_mut().iter_mut().zip(factor.data()) {
                        *a *= b;
                    }
                    send(*input, gi)?;
                }
                Op::ChannelMask { input, mask } => {
                    send(*input, ops::mul_channel_mask(&g, mask)?)?;
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::ResizeChannels { input } => {
                    let from = self.value(*input).dim(1);
                    send(*input, ops::resize_channels(&g, from)?)?;
                }
                Op::SliceChannels { input, start } => {
                    let x = self.value(*input);
                    let (c, width) = (x.dim(1), g.dim(1));
                    // Re-embed the slice at its offset within the input.
                    let mut full = Tensor::zeros(x.shape());
                    let plane: usize = x.shape()[2..].iter().product();
                    for n in 0..x.dim(0) {
                        let dst = (n * c + start) * plane;
                        let src = n * width * plane;
                        full.data_mut()[dst..dst + width * plane]
                            .copy_from_slice(&g.data()[src..src + width * plane]);
                    }
                    send(*input, full)?;
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).dim(1);
                    let total = g.dim(1);
                    send(*a, ops::slice_channels(&g, 0, ca)?)?;
                    send(*b, ops::slice_channels(&g, ca, total)?)?;
                }
                Op::GlobalAvgPool(input) => {
                    let shape = self.value(*input).shape().to_vec();
                    send(*input, ops::global_avg_pool_backward(&shape, &g)?)?;
                }
                Op::SoftmaxCrossEntropy { logits, grad } => {
                    let mut gi = grad.clone();
                    let s = g.data()[0];
                    gi.data_mut().iter_mut().for_each(|v| *v *= s);
                    send(*logits, gi)?;
                }
                Op::SquaredError { pred, grad } => {
                    let mut gi = grad.clone();
                    let s = g.data()[0];
                    gi.data_mut().iter_mut().for_each(|v| *v *= s);
                    send(*pred, gi)?;
                }
            }
        }
        Ok(())
    }
}
