//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its output value and the handles
//! of its inputs. Nodes are only ever appended, so insertion order is a
//! topological order and [`Tape::backward`] simply walks the nodes in
//! reverse, accumulating gradients into each input.
//!
//! Parameters are registered by reference with [`Tape::param`], so a
//! network's weights are not copied for every training step.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Value<'a, E> {
    Owned(Tensor<E>),
    Borrowed(&'a Tensor<E>),
}

impl<E> Value<'_, E> {
    fn get(&self) -> &Tensor<E> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Conv2d { x: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    ConvTranspose2d { x: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    PixelShuffle { x: Var, scale: usize },
    Concat { parts: Vec<Var> },
    Relu { x: Var },
    Add { a: Var, b: Var },
    L1Loss { pred: Var, target: Var },
    Sum { x: Var },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Concat { .. } => "concat_channels",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::L1Loss { .. } => "l1_loss",
            Op::Sum { .. } => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, weight, bias, .. } | Op::ConvTranspose2d { x, weight, bias, .. } => {
                vec![*x, *weight, *bias]
            }
            Op::PixelShuffle { x, .. } | Op::Relu { x } | Op::Sum { x } => vec![*x],
            Op::Concat { parts } => parts.clone(),
            Op::Add { a, b } => vec![*a, *b],
            Op::L1Loss { pred, target } => vec![*pred, *target],
        }
    }
}

struct Node<'a, E> {
    value: Value<'a, E>,
    op: Op,
    requires_grad: bool,
}

/// Replaces the default backward rule of one op kind. Used by the
/// gradient-check harness to prove that a broken rule is caught.
pub type BackwardHook<E> = fn(&Op, &[&Tensor<E>], &Tensor<E>) -> Option<Vec<Option<Vec<E>>>>;

/// Recording context for one forward/backward pass.
pub struct Tape<'a, E: Element = f32> {
    nodes: Vec<Node<'a, E>>,
    hook: Option<BackwardHook<E>>,
}

impl<E: Element> Default for Tape<'_, E> {
    fn default() -> Self {
        Tape { nodes: Vec::new(), hook: None }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var) -> Option<&[E]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<E>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<'a, E: Element> Tape<'a, E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_backward_hook(hook: BackwardHook<E>) -> Self {
        Tape { nodes: Vec::new(), hook: Some(hook) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a, E>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Value<'a, E>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// An owned input; `requires_grad` decides whether backward reports a
    /// gradient for it.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push_leaf(Value::Owned(value), requires_grad)
    }

    /// A borrowed trainable tensor.
    pub fn param(&mut self, value: &'a Tensor<E>) -> Var {
        self.push_leaf(Value::Borrowed(value), true)
    }

    /// A borrowed tensor that never receives a gradient.
    pub fn constant(&mut self, value: &'a Tensor<E>) -> Var {
        self.push_leaf(Value::Borrowed(value), false)
    }

    pub fn value(&self, var: Var) -> &Tensor<E> {
        self.nodes[var.0].value.get()
    }

    pub fn op(&self, var: Var) -> &Op {
        &self.nodes[var.0].op
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d_raw(self.value(x), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(Value::Owned(y), Op::Conv2d { x, weight, bias, stride, padding }))
    }

    pub fn conv2d_transpose(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d_transpose_raw(self.value(x), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(Value::Owned(y), Op::ConvTranspose2d { x, weight, bias, stride, padding }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, scale: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), scale)?;
        Ok(self.push(Value::Owned(y), Op::PixelShuffle { x, scale }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let y = {
            let tensors: Vec<&Tensor<E>> = parts.iter().map(|&v| self.value(v)).collect();
            ops::concat_channels(&tensors)?
        };
        Ok(self.push(Value::Owned(y), Op::Concat { parts: parts.to_vec() }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(Value::Owned(y), Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Value::Owned(y), Op::Add { a, b }))
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::l1_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Value::Owned(Tensor::scalar(loss)), Op::L1Loss { pred, target }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum { x })
    }

    /// Propagates d(loss)/d(node) from a scalar `loss` back to every node
    /// that requires a gradient. Fan-out accumulates additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let shape = self.value(loss).shape();
        if shape != Shape::scalar() {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            let inputs = node.op.inputs();
            let dy = Tensor::new(node.value.get().shape(), upstream)?;
            let input_grads = self.input_grads(&node.op, &inputs, &dy)?;
            for (var, g) in inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Intermediate gradients are not kept; only leaves report one.
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, op: &Op, inputs: &[Var], dy: &Tensor<E>) -> Result<Vec<Option<Vec<E>>>> {
        if let Some(hook) = self.hook {
            let values: Vec<&Tensor<E>> = inputs.iter().map(|&v| self.value(v)).collect();
            if let Some(g) = hook(op, &values, dy) {
                return Ok(g);
            }
        }
        let need = |v: &Var| self.nodes[v.0].requires_grad;
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, weight, stride, padding, .. } => {
                let g = ops::conv2d_backward(self.value(x), self.value(weight), stride, padding, dy, need(&x))?;
                vec![g.input.map(Tensor::into_data), Some(g.weight.into_data()), Some(g.bias.into_data())]
            }
            Op::ConvTranspose2d { x, weight, stride, padding, .. } => {
                let g =
                    ops::conv2d_transpose_backward(self.value(x), self.value(weight), stride, padding, dy, need(&x))?;
                vec![g.input.map(Tensor::into_data), Some(g.weight.into_data()), Some(g.bias.into_data())]
            }
            Op::PixelShuffle { scale, .. } => vec![Some(ops::pixel_unshuffle(dy, scale)?.into_data())],
            Op::Concat { ref parts } => {
                let widths: Vec<usize> = parts.iter().map(|&v| self.value(v).shape().c).collect();
                ops::split_channels(dy, &widths)?.into_iter().map(|t| Some(t.into_data())).collect()
            }
            Op::Relu { x } => vec![Some(ops::relu_backward(self.value(x), dy.data()))],
            Op::Add { .. } => vec![Some(dy.data().to_vec()), Some(dy.data().to_vec())],
            Op::L1Loss { pred, target } => {
                let up = dy.data()[0];
                let g = ops::l1_loss_backward(self.value(pred), self.value(target), up);
                let neg = need(&target).then(|| g.iter().map(|&v| -v).collect());
                vec![Some(g), neg]
            }
            Op::Sum { x } => vec![Some(vec![dy.data()[0]; self.value(x).numel()])],
        })
    }
}
