use std::fmt::Write as _;

use crate::error::{Result, TensorError};
use crate::ops::elementwise::{BinaryKind, UnaryKind};
use crate::ops::resample::Taps;
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Unary {
        kind: UnaryKind<T>,
        x: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Separable {
        x: Var,
        rows: Taps<T>,
        cols: Taps<T>,
        name: &'static str,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Sum {
        x: Var,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    BoxMean {
        x: Var,
        k: usize,
    },
    Select {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary { kind, .. } => kind.name(),
            Op::Binary { kind, .. } => kind.name(),
            Op::Matmul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Separable { name, .. } => name,
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Sum { .. } => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::BoxMean { .. } => "box_mean",
            Op::Select { .. } => "select",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Unary { x, .. }
            | Op::MaxPool2 { x, .. }
            | Op::Softmax { x, .. }
            | Op::Separable { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Sum { x }
            | Op::SumAxis { x, .. }
            | Op::BoxMean { x, .. } => vec![*x],
            Op::Binary { a, b, .. } | Op::Matmul { a, b } | Op::Select { a, b, .. } => {
                vec![*a, *b]
            }
            Op::Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor<T>>,
}

/// Tape of executed operations. Values are recorded in execution order,
/// which is a topological order, and `backward` walks it in reverse.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// New tape with finiteness verification enabled.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Toggles the per-op NaN/Inf check.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode sweep from a one-element `loss`. Leaf gradients
    /// accumulate across calls until [`zero_grad`](Self::zero_grad).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {}",
                fmt_shape(loss_shape)
            )));
        }
        let mut grads = Grads::new(loss.0 + 1);
        grads.slots[loss.0] = Some(Tensor::full(loss_shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads.slots[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(g) => g.add_assign(&gout),
                    slot @ None => *slot = Some(gout),
                }
                continue;
            }
            self.backward_node(i, &gout, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &Tensor<T>, grads: &mut Grads<T>) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Unary { kind, x } => self.unary_backward(kind, *x, out, gout, grads),
            Op::Binary { kind, a, b } => self.binary_backward(*kind, *a, *b, gout, grads),
            Op::Matmul { a, b } => self.matmul_backward(*a, *b, gout, grads),
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => self.conv2d_backward(*x, *w, *bias, *stride, *pad, gout, grads),
            Op::MaxPool2 { x, argmax } => self.maxpool2_backward(*x, argmax, gout, grads),
            Op::Softmax { x, axis } => self.softmax_backward(*x, *axis, out, gout, grads),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => self.layer_norm_backward(*x, *gamma, *beta, xhat, rstd, gout, grads),
            Op::Separable { x, rows, cols, .. } => {
                self.separable_backward(*x, rows, cols, gout, grads)
            }
            Op::Reshape { x } => self.reshape_backward(*x, gout, grads),
            Op::Permute { x, perm } => self.permute_backward(*x, perm, gout, grads),
            Op::Concat { xs, axis } => self.concat_backward(xs, *axis, gout, grads),
            Op::Sum { x } => self.sum_backward(*x, gout, grads),
            Op::SumAxis { x, axis } => self.sum_axis_backward(*x, *axis, gout, grads),
            Op::BoxMean { x, k } => self.box_mean_backward(*x, *k, gout, grads),
            Op::Select { mask, a, b } => self.select_backward(mask, *a, *b, gout, grads),
        }
    }

    /// Plain-text edge list, one line per recorded node.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let inputs: Vec<String> = node
                .op
                .inputs()
                .iter()
                .map(|v| v.0.to_string())
                .collect();
            let _ = writeln!(
                out,
                "{i} {} {} <- [{}]{}",
                node.op.name(),
                fmt_shape(node.value.shape()),
                inputs.join(","),
                if node.requires_grad { " grad" } else { "" }
            );
        }
        out
    }
}

/// Transient per-sweep gradient buffers for interior nodes.
pub(crate) struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    fn new(n: usize) -> Self {
        Grads {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    pub(crate) fn add(&mut self, g: &Graph<T>, v: Var, t: Tensor<T>) {
        if !g.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(t.shape(), g.shape(v), "gradient shape mismatch");
        match &mut self.slots[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }
}
