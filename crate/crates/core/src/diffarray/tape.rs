use std::cell::{Ref, RefCell};
use std::fmt;

use super::array::{Array, Real};
use super::{conv, ops};
use crate::error::{Error, Result};

/// Vector-Jacobian product for operations defined outside the engine
/// (e.g. the warping sampler).
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input, `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Array<T>],
        output: &Array<T>,
        grad_output: &Array<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Array<T>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind<T> {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(T),
    Log(T),
    Square,
    AddScalar(T),
    MulScalar(T),
}

pub(crate) enum Op<T: Real> {
    /// Input array; also used for every node when recording is off.
    Leaf,
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnaryKind<T>,
        a: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    RepeatChannels {
        a: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    Upsample2x {
        a: usize,
    },
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary { a, b, .. } | Op::Concat { a, b } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::RepeatChannels { a }
            | Op::Upsample2x { a } => vec![*a],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Real> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

struct Inner<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Option<Array<T>>>>,
}

/// Ordered record of executed operations. Each forward pass gets its own
/// tape; [`Tape::backward`] may run once.
pub struct Tape<T: Real> {
    inner: RefCell<Inner<T>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                grads: None,
            }),
            recording: true,
        }
    }

    /// A tape that computes forward values only. Leaves never require
    /// gradients and nothing is recorded for backward.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input.
    pub fn constant(&self, value: Array<T>) -> DiffArray<'_, T> {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient on backward (when recording).
    pub fn param(&self, value: Array<T>) -> DiffArray<'_, T> {
        self.push_raw(value, Op::Leaf, self.recording)
    }

    pub fn scalar(&self, value: T) -> DiffArray<'_, T> {
        self.constant(Array::scalar(value))
    }

    fn push_raw(&self, value: Array<T>, op: Op<T>, requires_grad: bool) -> DiffArray<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        DiffArray { tape: self, id }
    }

    /// Register the result of an operation on `inputs`.
    pub(crate) fn push_op(&self, value: Array<T>, op: Op<T>) -> DiffArray<'_, T> {
        let requires_grad = self.recording && {
            let inner = self.inner.borrow();
            op.inputs().iter().any(|&i| inner.nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_raw(value, op, requires_grad)
    }

    /// Record an externally defined differentiable operation.
    pub fn push_custom(
        &self,
        value: Array<T>,
        inputs: &[DiffArray<'_, T>],
        op: Box<dyn CustomOp<T>>,
    ) -> DiffArray<'_, T> {
        let inputs = inputs.iter().map(|v| v.id).collect();
        self.push_op(value, Op::Custom { inputs, op })
    }

    pub(crate) fn value(&self, id: usize) -> Ref<'_, Array<T>> {
        Ref::map(self.inner.borrow(), |inner| &inner.nodes[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar output. Visits operations in exact
    /// reverse execution order.
    pub fn backward(&self, output: DiffArray<'_, T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        let out = &inner.nodes[output.id].value;
        if out.numel() != 1 {
            return Err(Error::NonScalar(out.shape().to_vec()));
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backward output".into()));
        }
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Array<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[output.id].requires_grad {
            grads[output.id] = Some(Array::full(out.shape(), T::one()));
        }
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let input_ids = node.op.inputs();
            let needs: Vec<bool> = input_ids.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_vals: Vec<&Array<T>> = input_ids.iter().map(|&i| &nodes[i].value).collect();
            let input_grads = vjp(&node.op, &input_vals, &node.value, &grad_out, &needs)?;
            for ((&i, need), g) in input_ids.iter().zip(&needs).zip(input_grads) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of tape node {i}")));
                }
            }
        }
        inner.grads = Some(grads);
        Ok(())
    }

    pub(crate) fn grad(&self, id: usize) -> Result<Array<T>> {
        let inner = self.inner.borrow();
        let grads = inner
            .grads
            .as_ref()
            .ok_or_else(|| Error::invalid("gradient requested before backward() was called"))?;
        let node = &inner.nodes[id];
        if !node.requires_grad {
            return Err(Error::invalid(format!(
                "tape node {id} does not require a gradient"
            )));
        }
        Ok(grads[id]
            .clone()
            .unwrap_or_else(|| Array::zeros(node.value.shape())))
    }
}

fn vjp<T: Real>(
    op: &Op<T>,
    inputs: &[&Array<T>],
    output: &Array<T>,
    g: &Array<T>,
    needs: &[bool],
) -> Result<Vec<Option<Array<T>>>> {
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Binary { kind, .. } => {
            let (ga, gb) = ops::binary_backward(*kind, inputs[0], inputs[1], g, needs);
            vec![ga, gb]
        }
        Op::Unary { kind, .. } => vec![Some(ops::unary_backward(*kind, inputs[0], output, g))],
        Op::Sum { .. } => {
            let v = g.item()?;
            vec![Some(Array::full(inputs[0].shape(), v))]
        }
        Op::Mean { .. } => {
            let n = T::from_usize(inputs[0].numel()).unwrap_or_else(T::one);
            vec![Some(Array::full(inputs[0].shape(), g.item()? / n))]
        }
        Op::Concat { .. } => {
            let split = inputs[0].numel();
            let (ga, gb) = g.data().split_at(split);
            vec![
                Some(Array::new(inputs[0].shape(), ga.to_vec())?),
                Some(Array::new(inputs[1].shape(), gb.to_vec())?),
            ]
        }
        Op::RepeatChannels { .. } => {
            let plane = inputs[0].numel();
            let mut acc = vec![T::zero(); plane];
            for chunk in g.data().chunks(plane) {
                for (a, &v) in acc.iter_mut().zip(chunk) {
                    *a += v;
                }
            }
            vec![Some(Array::new(inputs[0].shape(), acc)?)]
        }
        Op::Conv2d {
            stride, padding, ..
        } => {
            let (gi, gk, gb) =
                conv::conv2d_backward(inputs[0], inputs[1], g, *stride, *padding, needs);
            vec![gi, gk, gb]
        }
        Op::Upsample2x { .. } => vec![Some(conv::upsample2x_backward(inputs[0], g))],
        Op::Custom { op, .. } => op.backward(inputs, output, g, needs)?,
    })
}

/// Handle to an array living on a [`Tape`].
#[derive(Clone, Copy)]
pub struct DiffArray<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for DiffArray<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffArray")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<'t, T: Real> DiffArray<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Array<T>> {
        self.tape.value(self.id)
    }

    /// Owned copy of the forward value.
    pub fn to_array(&self) -> Array<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<T> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Gradient populated by [`Tape::backward`]; zeros when this leaf was not
    /// reachable from the output.
    pub fn grad(&self) -> Result<Array<T>> {
        self.tape.grad(self.id)
    }
}
