use std::sync::Arc;

use super::{ops, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule may read: input values, the node's own value, and the
/// incoming gradient.
pub struct BackwardCtx<'a, T> {
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether each input wants a gradient; rules may return `None` where it does not.
    pub needs_grad: &'a [bool],
}

/// Maps the output gradient to one optional gradient per input.
pub type BackwardFn<T> =
    Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> + Send + Sync>;

enum Kind {
    Variable,
    Constant,
    Op(&'static str),
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    kind: Kind,
}

/// Records a computation so a scalar result can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], one per variable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Takes ownership of a gradient, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad: true,
            kind: Kind::Variable,
        })
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad: false,
            kind: Kind::Constant,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation computed outside the tape.
    ///
    /// `backward` is only invoked when at least one input requires a gradient.
    pub fn record(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            kind: Kind::Op(name),
        })
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Name of the operation that produced `v` (`"variable"` / `"constant"` for leaves).
    pub fn op_name(&self, v: Var) -> &'static str {
        match self.nodes[v.0].kind {
            Kind::Variable => "variable",
            Kind::Constant => "constant",
            Kind::Op(name) => name,
        }
    }

    /// Reverse sweep from a scalar `root`; returns gradients of every variable leaf.
    ///
    /// Gradients flowing into a node from several consumers are summed.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));

        for i in (0..=root.0).rev() {
            let Some(grad) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            match (&node.kind, &node.backward) {
                (Kind::Variable, _) => grads[i] = Some(grad),
                (Kind::Op(name), Some(rule)) => {
                    let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                    let ctx = BackwardCtx {
                        inputs: &inputs,
                        output: &node.value,
                        grad: &grad,
                        needs_grad: &needs,
                    };
                    let input_grads = rule(&ctx)?;
                    if input_grads.len() != node.inputs.len() {
                        return Err(Error::shape(name, "backward rule returned wrong gradient count"));
                    }
                    for ((&v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                        let (Some(g), true) = (g, need) else { continue };
                        if g.shape() != self.nodes[v.0].value.shape() {
                            return Err(Error::shape(
                                name,
                                format!(
                                    "gradient shape {:?} for input of shape {:?}",
                                    g.shape(),
                                    self.nodes[v.0].value.shape()
                                ),
                            ));
                        }
                        match pending[v.0].as_mut() {
                            Some(acc) => acc.add_assign(&g)?,
                            None => pending[v.0] = Some(g),
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(Gradients { grads })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.record(
            "sum",
            value,
            &[x],
            Box::new(|ctx| {
                let g = ctx.grad.data()[0];
                Ok(vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))])
            }),
        )
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.record(
            "mul",
            value,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx.needs_grad[0]
                    .then(|| ctx.grad.zip_map(ctx.inputs[1], |g, q| g * q))
                    .transpose()?;
                let gb = ctx.needs_grad[1]
                    .then(|| ctx.grad.zip_map(ctx.inputs[0], |g, p| g * p))
                    .transpose()?;
                Ok(vec![ga, gb])
            }),
        ))
    }

    /// `sum_i weight_i * term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let x = self
                .value(v)
                .item()
                .ok_or_else(|| Error::shape("weighted_sum", "terms must be scalars"))?;
            total = total + w * x;
        }
        let weights: Vec<T> = terms.iter().map(|t| t.1).collect();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.record(
            "weighted_sum",
            Tensor::scalar(total),
            &inputs,
            Box::new(move |ctx| {
                let g = ctx.grad.data()[0];
                Ok(weights.iter().map(|&w| Some(Tensor::scalar(w * g))).collect())
            }),
        ))
    }
}

/// Shared vocabulary of layer operations, implemented both by the recording [`Tape`] and
/// by the tape-free [`Eager`] evaluator, so network topology is written once.
pub trait Graph<T: Real> {
    type Value: Clone;

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn parameter(&mut self, t: &Tensor<T>) -> Self::Value;

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn depthwise_conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn pointwise_conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn slice_channels(&mut self, x: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn resize_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
    fn avg_pool(&mut self, x: &Self::Value, k: usize) -> Result<Self::Value>;
}

fn conv_rule<T: Real>(
    backward: fn(&Tensor<T>, &Tensor<T>, &Tensor<T>, &Tensor<T>, bool) -> Result<ops::ConvGrads<T>>,
) -> BackwardFn<T> {
    Box::new(move |ctx| {
        let g = backward(ctx.inputs[0], ctx.inputs[1], ctx.inputs[2], ctx.grad, ctx.needs_grad[0])?;
        Ok(vec![g.input, Some(g.weight), Some(g.bias)])
    })
}

impl<T: Real> Graph<T> for Tape<T> {
    type Value = Var;

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.value(*v)
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        Tape::constant(self, t)
    }

    fn parameter(&mut self, t: &Tensor<T>) -> Var {
        self.variable(t.clone())
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = ops::conv2d(self.value(*x), self.value(*w), self.value(*b))?;
        Ok(self.record("conv2d", out, &[*x, *w, *b], conv_rule(ops::conv2d_backward)))
    }

    fn depthwise_conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = ops::depthwise_conv2d(self.value(*x), self.value(*w), self.value(*b))?;
        Ok(self.record(
            "depthwise_conv2d",
            out,
            &[*x, *w, *b],
            conv_rule(ops::depthwise_conv2d_backward),
        ))
    }

    fn pointwise_conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let out = ops::pointwise_conv2d(self.value(*x), self.value(*w), self.value(*b))?;
        Ok(self.record(
            "pointwise_conv2d",
            out,
            &[*x, *w, *b],
            conv_rule(ops::pointwise_conv2d_backward),
        ))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        let out = ops::relu(self.value(*x));
        Ok(self.record(
            "relu",
            out,
            &[*x],
            Box::new(|ctx| Ok(vec![Some(ops::relu_backward(ctx.inputs[0], ctx.grad)?)])),
        ))
    }

    fn tanh(&mut self, x: &Var) -> Result<Var> {
        let out = ops::tanh(self.value(*x));
        Ok(self.record(
            "tanh",
            out,
            &[*x],
            Box::new(|ctx| Ok(vec![Some(ops::tanh_backward(ctx.output, ctx.grad)?)])),
        ))
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(*a), self.value(*b))?;
        let ca = self.value(*a).shape()[1];
        let cb = self.value(*b).shape()[1];
        Ok(self.record(
            "concat_channels",
            out,
            &[*a, *b],
            Box::new(move |ctx| {
                let ga = ctx.needs_grad[0]
                    .then(|| ops::slice_channels(ctx.grad, 0, ca))
                    .transpose()?;
                let gb = ctx.needs_grad[1]
                    .then(|| ops::slice_channels(ctx.grad, ca, cb))
                    .transpose()?;
                Ok(vec![ga, gb])
            }),
        ))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(*x), start, len)?;
        Ok(self.record(
            "slice_channels",
            out,
            &[*x],
            Box::new(move |ctx| {
                Ok(vec![Some(ops::slice_channels_backward(
                    ctx.inputs[0].shape(),
                    start,
                    ctx.grad,
                )?)])
            }),
        ))
    }

    fn resize_bilinear(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::resize_bilinear(self.value(*x), h, w)?;
        Ok(self.record(
            "resize_bilinear",
            out,
            &[*x],
            Box::new(|ctx| {
                Ok(vec![Some(ops::resize_bilinear_backward(
                    ctx.inputs[0].shape(),
                    ctx.grad,
                )?)])
            }),
        ))
    }

    fn avg_pool(&mut self, x: &Var, k: usize) -> Result<Var> {
        let out = ops::avg_pool(self.value(*x), k)?;
        Ok(self.record(
            "avg_pool",
            out,
            &[*x],
            Box::new(move |ctx| Ok(vec![Some(ops::avg_pool_backward(ctx.inputs[0].shape(), k, ctx.grad)?)])),
        ))
    }
}

/// Evaluates [`Graph`] operations immediately without recording anything.
///
/// Intermediate results are released as soon as the caller drops them, which keeps
/// full-resolution inference within memory.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Value = Arc<Tensor<T>>;

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::Value {
        Arc::new(t)
    }

    fn parameter(&mut self, t: &Tensor<T>) -> Self::Value {
        Arc::new(t.clone())
    }

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::conv2d(x, w, b).map(Arc::new)
    }

    fn depthwise_conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::depthwise_conv2d(x, w, b).map(Arc::new)
    }

    fn pointwise_conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::pointwise_conv2d(x, w, b).map(Arc::new)
    }

    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(ops::relu(x)))
    }

    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(ops::tanh(x)))
    }

    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::concat_channels(a, b).map(Arc::new)
    }

    fn slice_channels(&mut self, x: &Self::Value, start: usize, len: usize) -> Result<Self::Value> {
        ops::slice_channels(x, start, len).map(Arc::new)
    }

    fn resize_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value> {
        ops::resize_bilinear(x, h, w).map(Arc::new)
    }

    fn avg_pool(&mut self, x: &Self::Value, k: usize) -> Result<Self::Value> {
        ops::avg_pool(x, k).map(Arc::new)
    }
}
