//! Reverse-mode differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the handles of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order, routing gradients with the hand-written backward kernels in
//! [`crate::tensor::ops`], and accumulates parameter gradients into a
//! [`ParamStore`]. A tape supports a single backward pass.

use std::fmt;

use crate::error::{Error, Result};
use crate::loss;
use crate::param::{ParamId, ParamStore};
use crate::tensor::ops::{self, BatchNormCache};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation identity of a recorded node, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    DwConv3x3,
    Conv3x3,
    PwConv,
    BatchNorm,
    Relu,
    MaxPool2x2,
    ConvTranspose2x2,
    Sigmoid,
    OneMinus,
    Concat,
    ResizeBilinear,
    Hadamard,
    Add,
    Scale,
    Loss(loss::LossTermKind),
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Loss(term) => write!(f, "Loss({term:?})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Input,
    Param(ParamId),
    DwConv3x3 { x: Var, k: Var },
    Conv3x3 { x: Var, w: Var },
    PwConv { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BatchNormCache<T> },
    /// `mask` is set when the on/off pattern was replayed rather than derived.
    Relu { x: Var, mask: Option<Vec<bool>> },
    MaxPool2x2 { x: Var, argmax: Vec<u32> },
    ConvTranspose2x2 { x: Var, w: Var, b: Option<Var> },
    Sigmoid { x: Var },
    OneMinus { x: Var },
    Concat { a: Var, b: Var, split: usize },
    Resize { x: Var },
    Hadamard { x: Var, map: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    /// Scalar loss; `grad` is d(loss)/d(pred) computed during the forward pass.
    Loss { pred: Var, grad: Tensor<T>, term: loss::LossTerm },
}

impl<T: Scalar> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::DwConv3x3 { .. } => OpKind::DwConv3x3,
            Op::Conv3x3 { .. } => OpKind::Conv3x3,
            Op::PwConv { .. } => OpKind::PwConv,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu { .. } => OpKind::Relu,
            Op::MaxPool2x2 { .. } => OpKind::MaxPool2x2,
            Op::ConvTranspose2x2 { .. } => OpKind::ConvTranspose2x2,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::OneMinus { .. } => OpKind::OneMinus,
            Op::Concat { .. } => OpKind::Concat,
            Op::Resize { .. } => OpKind::ResizeBilinear,
            Op::Hadamard { .. } => OpKind::Hadamard,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::Loss { term, .. } => OpKind::Loss(term.kind()),
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    scope: String,
}

/// Description of one recorded node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub index: usize,
    pub kind: OpKind,
    pub scope: String,
    pub shape: Vec<usize>,
}

/// Gradients produced by one backward pass, for every `input` leaf.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    inputs: Vec<Option<Tensor<T>>>,
    visit_order: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the output with respect to an input leaf, if it received any.
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(var.0).and_then(Option::as_ref)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

/// ReLU on/off masks and max-pool winners of one forward pass, in
/// recording order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationPattern {
    pub relu_masks: Vec<Vec<bool>>,
    pub pool_argmax: Vec<Vec<u32>>,
}

#[derive(Debug)]
struct Replay {
    pattern: ActivationPattern,
    relu: usize,
    pool: usize,
}

/// A record of one forward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    scope: String,
    consumed: bool,
    corrupt_relu: bool,
    replay: Option<Replay>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            scope: String::new(),
            consumed: false,
            corrupt_relu: false,
            replay: None,
        }
    }

    /// A tape whose ReLUs and max-pools follow `pattern`
    /// instead of their inputs, making the recorded function smooth in the
    /// parameters around the point where the pattern was captured.
    pub fn with_pattern(pattern: ActivationPattern) -> Self {
        Tape {
            replay: Some(Replay {
                pattern,
                relu: 0,
                pool: 0,
            }),
            ..Self::new()
        }
    }

    /// Extracts the activation pattern of the recorded pass.
    pub fn activation_pattern(&self) -> ActivationPattern {
        let mut p = ActivationPattern::default();
        for n in &self.nodes {
            match &n.op {
                Op::Relu { x, mask } => p.relu_masks.push(match mask {
                    Some(m) => m.clone(),
                    None => self.value(*x).data().iter().map(|&v| v > T::zero()).collect(),
                }),
                Op::MaxPool2x2 { argmax, .. } => p.pool_argmax.push(argmax.clone()),
                _ => {}
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Label attached to subsequently recorded nodes.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeInfo> + '_ {
        self.nodes.iter().enumerate().map(|(index, n)| NodeInfo {
            index,
            kind: n.op.kind(),
            scope: n.scope.clone(),
            shape: n.value.shape().to_vec(),
        })
    }

    /// Negative control for gradient checking: makes ReLU's backward pass
    /// gradients through unconditionally.
    #[doc(hidden)]
    pub fn inject_relu_fault(&mut self) {
        self.corrupt_relu = true;
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            scope: self.scope.clone(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).value.clone())
    }

    pub fn dwconv3x3(&mut self, x: Var, k: Var) -> Result<Var> {
        let y = ops::dwconv3x3(self.value(x), self.value(k))?;
        Ok(self.push(Op::DwConv3x3 { x, k }, y))
    }

    pub fn conv3x3(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::conv3x3(self.value(x), self.value(w))?;
        Ok(self.push(Op::Conv3x3 { x, w }, y))
    }

    pub fn pwconv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::pwconv(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(Op::PwConv { x, w, b }, y))
    }

    /// Batch norm with batch statistics. Returns the output and the batch
    /// statistics so the caller can update running averages.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, ops::BatchStats)> {
        let (y, cache, stats) =
            ops::batchnorm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok((self.push(Op::BatchNorm { x, gamma, beta, cache }, y), stats))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (y, cache) = ops::batchnorm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        Ok(self.push(Op::BatchNorm { x, gamma, beta, cache }, y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        match self.replay.as_mut() {
            Some(r) => {
                let mask = r
                    .pattern
                    .relu_masks
                    .get(r.relu)
                    .expect("replayed pattern has too few ReLUs")
                    .clone();
                r.relu += 1;
                let input = &self.nodes[x.0].value;
                assert_eq!(mask.len(), input.numel(), "replayed ReLU mask size");
                let data = input
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &on)| if on { v } else { T::zero() })
                    .collect();
                let y = Tensor::from_vec(input.shape(), data).expect("same shape");
                self.push(Op::Relu { x, mask: Some(mask) }, y)
            }
            None => {
                let y = ops::relu(self.value(x));
                self.push(Op::Relu { x, mask: None }, y)
            }
        }
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (mut y, mut argmax) = ops::maxpool2x2(self.value(x))?;
        if let Some(r) = self.replay.as_mut() {
            let frozen = r.pattern.pool_argmax.get(r.pool).expect("replayed pattern has too few max-pools");
            r.pool += 1;
            assert_eq!(frozen.len(), argmax.len(), "replayed max-pool size");
            let input = self.nodes[x.0].value.data();
            for (o, &i) in y.data_mut().iter_mut().zip(frozen) {
                *o = input[i as usize];
            }
            argmax.clone_from(frozen);
        }
        Ok(self.push(Op::MaxPool2x2 { x, argmax }, y))
    }

    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::conv_transpose2x2(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(Op::ConvTranspose2x2 { x, w, b }, y))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(Op::Sigmoid { x }, y)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let y = ops::one_minus(self.value(x));
        self.push(Op::OneMinus { x }, y)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        let split = self.value(a).shape()[1];
        Ok(self.push(Op::Concat { a, b, split }, y))
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::resize_bilinear(self.value(x), out_h, out_w)?;
        Ok(self.push(Op::Resize { x }, y))
    }

    pub fn hadamard_broadcast(&mut self, x: Var, map: Var) -> Result<Var> {
        let y = ops::hadamard_broadcast(self.value(x), self.value(map))?;
        Ok(self.push(Op::Hadamard { x, map }, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, y))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(Op::Scale { x, factor }, y)
    }

    /// Records a scalar loss of `pred` against a fixed target.
    pub fn loss(&mut self, pred: Var, target: &Tensor<T>, term: loss::LossTerm) -> Result<Var> {
        let (value, grad) = term.value_and_grad(self.value(pred), target)?;
        Ok(self.push(Op::Loss { pred, grad, term }, Tensor::scalar(T::of(value))))
    }

    /// Backpropagates `seed` from the last recorded node. Parameter gradients
    /// are added to `params`; input-leaf gradients are returned.
    pub fn backward(&mut self, seed: &Tensor<T>, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeState(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let last = self
            .nodes
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::TapeState("backward on an empty tape".into()))?;
        if seed.shape() != self.nodes[last].value.shape() {
            return Err(Error::shape(format!(
                "seed shape {:?} does not match output shape {:?}",
                seed.shape(),
                self.nodes[last].value.shape()
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut inputs: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut visit_order = Vec::with_capacity(n);
        grads[last] = Some(seed.clone());

        for i in (0..n).rev() {
            visit_order.push(i);
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Input => inputs[i] = Some(g),
                Op::Param(id) => {
                    params.get_mut(*id).grad.add_assign(&g)?;
                }
                Op::DwConv3x3 { x, k } => {
                    let (dx, dk) = ops::dwconv3x3_backward(val(*x), val(*k), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                }
                Op::Conv3x3 { x, w } => {
                    let (dx, dw) = ops::conv3x3_backward(val(*x), val(*w), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::PwConv { x, w, b } => {
                    let (dx, dw, db) = ops::pwconv_backward(val(*x), val(*w), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let db = db.reshape(val(*b).shape())?;
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = ops::batchnorm_backward(val(*gamma), cache, &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Relu { x, mask } => {
                    let dx = match mask {
                        _ if self.corrupt_relu => g,
                        Some(m) => {
                            let data = g.data().iter().zip(m).map(|(&v, &on)| if on { v } else { T::zero() }).collect();
                            Tensor::from_vec(g.shape(), data)?
                        }
                        None => ops::relu_backward(val(*x), &g),
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool2x2 { x, argmax } => {
                    let dx = ops::maxpool2x2_backward(val(*x).shape(), argmax, &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConvTranspose2x2 { x, w, b } => {
                    let (dx, dw, db) = ops::conv_transpose2x2_backward(val(*x), val(*w), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let db = db.reshape(val(*b).shape())?;
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Sigmoid { x } => {
                    let dx = ops::sigmoid_backward(&node.value, &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::OneMinus { x } => accumulate(&mut grads, *x, g.map(|v| -v)),
                Op::Concat { a, b, split } => {
                    let (da, db) = ops::concat_channels_backward(&g, *split);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Resize { x } => {
                    let dx = ops::resize_bilinear_backward(val(*x).shape(), &g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Hadamard { x, map } => {
                    let (dx, dm) = ops::hadamard_broadcast_backward(val(*x), val(*map), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *map, dm);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Loss { pred, grad, .. } => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *pred, grad.map(|v| v * s));
                }
            }
        }
        params.mark_grads_ready();
        Ok(Gradients {
            inputs,
            visit_order,
        })
    }

    /// Convenience for scalar outputs: seeds backward with 1.
    pub fn backward_scalar(&mut self, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let seed = Tensor::scalar(T::one());
        self.backward(&seed, params)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shapes agree"),
        slot @ None => *slot = Some(g),
    }
}
