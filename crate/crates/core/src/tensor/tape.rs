use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::{conv, elementwise, linalg, reduce, Tensor};
use crate::error::{shape_err, GemError, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a node was produced, plus whatever the backward pass needs cached.
pub(crate) enum Op<T> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    GatherRows { x: Var, idx: Vec<usize> },
    Conv2d { x: Var, w: Var, cols: Vec<T>, stride: usize, pad: usize },
    Upsample2x { x: Var },
    AvgPool2x { x: Var },
    AddChannel { x: Var, b: Var },
    MulChannel { x: Var, s: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Embed { table: Var, ids: Vec<usize> },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    MeanRows { x: Var },
    Softmax { x: Var, axis: usize },
    InstanceNorm { x: Var, inv_std: T },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    NormalizeRows { x: Var, sums: Vec<T> },
    NormalizeCols { x: Var, sums: Vec<T> },
    MaskedMse { pred: Var, target: Vec<T>, mask: Vec<bool>, count: usize },
    DiagNll { x: Var },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Append-only record of a computation, differentiated in reverse.
///
/// Every operation validates shapes eagerly and returns the new node's
/// handle. Parents always precede children, so a single reverse sweep over
/// the node list is a valid backward order.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked only if the tensor asks for them.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad();
        self.push_raw(t, Op::Leaf, needs)
    }

    /// Records a leaf whose gradient is always tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Binds a stored parameter, reusing the existing node if already bound.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id).clone_values();
        let v = self.push_raw(t, Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        let vals = self.values(v);
        assert_eq!(vals.len(), 1, "item() on a node with {} values", vals.len());
        vals[0]
    }

    /// Per-head attention probabilities cached by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push_raw(value, op, needs)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        if !self.value(loss).all_finite() {
            return Err(GemError::NonFinite("loss is not finite".into()));
        }
        let mut sink = GradSink {
            grads: (0..=loss.0).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        sink.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf | Op::Param => continue,
                _ => {}
            }
            let Some(g) = sink.grads[i].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            backward_node(self, Var(i), &g, &mut sink);
        }
        Ok(Gradients { grads: sink.grads })
    }
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn clone_values(&self) -> Tensor<T> {
        Tensor::new(self.shape(), self.values().to_vec()).expect("shape already validated")
    }
}

/// Gradient accumulator handed to the per-op backward functions.
pub(crate) struct GradSink<'a, T> {
    grads: Vec<Option<Vec<T>>>,
    nodes: &'a [Node<T>],
}

impl<T: Scalar> GradSink<'_, T> {
    /// Zero-initialised gradient buffer for `v`, or `None` if `v` is not on a
    /// differentiable path.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let n = node.value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

fn backward_node<T: Scalar>(tape: &Tape<T>, out: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let node = &tape.nodes[out.0];
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul { a, b, ta, tb } => linalg::matmul_backward(tape, *a, *b, *ta, *tb, g, sink),
        Op::Transpose { x } => linalg::transpose_backward(tape, *x, g, sink),
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } => linalg::attention_backward(tape, *q, *k, *v, *heads, probs, g, sink),
        Op::GatherRows { x, idx } => linalg::gather_rows_backward(tape, *x, idx, g, sink),
        Op::Conv2d {
            x,
            w,
            cols,
            stride,
            pad,
        } => conv::conv2d_backward(tape, out, *x, *w, cols, *stride, *pad, g, sink),
        Op::Upsample2x { x } => conv::upsample2x_backward(tape, *x, g, sink),
        Op::AvgPool2x { x } => conv::avgpool2x_backward(tape, *x, g, sink),
        Op::AddChannel { x, b } => conv::add_channel_backward(tape, *x, *b, g, sink),
        Op::MulChannel { x, s } => conv::mul_channel_backward(tape, *x, *s, g, sink),
        Op::Add { a, b } => elementwise::add_backward(tape, *a, *b, T::one(), g, sink),
        Op::Sub { a, b } => elementwise::add_backward(tape, *a, *b, -T::one(), g, sink),
        Op::Mul { a, b } => elementwise::mul_backward(tape, *a, *b, g, sink),
        Op::Relu { x } => elementwise::relu_backward(tape, out, *x, g, sink),
        Op::Sigmoid { x } => elementwise::sigmoid_backward(tape, out, *x, g, sink),
        Op::Exp { x } => elementwise::exp_backward(tape, out, *x, g, sink),
        Op::Log { x } => elementwise::log_backward(tape, *x, g, sink),
        Op::Scale { x, c } => elementwise::scale_backward(*x, *c, g, sink),
        Op::AddScalar { x } | Op::Reshape { x } => elementwise::scale_backward(*x, T::one(), g, sink),
        Op::Concat { parts, axis } => elementwise::concat_backward(tape, parts, *axis, g, sink),
        Op::Embed { table, ids } => elementwise::embed_backward(tape, *table, ids, g, sink),
        Op::Sum { x } => reduce::sum_backward(*x, T::one(), g, sink),
        Op::Mean { x } => {
            let n = T::from_usize(tape.value(*x).len()).unwrap();
            reduce::sum_backward(*x, T::one() / n, g, sink)
        }
        Op::MeanRows { x } => reduce::mean_rows_backward(tape, *x, g, sink),
        Op::Softmax { x, axis } => reduce::softmax_backward(tape, out, *x, *axis, g, sink),
        Op::InstanceNorm { x, inv_std } => {
            reduce::instance_norm_backward(tape, out, *x, *inv_std, g, sink)
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => reduce::layer_norm_backward(tape, *x, *gamma, *beta, xhat, inv_std, g, sink),
        Op::NormalizeRows { x, sums } => reduce::normalize_rows_backward(tape, out, *x, sums, g, sink),
        Op::NormalizeCols { x, sums } => reduce::normalize_cols_backward(tape, out, *x, sums, g, sink),
        Op::MaskedMse {
            pred,
            target,
            mask,
            count,
        } => reduce::masked_mse_backward(tape, *pred, target, mask, *count, g, sink),
        Op::DiagNll { x } => reduce::diag_nll_backward(tape, *x, g, sink),
    }
}

/// Result of [`Tape::backward`]: gradients for leaves and bound parameters.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf or parameter node. `None` means the
    /// loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds `scale * grad` into each bound parameter's gradient slot.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>, scale: T) -> Result<()> {
        let mut bound: Vec<(ParamId, Var)> = tape.params.iter().map(|(&p, &v)| (p, v)).collect();
        bound.sort_by_key(|(p, _)| p.index());
        for (p, v) in bound {
            if let Some(g) = self.wrt(v) {
                if scale == T::one() {
                    store.get_mut(p).accumulate_grad(g)?;
                } else {
                    let scaled: Vec<T> = g.iter().map(|&x| x * scale).collect();
                    store.get_mut(p).accumulate_grad(&scaled)?;
                }
            }
        }
        Ok(())
    }

    /// Gradient of a parameter as bound on `tape`, zero-filled if unused.
    pub fn param_grad(&self, tape: &Tape<T>, store: &ParamStore<T>, id: ParamId) -> Vec<T> {
        tape.params
            .get(&id)
            .and_then(|&v| self.wrt(v))
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); store.get(id).len()])
    }
}
