//! Reverse-mode differentiation over the recorded graph.
//!
//! Every backward rule is written in terms of differentiable tensor ops, so
//! running the backward pass with graph recording enabled yields gradients
//! that can themselves be differentiated (needed for gradient penalties).

use std::collections::{HashMap, HashSet};

use crate::error::{Result, TensorError};
use crate::ops::pointwise_const;
use crate::tensor::{with_grad_mode, Origin, Tensor, TensorId};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Scale(f32),
    Shift,
    Powf(f32),
    Exp,
    Ln,
    Tanh,
    LeakyRelu(f32),
    Abs,
    SumTo,
    BroadcastTo,
    Reshape,
    Cat { dim: usize, sizes: Vec<usize> },
    Narrow { dim: usize, start: usize },
    Embed { dim: usize, start: usize },
    Conv2d { stride: usize, padding: usize },
    ConvTranspose2d { stride: usize, padding: usize },
    ConvWeightGrad { stride: usize, padding: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::Shift => "shift",
            Op::Powf(_) => "powf",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Tanh => "tanh",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Abs => "abs",
            Op::SumTo => "sum_to",
            Op::BroadcastTo => "broadcast_to",
            Op::Reshape => "reshape",
            Op::Cat { .. } => "cat",
            Op::Narrow { .. } => "narrow",
            Op::Embed { .. } => "embed",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::ConvWeightGrad { .. } => "conv_weight_grad",
        }
    }

    /// Vector-Jacobian products for each input flagged in `needed`.
    fn backward(&self, inputs: &[Tensor], g: &Tensor, needed: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| needed.get(i).copied().unwrap_or(false);
        let x = &inputs[0];
        let mut grads: Vec<Option<Tensor>> = vec![None; inputs.len()];
        match self {
            Op::Add => {
                if want(0) {
                    grads[0] = Some(g.sum_to(x.shape())?);
                }
                if want(1) {
                    grads[1] = Some(g.sum_to(inputs[1].shape())?);
                }
            }
            Op::Sub => {
                if want(0) {
                    grads[0] = Some(g.sum_to(x.shape())?);
                }
                if want(1) {
                    grads[1] = Some(g.neg().sum_to(inputs[1].shape())?);
                }
            }
            Op::Mul => {
                let y = &inputs[1];
                if want(0) {
                    grads[0] = Some(g.mul(y)?.sum_to(x.shape())?);
                }
                if want(1) {
                    grads[1] = Some(g.mul(x)?.sum_to(y.shape())?);
                }
            }
            Op::Div => {
                let y = &inputs[1];
                if want(0) {
                    grads[0] = Some(g.div(y)?.sum_to(x.shape())?);
                }
                if want(1) {
                    let t = g.mul(x)?.div(&y.square())?.neg();
                    grads[1] = Some(t.sum_to(y.shape())?);
                }
            }
            Op::Scale(c) => grads[0] = Some(g.scale(*c)),
            Op::Shift => grads[0] = Some(g.clone()),
            Op::Powf(p) => {
                let d = if *p == 2.0 {
                    x.scale(2.0)
                } else {
                    x.powf(p - 1.0).scale(*p)
                };
                grads[0] = Some(g.mul(&d)?);
            }
            Op::Exp => grads[0] = Some(g.mul(&x.exp())?),
            Op::Ln => grads[0] = Some(g.div(x)?),
            Op::Tanh => {
                let t = x.tanh();
                let d = t.square().neg().shift(1.0);
                grads[0] = Some(g.mul(&d)?);
            }
            Op::LeakyRelu(alpha) => {
                // second derivative is zero almost everywhere: the mask is a constant
                let alpha = *alpha as f64;
                let mask = pointwise_const(x, |v| alpha + (1.0 - alpha) * (v > 0.0) as u8 as f64);
                grads[0] = Some(g.mul(&mask)?);
            }
            Op::Abs => {
                let sign = pointwise_const(x, |v| ((v > 0.0) as i8 - (v < 0.0) as i8) as f64);
                grads[0] = Some(g.mul(&sign)?);
            }
            Op::SumTo => grads[0] = Some(g.broadcast_to(x.shape())?),
            Op::BroadcastTo => grads[0] = Some(g.sum_to(x.shape())?),
            Op::Reshape => grads[0] = Some(g.reshape(x.shape())?),
            Op::Cat { dim, sizes } => {
                let mut start = 0;
                for (i, &len) in sizes.iter().enumerate() {
                    if want(i) {
                        grads[i] = Some(g.narrow(*dim, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Narrow { dim, start } => {
                grads[0] = Some(g.embed(*dim, *start, x.shape()[*dim]));
            }
            Op::Embed { dim, start } => {
                grads[0] = Some(g.narrow(*dim, *start, x.shape()[*dim])?);
            }
            Op::Conv2d { stride, padding } => {
                let w = &inputs[1];
                if want(0) {
                    let hw = [x.dim(2), x.dim(3)];
                    grads[0] = Some(g.conv_transpose2d_to(w, *stride, *padding, hw)?);
                }
                if want(1) {
                    grads[1] = Some(x.conv_weight_grad(g, w.dim(2), *stride, *padding)?);
                }
            }
            Op::ConvTranspose2d { stride, padding, .. } => {
                let w = &inputs[1];
                if want(0) {
                    grads[0] = Some(g.conv2d(w, None, *stride, *padding)?);
                }
                if want(1) {
                    grads[1] = Some(g.conv_weight_grad(x, w.dim(2), *stride, *padding)?);
                }
            }
            Op::ConvWeightGrad { stride, padding, .. } => {
                let gy = &inputs[1];
                if want(0) {
                    let hw = [x.dim(2), x.dim(3)];
                    grads[0] = Some(gy.conv_transpose2d_to(g, *stride, *padding, hw)?);
                }
                if want(1) {
                    grads[1] = Some(x.conv2d(g, None, *stride, *padding)?);
                }
            }
        }
        debug_assert!(grads
            .iter()
            .zip(inputs)
            .all(|(g, x)| g.as_ref().is_none_or(|g| g.shape() == x.shape())));
        Ok(grads)
    }
}

/// Nodes reachable from `root`, children before parents.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<TensorId> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Origin::Op { inputs, .. } = &t.0.origin {
            for i in inputs.iter().rev() {
                if i.requires_grad() && !visited.contains(&i.id()) {
                    stack.push((i.clone(), false));
                }
            }
        }
    }
    order
}

enum Targets<'a> {
    AllLeaves,
    These(&'a HashSet<TensorId>),
}

fn run(root: &Tensor, targets: Targets<'_>, create_graph: bool) -> Result<HashMap<TensorId, Tensor>> {
    if root.numel() != 1 {
        return Err(TensorError::NonScalarRoot(root.shape().to_vec()));
    }
    with_grad_mode(create_graph, || {
        let order = topo_order(root);
        // a node matters if a target is reachable through it
        let mut relevant: HashSet<TensorId> = HashSet::new();
        for t in &order {
            let is_target = match &targets {
                Targets::AllLeaves => matches!(t.0.origin, Origin::Leaf { .. }),
                Targets::These(set) => set.contains(&t.id()),
            };
            let through = match &t.0.origin {
                Origin::Op { inputs, .. } => inputs.iter().any(|i| relevant.contains(&i.id())),
                _ => false,
            };
            if is_target || through {
                relevant.insert(t.id());
            }
        }

        let mut grads: HashMap<TensorId, Tensor> = HashMap::new();
        let seed = root.ones_like();
        grads.insert(root.id(), seed);
        let mut results = HashMap::new();
        for t in order.iter().rev() {
            if !relevant.contains(&t.id()) {
                continue;
            }
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.origin {
                Origin::Op { op, inputs } => {
                    let needed: Vec<bool> = inputs.iter().map(|i| relevant.contains(&i.id())).collect();
                    let parts = op.backward(inputs, &g, &needed)?;
                    for (input, part) in inputs.iter().zip(parts) {
                        let Some(part) = part else { continue };
                        let merged = match grads.remove(&input.id()) {
                            Some(prev) => prev.add(&part)?,
                            None => part,
                        };
                        grads.insert(input.id(), merged);
                    }
                    let wanted = match &targets {
                        Targets::These(set) => set.contains(&t.id()),
                        Targets::AllLeaves => false,
                    };
                    if wanted {
                        results.insert(t.id(), g);
                    }
                }
                _ => match &targets {
                    Targets::AllLeaves => t.accumulate_grad(&g),
                    Targets::These(_) => {
                        results.insert(t.id(), g);
                    }
                },
            }
        }
        Ok(results)
    })
}

impl Tensor {
    /// Accumulates d(self)/d(leaf) into every reachable trainable leaf.
    /// Gradients of repeated calls add up until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        run(self, Targets::AllLeaves, false).map(|_| ())
    }
}

/// Gradients of the scalar `output` with respect to each of `inputs`, which
/// may be leaves or intermediate results. With `create_graph` the returned
/// tensors are themselves differentiable. Inputs that do not influence the
/// output get a zero gradient.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if !output.requires_grad() {
        return Err(TensorError::NotDifferentiable(
            "output does not depend on any differentiable tensor".into(),
        ));
    }
    let ids: HashSet<TensorId> = inputs.iter().map(|t| t.id()).collect();
    let mut results = run(output, Targets::These(&ids), create_graph)?;
    Ok(inputs
        .iter()
        .map(|t| results.remove(&t.id()).unwrap_or_else(|| t.zeros_like()))
        .collect())
}
