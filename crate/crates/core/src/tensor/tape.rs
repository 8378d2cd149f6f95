//! Reverse-mode tape over the fixed operation set used by the network.

use super::conv::{self, ConvGeometry};
use super::{MaskGrid, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How an L1 norm is reduced to a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        mask: Vec<T>,
        geometry: ConvGeometry,
        den: Vec<T>,
    },
    Relu {
        x: Var,
    },
    L1 {
        pred: Var,
        target: Var,
        scale: T,
    },
    MaskedL1 {
        pred: Var,
        target: Var,
        mask: Vec<T>,
        scale: T,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations in creation order; that order is a valid topological
/// order, so the backward sweep simply walks the node list in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor; it participates in differentiation iff its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Adds an input tensor that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].value.grad()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, var: Var) -> Option<T> {
        self.value(var).item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_result(&mut self, shape: &[usize], data: Vec<T>, grad: bool, op: Op<T>) -> Result<Var> {
        let mut value = Tensor::new(shape, data)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        value.set_requires_grad(grad);
        Ok(self.push(value, op))
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.value(*v).requires_grad())
    }

    /// Mask-normalized convolution: each output pixel is the mask-weighted
    /// window sum divided by `Σ mask + eps`, plus the bias.
    ///
    /// `x` is `H×W×Cin`, `kernel` is `k×k×Cin×Cout` with `k` odd, `bias` is
    /// `Cout`. The mask is a constant. `eps` must be non-negative; zero is
    /// allowed for exact comparisons, in which case empty windows yield the bias.
    pub fn conv2d_sparse(
        &mut self,
        x: Var,
        mask: &MaskGrid,
        kernel: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.value(x).shape();
        let ks = self.value(kernel).shape();
        let bs = self.value(bias).shape();
        let [h, w, cin] = xs[..] else {
            return Err(Error::Shape(format!("conv input must be H×W×C, got {xs:?}")));
        };
        let [k, k2, kin, cout] = ks[..] else {
            return Err(Error::Shape(format!("kernel must be k×k×Cin×Cout, got {ks:?}")));
        };
        if k != k2 {
            return Err(Error::Shape(format!("kernel must be square, got {ks:?}")));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {k}")));
        }
        if kin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kin} input channels, input has {cin}"
            )));
        }
        if bs != [cout] {
            return Err(Error::Shape(format!("bias must be [{cout}], got {bs:?}")));
        }
        if mask.height() != h || mask.width() != w {
            return Err(Error::Shape(format!(
                "mask {}×{} does not match input {h}×{w}",
                mask.height(),
                mask.width()
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
        }

        let geometry = ConvGeometry { h, w, cin, cout, k };
        let mask: Vec<T> = mask.values().iter().map(|&m| T::from_f64(m)).collect();
        let (out, den) = conv::forward(
            geometry,
            self.value(x).data(),
            &mask,
            self.value(kernel).data(),
            self.value(bias).data(),
            T::from_f64(eps),
        );
        let grad = self.needs_grad(&[x, kernel, bias]);
        self.push_result(
            &[h, w, cout],
            out,
            grad,
            Op::Conv {
                x,
                kernel,
                bias,
                mask,
                geometry,
                den,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let shape = input.shape().to_vec();
        let data = input
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let grad = self.needs_grad(&[x]);
        self.push_result(&shape, data, grad, Op::Relu { x })
    }

    /// `Σ |pred − target|` (or its mean).
    pub fn l1_loss(&mut self, pred: Var, target: Var, reduction: Reduction) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "l1_loss: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let scale = match reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::from_f64(p.numel().max(1) as f64),
        };
        let sum = p
            .data()
            .iter()
            .zip(t.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        let grad = self.needs_grad(&[pred, target]);
        self.push_result(&[], vec![sum * scale], grad, Op::L1 { pred, target, scale })
    }

    /// `Σ m·|pred − target|` over a binary mask. Cells with `m = 0` are never
    /// read, so neither the value nor any gradient depends on them.
    pub fn masked_l1_loss(
        &mut self,
        pred: Var,
        target: Var,
        mask: &MaskGrid,
        reduction: Reduction,
    ) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "masked_l1_loss: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        if p.numel() != mask.values().len()
            || (p.rank() >= 2 && p.shape()[..2] != [mask.height(), mask.width()])
        {
            return Err(Error::Shape(format!(
                "masked_l1_loss: mask {}×{} vs prediction {:?}",
                mask.height(),
                mask.width(),
                p.shape()
            )));
        }
        if !mask.is_binary() {
            return Err(Error::Mask("masked_l1_loss requires a binary mask".into()));
        }
        let scale = match reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::from_f64(mask.count().max(1) as f64),
        };
        let mut sum = T::zero();
        for i in mask.active_indices() {
            sum = sum + (p.data()[i] - t.data()[i]).abs();
        }
        let mask: Vec<T> = mask.values().iter().map(|&m| T::from_f64(m)).collect();
        let grad = self.needs_grad(&[pred, target]);
        self.push_result(
            &[],
            vec![sum * scale],
            grad,
            Op::MaskedL1 {
                pred,
                target,
                mask,
                scale,
            },
        )
    }

    /// `Σ γᵢ·sᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = T::zero();
        let mut typed = Vec::with_capacity(terms.len());
        for &(var, weight) in terms {
            let s = self.scalar(var).ok_or_else(|| {
                Error::Shape(format!("weighted_sum term {var:?} is not a scalar"))
            })?;
            let weight = T::from_f64(weight);
            total = total + weight * s;
            typed.push((var, weight));
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let grad = self.needs_grad(&vars);
        self.push_result(&[], vec![total], grad, Op::WeightedSum { terms: typed })
    }

    /// Back-propagates from a scalar root. Gradients of every node are reset
    /// to zero first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.run_backward(root, false)
    }

    /// Like [`backward`](Self::backward) but adds into existing leaf gradients.
    pub fn backward_accumulate(&mut self, root: Var) -> Result<()> {
        self.run_backward(root, true)
    }

    fn run_backward(&mut self, root: Var, accumulate: bool) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for node in &mut self.nodes {
            if !(accumulate && matches!(node.op, Op::Leaf)) {
                node.value.zero_grad();
            }
        }
        if !self.value(root).requires_grad() {
            return Ok(());
        }
        self.nodes[root.0].value.grad_mut().unwrap()[0] = T::one();

        for idx in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let Some(upstream) = node.value.grad() else {
                continue;
            };
            propagate(before, node, upstream);
        }
        Ok(())
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv { .. } => "conv2d_sparse",
        Op::Relu { .. } => "relu",
        Op::L1 { .. } => "l1_loss",
        Op::MaskedL1 { .. } => "masked_l1_loss",
        Op::WeightedSum { .. } => "weighted_sum",
    }
}

fn add_into<T: Real>(nodes: &mut [Node<T>], var: Var, contribution: impl IntoIterator<Item = T>) {
    if let Some(g) = nodes[var.0].value.grad_mut() {
        for (slot, c) in g.iter_mut().zip(contribution) {
            *slot = *slot + c;
        }
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn propagate<T: Real>(nodes: &mut [Node<T>], node: &Node<T>, upstream: &[T]) {
    let requires = |nodes: &[Node<T>], v: Var| nodes[v.0].value.requires_grad();
    match &node.op {
        Op::Leaf => {}
        Op::Conv {
            x,
            kernel,
            bias,
            mask,
            geometry,
            den,
        } => {
            let want_x = requires(nodes, *x);
            let grads = conv::backward(
                *geometry,
                nodes[x.0].value.data(),
                mask,
                nodes[kernel.0].value.data(),
                den,
                upstream,
                want_x,
            );
            if let Some(gx) = grads.x {
                add_into(nodes, *x, gx);
            }
            add_into(nodes, *kernel, grads.kernel);
            add_into(nodes, *bias, grads.bias);
        }
        Op::Relu { x } => {
            if requires(nodes, *x) {
                let contrib: Vec<T> = nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .zip(upstream)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                add_into(nodes, *x, contrib);
            }
        }
        Op::L1 {
            pred,
            target,
            scale,
        } => {
            let g = upstream[0] * *scale;
            let signs: Vec<T> = nodes[pred.0]
                .value
                .data()
                .iter()
                .zip(nodes[target.0].value.data())
                .map(|(&p, &t)| sign(p - t) * g)
                .collect();
            if requires(nodes, *target) {
                add_into(nodes, *target, signs.iter().map(|&s| -s));
            }
            add_into(nodes, *pred, signs);
        }
        Op::MaskedL1 {
            pred,
            target,
            mask,
            scale,
        } => {
            let g = upstream[0] * *scale;
            let signs: Vec<T> = mask
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    if m == T::zero() {
                        T::zero()
                    } else {
                        m * sign(nodes[pred.0].value.data()[i] - nodes[target.0].value.data()[i]) * g
                    }
                })
                .collect();
            if requires(nodes, *target) {
                add_into(nodes, *target, signs.iter().map(|&s| -s));
            }
            add_into(nodes, *pred, signs);
        }
        Op::WeightedSum { terms } => {
            for &(var, weight) in terms {
                add_into(nodes, var, [upstream[0] * weight]);
            }
        }
    }
}
