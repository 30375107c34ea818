//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends a node to the [`Tape`]; node indices are therefore
//! already in topological order and [`Tape::backward`] is a single reverse
//! sweep. A tape is built for one forward pass and thrown away afterwards.

use super::tensor::{broadcast_shape, broadcast_source_indices, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Exp(Var),
    Sin(Var),
    Sigmoid(Var),
    Negate(Var),
    Square(Var),
    Relu(Var),
    Mean(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Broadcast(Var),
    ScaleShift {
        input: Var,
        scale: f64,
    },
    /// Elementwise map whose local derivative was evaluated on the way forward.
    Pointwise {
        input: Var,
        derivative: Tensor,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Exp(a)
            | Op::Sin(a)
            | Op::Sigmoid(a)
            | Op::Negate(a)
            | Op::Square(a)
            | Op::Relu(a)
            | Op::Mean(a)
            | Op::Broadcast(a) => vec![*a],
            Op::ScaleShift { input, .. } | Op::Pointwise { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

/// A recorded value together with the rule that produced it.
#[derive(Debug)]
pub struct GradNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

impl GradNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn parents(&self) -> Vec<Var> {
        self.op.parents()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<GradNode>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
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

    pub fn node(&self, var: Var) -> &GradNode {
        &self.nodes[var.0]
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(GradNode {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul lhs")?;
        let (k2, n) = self.value(b).dims2("matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
            )));
        }
        let data = gemm(self.value(a).data(), m, k, false, self.value(b).data(), k2, n, false);
        let v = Tensor::new([m, n], data)?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a), "sin")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), "sigmoid")
    }

    pub fn negate(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Negate(a), "negate")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), "square")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), "relu")
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(a), "mean")
    }

    /// `scale * a + shift` with constant scalars.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::ScaleShift { input: a, scale }, "scale_shift")
    }

    /// Applies `f` elementwise; `df` is its derivative. One node instead of a
    /// chain of primitives, so only the input-sized derivative is retained.
    pub fn pointwise(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Var> {
        let input = self.value(a);
        let v = input.map(&f);
        let derivative = input.map(&df);
        self.push(v, Op::Pointwise { input: a, derivative }, "pointwise")
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::dim(format!("concat: {s:?} incompatible with {base:?}")));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.len() / outer;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(out_shape, data)?;
        self.push(
            v,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Expands `a` to `shape` under numpy broadcasting rules.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.value(a).shape().to_vec();
        if from == shape {
            return Ok(a);
        }
        match broadcast_shape(&from, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::dim(format!("cannot broadcast {from:?} to {shape:?}")));
            }
        }
        let src = self.value(a).data();
        let data = broadcast_source_indices(&from, shape)
            .into_iter()
            .map(|i| src[i])
            .collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        self.push(v, Op::Broadcast(a), "broadcast")
    }

    fn align(&mut self, a: Var, b: Var, name: &str) -> Result<(Var, Var)> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa == sb {
            return Ok((a, b));
        }
        let target = broadcast_shape(&sa, &sb)
            .ok_or_else(|| Error::dim(format!("{name}: shapes {sa:?} and {sb:?} do not broadcast")))?;
        Ok((self.broadcast(a, &target)?, self.broadcast(b, &target)?))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        for (idx, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &GradNode, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || g.zip_map(vb, |x, y| x * y));
                self.accumulate(grads, *b, || g.zip_map(va, |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2("matmul lhs")?;
                let (_, n) = vb.dims2("matmul rhs")?;
                self.accumulate(grads, *a, || {
                    let d = gemm(g.data(), m, n, false, vb.data(), k, n, true);
                    Tensor::new([m, k], d).expect("matmul grad shape")
                });
                self.accumulate(grads, *b, || {
                    let d = gemm(va.data(), m, k, true, g.data(), m, n, false);
                    Tensor::new([k, n], d).expect("matmul grad shape")
                });
            }
            Op::Exp(a) => self.accumulate(grads, *a, || g.zip_map(out, |x, y| x * y)),
            Op::Sin(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, || g.zip_map(va, |x, y| x * y.cos()));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, || g.zip_map(out, |x, s| x * s * (1.0 - s)));
            }
            Op::Negate(a) => self.accumulate(grads, *a, || g.map(|x| -x)),
            Op::Square(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, || g.zip_map(va, |x, y| 2.0 * x * y));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, || g.zip_map(va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let share = g.data()[0] / va.len() as f64;
                self.accumulate(grads, *a, || Tensor::full(va.shape().to_vec(), share));
            }
            Op::ScaleShift { input, scale } => {
                let s = *scale;
                self.accumulate(grads, *input, || g.map(|x| x * s));
            }
            Op::Pointwise { input, derivative } => {
                self.accumulate(grads, *input, || g.zip_map(derivative, |x, d| x * d));
            }
            Op::Broadcast(a) => {
                let from = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, || {
                    let mut acc = Tensor::zeros(from.clone());
                    let gd = g.data();
                    let dst = acc.data_mut();
                    for (k, i) in broadcast_source_indices(&from, out.shape()).into_iter().enumerate() {
                        dst[i] += gd[k];
                    }
                    acc
                });
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let row = g.len() / outer;
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let chunk = t.len() / outer;
                    let start = offset;
                    self.accumulate(grads, v, || {
                        let mut data = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = o * row + start;
                            data.extend_from_slice(&g.data()[base..base + chunk]);
                        }
                        Tensor::new(t.shape().to_vec(), data).expect("concat grad shape")
                    });
                    offset += chunk;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: impl FnOnce() -> Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&c),
            slot @ None => *slot = Some(c),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
