//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and the ids of its inputs. Nodes are appended in
//! evaluation order, so walking them backwards from the loss is a valid
//! topological order and [`Tape::backward`] needs no graph search.
//!
//! Leaves come in two kinds: constants ([`Tape::constant`]) never receive
//! gradients, parameters ([`Tape::param`]) carry a slot index so the caller can
//! map gradients back to its own parameter storage.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::math;
use super::tensor::{Axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    Transpose(Var),
    Softmax(Var, Axis),
    LeakyRelu(Var, f64),
    ConcatCols(Box<[Var]>),
    SliceCols(Var, usize),
    WeightedSum(Var, Box<[Var]>),
    Sum(Var),
    CrossEntropy(Var, Box<[u8]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), g))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension {
                op: "div",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x / y)
            .collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Div(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let g = self.needs(a);
        self.push(value, Op::Scale(a, c), g)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let g = self.needs(a);
        self.push(value, Op::AddScalar(a), g)
    }

    /// `a (m×n) + b (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let n = av.cols();
        let mut value = av.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % n];
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::AddRow(a, b), g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let g = self.needs(a);
        self.push(value, Op::Transpose(a), g)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = self.value(a).softmax(axis);
        let g = self.needs(a);
        self.push(value, Op::Softmax(a, axis), g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let g = self.needs(a);
        self.push(value, Op::LeakyRelu(a, slope), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.into()), g))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, width)?;
        let g = self.needs(a);
        Ok(self.push(value, Op::SliceCols(a, start), g))
    }

    /// `Σ_k w[k] · mats[k]` with `w` a `1 × K` row vector.
    pub fn weighted_sum(&mut self, w: Var, mats: &[Var]) -> Result<Var> {
        let wv = self.value(w);
        if wv.rows() != 1 || wv.cols() != mats.len() || mats.is_empty() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: wv.shape(),
                right: [1, mats.len()],
            });
        }
        let shape = self.value(mats[0]).shape();
        let mut value = Tensor::zeros(shape[0], shape[1]);
        for (k, &m) in mats.iter().enumerate() {
            let mv = self.value(m);
            if mv.shape() != shape {
                return Err(Error::Dimension {
                    op: "weighted_sum",
                    left: shape,
                    right: mv.shape(),
                });
            }
            let wk = wv.data()[k];
            for (o, x) in value.data_mut().iter_mut().zip(mv.data()) {
                *o += wk * x;
            }
        }
        let g = self.needs(w) || mats.iter().any(|&m| self.needs(m));
        Ok(self.push(value, Op::WeightedSum(w, mats.into()), g))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.needs(a);
        self.push(value, Op::Sum(a), g)
    }

    /// Mean over rows of `−ln softmax(logits)[row, label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: lv.shape(),
                right: [labels.len(), 1],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&c| usize::from(c) >= lv.cols()) {
            return Err(Error::validation(
                "label",
                alloc::format!("class {bad} outside 0..{}", lv.cols()),
            ));
        }
        let mut total = 0.0;
        for (r, &c) in labels.iter().enumerate() {
            total += -log_softmax_at(lv.row(r), usize::from(c));
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        let g = self.needs(logits);
        Ok(self.push(value, Op::CrossEntropy(logits, labels.into()), g))
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != [1, 1] {
            return Err(Error::Dimension {
                op: "backward",
                left: self.value(output).shape(),
                right: [1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.mul(self.value(*b))?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.mul(self.value(*a))?);
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.needs(*a) {
                        let ga = g.zip_div(bv);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        // d(a/b)/db = −(a/b)/b
                        let q = node.value.zip_div(bv);
                        accumulate(&mut grads, *b, g.mul(&q)?.scale(-1.0));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, Tensor::row_vector(&g.col_sums()));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Softmax(a, axis) => {
                    let ga = softmax_backward(&node.value, &g, *axis);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts.iter() {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.slice_cols(start, w)?);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for c in 0..w {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::WeightedSum(w, mats) => {
                    let wv = self.value(*w);
                    if self.needs(*w) {
                        let gw: Vec<f64> = mats
                            .iter()
                            .map(|&m| {
                                g.data()
                                    .iter()
                                    .zip(self.value(m).data())
                                    .map(|(x, y)| x * y)
                                    .sum()
                            })
                            .collect();
                        accumulate(&mut grads, *w, Tensor::row_vector(&gw));
                    }
                    for (k, &m) in mats.iter().enumerate() {
                        if self.needs(m) {
                            accumulate(&mut grads, m, g.scale(wv.data()[k]));
                        }
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let av = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(av.rows(), av.cols(), s));
                }
                Op::CrossEntropy(logits, labels) => {
                    let s = g.data()[0] / labels.len() as f64;
                    let mut probs = self.value(*logits).softmax(Axis::Row);
                    let n = probs.cols();
                    for (r, &c) in labels.iter().enumerate() {
                        probs.data_mut()[r * n + usize::from(c)] -= 1.0;
                    }
                    accumulate(&mut grads, *logits, probs.scale(s));
                }
            }
        }

        Ok(Gradients { nodes: grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            existing
                .add_assign(&g)
                .expect("gradient shape matches its node by construction");
        }
        slot @ None => *slot = Some(g),
    }
}

fn log_softmax_at(row: &[f64], c: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f64>());
    row[c] - lse
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: Axis) -> Tensor {
    match axis {
        Axis::Row => {
            let n = y.cols();
            let mut out = Tensor::zeros(y.rows(), n);
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = g.row(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for c in 0..n {
                    out.data_mut()[r * n + c] = yr[c] * (gr[c] - dot);
                }
            }
            out
        }
        Axis::Col => softmax_backward(&y.transpose(), &g.transpose(), Axis::Row).transpose(),
    }
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to node `v`, `None` if the loss does not depend
    /// on it (or `v` is a constant).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for the parameter leaves bound to `vars`, zero-filled for
    /// leaves the loss never touched. `vars[i]` must have `shapes[i]`.
    pub fn params(&self, vars: &[Var], shapes: &[[usize; 2]]) -> Vec<Tensor> {
        vars.iter()
            .zip(shapes)
            .map(|(&v, &[r, c])| self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect()
    }
}
