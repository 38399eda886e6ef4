//! Reverse-mode differentiation over the small op set the models need.
//!
//! Model code is written once against [`Ops`]. [`Eval`] runs it as plain
//! forward arithmetic with no bookkeeping; [`Tape`] records every op so
//! [`Tape::backward`] can return gradients for the leaves.

use std::borrow::Cow;

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub trait Ops<'a> {
    type T;

    fn value<'b>(&'b self, t: &'b Self::T) -> &'b Matrix;
    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn spmm(&mut self, adj: &'a CsrMatrix, b: &Self::T) -> Result<Self::T>;
    /// Adds a `1×C` row vector to every row.
    fn add_bias(&mut self, a: &Self::T, bias: &Self::T) -> Result<Self::T>;
    fn relu(&mut self, a: &Self::T) -> Self::T;
    fn log_softmax_rows(&mut self, a: &Self::T) -> Self::T;
    /// Mean negative log-likelihood over the listed rows; returns a `1×1` value.
    fn nll_masked(&mut self, logp: &Self::T, labels: &[usize], rows: &[usize]) -> Result<Self::T>;
    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
}

fn add_bias_value(a: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(Error::Shape {
            op: "add_bias",
            lhs: a.shape(),
            rhs: bias.shape(),
        });
    }
    let mut out = a.clone();
    let b = bias.row(0);
    for i in 0..out.rows() {
        for (o, &v) in out.row_mut(i).iter_mut().zip(b) {
            *o += v;
        }
    }
    Ok(out)
}

fn relu_value(a: &Matrix) -> Matrix {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn log_softmax_value(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

fn nll_value(logp: &Matrix, labels: &[usize], rows: &[usize]) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::EmptyMask("nll_masked"));
    }
    if labels.len() != logp.rows() {
        return Err(Error::Shape {
            op: "nll_masked",
            lhs: logp.shape(),
            rhs: (labels.len(), 1),
        });
    }
    let total: f64 = rows.iter().map(|&i| -logp[(i, labels[i])]).sum();
    Ok(Matrix::filled(1, 1, total / rows.len() as f64))
}

/// Forward-only evaluation; values borrowed where possible.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl<'a> Ops<'a> for Eval {
    type T = Cow<'a, Matrix>;

    fn value<'b>(&'b self, t: &'b Self::T) -> &'b Matrix {
        t
    }

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        Ok(Cow::Owned(a.matmul(b)?))
    }

    fn spmm(&mut self, adj: &'a CsrMatrix, b: &Self::T) -> Result<Self::T> {
        Ok(Cow::Owned(adj.matmul_dense(b)?))
    }

    fn add_bias(&mut self, a: &Self::T, bias: &Self::T) -> Result<Self::T> {
        Ok(Cow::Owned(add_bias_value(a, bias)?))
    }

    fn relu(&mut self, a: &Self::T) -> Self::T {
        Cow::Owned(relu_value(a))
    }

    fn log_softmax_rows(&mut self, a: &Self::T) -> Self::T {
        Cow::Owned(log_softmax_value(a))
    }

    fn nll_masked(&mut self, logp: &Self::T, labels: &[usize], rows: &[usize]) -> Result<Self::T> {
        Ok(Cow::Owned(nll_value(logp, labels, rows)?))
    }

    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T {
        Cow::Owned(a.scale(s))
    }

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        Ok(Cow::Owned(a.add(b)?))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    MatMul(usize, usize),
    SpMM(&'a CsrMatrix, usize),
    AddBias(usize, usize),
    Relu(usize),
    LogSoftmax(usize),
    Nll {
        input: usize,
        targets: Vec<(usize, usize)>,
        count: usize,
    },
    Scale(usize, f64),
    Add(usize, usize),
}

#[derive(Debug)]
struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    requires_grad: bool,
}

/// Records ops in creation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op<'a>) -> Var {
        let requires_grad = self.inputs(&op).iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op<'a>) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::SpMM(_, a) | Op::Relu(a) | Op::LogSoftmax(a) | Op::Scale(a, _) => vec![*a],
            Op::Nll { input, .. } => vec![*input],
        }
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
        if !self.wants(idx) {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradients of the scalar `output` with respect to every recorded value.
    /// Fan-out accumulates additively.
    pub fn backward(&self, output: Var) -> Gradients {
        let (r, c) = self.nodes[output.0].value.shape();
        self.backward_seeded(output, Matrix::filled(r, c, 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// to the leaves.
    pub fn backward_seeded(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.nodes[output.0].value.shape(), "seed shape");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let vb = &self.nodes[*b].value;
                        let ga = g.matmul_nt(vb).expect("shapes recorded forward");
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let va = &self.nodes[*a].value;
                        let gb = va.matmul_tn(&g).expect("shapes recorded forward");
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::SpMM(adj, b) => {
                    let gb = adj.matmul_dense_t(&g).expect("shapes recorded forward");
                    self.acc(&mut grads, *b, gb);
                }
                Op::AddBias(a, bias) => {
                    let mut gbias = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &v) in gbias.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    self.acc(&mut grads, *bias, gbias);
                    self.acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let va = &self.nodes[*a].value;
                    let ga = va.zip_with(&g, |x, gv| if x > 0.0 { gv } else { 0.0 });
                    self.acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let out = &node.value;
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s: f64 = g.row(i).iter().sum();
                        for (gv, &lp) in ga.row_mut(i).iter_mut().zip(out.row(i)) {
                            *gv -= lp.exp() * s;
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::Nll {
                    input,
                    targets,
                    count,
                } => {
                    let shape = self.nodes[*input].value.shape();
                    let mut ga = Matrix::zeros(shape.0, shape.1);
                    let w = -g[(0, 0)] / *count as f64;
                    for &(i, c) in targets {
                        ga[(i, c)] += w;
                    }
                    self.acc(&mut grads, *input, ga);
                }
                Op::Scale(a, s) => self.acc(&mut grads, *a, g.scale(*s)),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *b, g.clone());
                    self.acc(&mut grads, *a, g);
                }
            }
        }
        Gradients { grads }
    }
}


pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl<'a> Ops<'a> for Tape<'a> {
    type T = Var;

    fn value<'b>(&'b self, t: &'b Var) -> &'b Matrix {
        self.get(*t)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).matmul(self.get(*b))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    fn spmm(&mut self, adj: &'a CsrMatrix, b: &Var) -> Result<Var> {
        let v = adj.matmul_dense(self.get(*b))?;
        Ok(self.push(v, Op::SpMM(adj, b.0)))
    }

    fn add_bias(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let v = add_bias_value(self.get(*a), self.get(*bias))?;
        Ok(self.push(v, Op::AddBias(a.0, bias.0)))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = relu_value(self.get(*a));
        self.push(v, Op::Relu(a.0))
    }

    fn log_softmax_rows(&mut self, a: &Var) -> Var {
        let v = log_softmax_value(self.get(*a));
        self.push(v, Op::LogSoftmax(a.0))
    }

    fn nll_masked(&mut self, logp: &Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
        let v = nll_value(self.get(*logp), labels, rows)?;
        let targets = rows.iter().map(|&i| (i, labels[i])).collect();
        Ok(self.push(
            v,
            Op::Nll {
                input: logp.0,
                targets,
                count: rows.len(),
            },
        ))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.get(*a).scale(s);
        self.push(v, Op::Scale(a.0, s))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).add(self.get(*b))?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }
}
