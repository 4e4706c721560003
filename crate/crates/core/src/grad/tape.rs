//! Wengert-list reverse-mode differentiation over dense `f64` arrays.
//!
//! Every operation appends a node holding its forward value. `backward`
//! replays the list in reverse insertion order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
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
    /// `w · x + b` with `w` stored row-major as `rows × cols`.
    Affine { w: Var, b: Var, x: Var },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `y + alpha · x`
    Axpy { y: Var, alpha: f64, x: Var },
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Norm(Var),
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for a single forward pass.
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

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is never tracked.
    pub fn constant(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(data, vec![n], Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn variable(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(data, vec![n], Op::Leaf, true)
    }

    /// A trainable leaf with an explicit shape.
    pub fn variable_shaped(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        check_shape(&shape, data.len())?;
        Ok(self.push(data, shape, Op::Leaf, true))
    }

    pub fn constant_shaped(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        check_shape(&shape, data.len())?;
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(vec![x])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn matrix_dims(&self, w: Var) -> Result<(usize, usize)> {
        match self.shape(w) {
            [rows, cols] => Ok((*rows, *cols)),
            s => Err(Error::Config(format!("expected a matrix, got shape {:?}", s))),
        }
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w)?;
        let xv = self.value(x);
        if xv.len() != cols {
            return Err(Error::Config(format!(
                "matvec: matrix has {} columns, vector has {} entries",
                cols,
                xv.len()
            )));
        }
        let wv = self.value(w);
        let out: Vec<f64> = wv.chunks_exact(cols).map(|row| dot(row, xv)).collect();
        let rg = self.needs(&[w, x]);
        Ok(self.push(out, vec![rows], Op::MatVec { w, x }, rg))
    }

    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w)?;
        let xv = self.value(x);
        let bv = self.value(b);
        if xv.len() != cols || bv.len() != rows {
            return Err(Error::Config(format!(
                "affine: weight {}x{}, bias {}, input {}",
                rows,
                cols,
                bv.len(),
                xv.len()
            )));
        }
        let wv = self.value(w);
        let out: Vec<f64> = wv
            .chunks_exact(cols)
            .zip(bv)
            .map(|(row, bias)| dot(row, xv) + bias)
            .collect();
        let rg = self.needs(&[w, b, x]);
        Ok(self.push(out, vec![rows], Op::Affine { w, b, x }, rg))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Config(format!("{what}: length {la} vs {lb}")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_len(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, shape, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `y + alpha · x`
    pub fn axpy(&mut self, y: Var, alpha: f64, x: Var) -> Result<Var> {
        self.binary(y, x, "axpy", |a, b| a + alpha * b, Op::Axpy { y, alpha, x })
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).iter().map(|x| alpha * x).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(out, shape, Op::Scale(a, alpha), rg)
    }

    /// Elementwise product with a constant array (masks).
    pub fn mul_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        if self.value(a).len() != c.len() {
            return Err(Error::Config(format!(
                "mul_const: length {} vs {}",
                self.value(a).len(),
                c.len()
            )));
        }
        let out = self.value(a).iter().zip(c).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(out, shape, Op::MulConst(a, c.to_vec()), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(out, shape, Op::Tanh(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x * x).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(out, shape, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.needs(&[a]);
        self.push(vec![s], vec![1], Op::Sum(a), rg)
    }

    /// Euclidean norm. The subgradient at the origin is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        let rg = self.needs(&[a]);
        self.push(vec![s], vec![1], Op::Norm(a), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|p| self.value(*p).len()).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let rg = self.needs(parts);
        self.push(out, vec![total], Op::Concat(parts.to_vec()), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got {} elements",
                self.value(output).len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, b, x } => {
                    self.matvec_backward(&mut grads, *w, *x, &g);
                    self.accumulate(&mut grads, *b, |acc| axpy_into(acc, 1.0, &g));
                }
                Op::MatVec { w, x } => self.matvec_backward(&mut grads, *w, *x, &g),
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |acc| axpy_into(acc, 1.0, &g));
                    self.accumulate(&mut grads, *b, |acc| axpy_into(acc, 1.0, &g));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |acc| axpy_into(acc, 1.0, &g));
                    self.accumulate(&mut grads, *b, |acc| axpy_into(acc, -1.0, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((o, gi), bi) in acc.iter_mut().zip(&g).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                    self.accumulate(&mut grads, *b, |acc| {
                        for ((o, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
                Op::Axpy { y, alpha, x } => {
                    self.accumulate(&mut grads, *y, |acc| axpy_into(acc, 1.0, &g));
                    self.accumulate(&mut grads, *x, |acc| axpy_into(acc, *alpha, &g));
                }
                Op::Scale(a, alpha) => {
                    self.accumulate(&mut grads, *a, |acc| axpy_into(acc, *alpha, &g));
                }
                Op::MulConst(a, c) => {
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((o, gi), ci) in acc.iter_mut().zip(&g).zip(c) {
                            *o += gi * ci;
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((o, gi), yi) in acc.iter_mut().zip(&g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    self.accumulate(&mut grads, *a, |acc| {
                        for ((o, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                            *o += 2.0 * gi * ai;
                        }
                    });
                }
                Op::Sum(a) => {
                    self.accumulate(&mut grads, *a, |acc| acc.iter_mut().for_each(|o| *o += g[0]));
                }
                Op::Norm(a) => {
                    let n = node.value[0];
                    if n > 0.0 {
                        let av = self.value(*a);
                        let s = g[0] / n;
                        self.accumulate(&mut grads, *a, |acc| axpy_into(acc, s, av));
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        let slice = &g[offset..offset + len];
                        self.accumulate(&mut grads, *p, |acc| axpy_into(acc, 1.0, slice));
                        offset += len;
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn matvec_backward(&self, grads: &mut [Option<Vec<f64>>], w: Var, x: Var, g: &[f64]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let cols = xv.len();
        self.accumulate(grads, w, |acc| {
            for (row, gi) in acc.chunks_exact_mut(cols).zip(g) {
                axpy_into(row, *gi, xv);
            }
        });
        self.accumulate(grads, x, |acc| {
            for (row, gi) in wv.chunks_exact(cols).zip(g) {
                axpy_into(acc, *gi, row);
            }
        });
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }
}

/// Result of a reverse sweep; unreachable and constant nodes read as zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when nothing flowed into it.
    pub fn to_vec(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }

    /// Concatenates the gradients of `vars` in order.
    pub fn flatten(&self, tape: &Tape, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::new();
        for v in vars {
            match self.get(*v) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(*v).len())),
            }
        }
        out
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().product::<usize>() != len {
        return Err(Error::Config(format!(
            "shape {:?} does not match {} elements",
            shape, len
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy_into(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, xi) in acc.iter_mut().zip(x) {
        *o += alpha * xi;
    }
}
