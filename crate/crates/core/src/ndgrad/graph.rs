//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for the chain rule. A graph is meant to live for
//! one forward/backward pass.

use super::gemm::{gemm, MatRef};
use super::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
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
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_batched: bool,
    },
    Transpose {
        a: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias {
        a: Var,
        bias: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Softplus(Var),
    LogClamped {
        a: Var,
        floor: f64,
    },
    Digamma(Var),
    Lgamma(Var),
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient; `None` when no path from the last root reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
    }

    /// Matrix product. Accepts `[m,k]×[k,n]`, `[B,m,k]×[k,n]` and
    /// `[B,m,k]×[B,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, b_batched) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], false),
            (3, 2) => (1, sa[0] * sa[1], sa[2], false),
            (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], true),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul: unsupported shapes {sa:?} × {sb:?}"
                )))
            }
        };
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions differ in {sa:?} × {sb:?}"
            )));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for bi in 0..batch {
                let a_mat = MatRef::new(&ad[bi * m * k..(bi + 1) * m * k], m, k);
                let b_mat = if b_batched {
                    MatRef::new(&bd[bi * k * n..(bi + 1) * k * n], k, n)
                } else {
                    MatRef::new(bd, k, n)
                };
                gemm(a_mat, b_mat, &mut out[bi * m * n..(bi + 1) * m * n], 0.0);
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            },
            &[a, b],
        ))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (batch, rows, cols) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Error::Dimension(format!("transpose: rank {} tensor", s.len()))),
        };
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..batch {
            let off = bi * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[off + c * rows + r] = src[off + r * cols + c];
                }
            }
        }
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 1, l - 2);
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(
            value,
            Op::Transpose {
                a,
                batch,
                rows,
                cols,
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.derived(value, Op::Reshape(a), &[a]))
    }

    fn zip_with(&mut self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("div", a, b, |x, y| x / y)?;
        Ok(self.derived(v, Op::Div(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every length-`n` row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.value(a).last_dim();
        let bt = self.value(bias);
        if bt.rank() != 1 || bt.len() != n {
            return Err(Error::Dimension(format!(
                "add_bias: bias {:?} does not match last axis {n}",
                bt.shape()
            )));
        }
        let bd = bt.data().to_vec();
        let t = self.value(a);
        let data = t
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bd).map(|(x, b)| x + b))
            .collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.derived(v, Op::AddBias { a, bias }, &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| c * x);
        self.derived(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x + c);
        self.derived(v, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.derived(v, Op::Square(a), &[a])
    }

    /// ln(1 + eˣ), returning `x` itself above 30.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.map(a, softplus_scalar);
        self.derived(v, Op::Softplus(a), &[a])
    }

    /// ln(max(x, floor)); the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let v = self.map(a, |x| x.max(floor).ln());
        self.derived(v, Op::LogClamped { a, floor }, &[a])
    }

    fn check_positive(&self, name: &str, a: Var) -> Result<()> {
        if let Some(bad) = self.value(a).data().iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("{name} requires finite x > 0, got {bad}")));
        }
        Ok(())
    }

    pub fn digamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive("digamma", a)?;
        let v = self.map(a, digamma_unchecked);
        Ok(self.derived(v, Op::Digamma(a), &[a]))
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive("lgamma", a)?;
        let v = self.map(a, lgamma_unchecked);
        Ok(self.derived(v, Op::Lgamma(a), &[a]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax: axis {axis} out of range for {shape:?}"
            )));
        }
        if t.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.derived(
            v,
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.derived(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums out the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(Error::Dimension("sum_last on a scalar".into()));
        }
        let n = t.last_dim();
        let data: Vec<f64> = if n == 0 {
            vec![0.0; t.shape()[..t.rank() - 1].iter().product()]
        } else {
            t.data().chunks(n).map(|c| c.iter().sum()).collect()
        };
        let v = Tensor::new(t.shape()[..t.rank() - 1].to_vec(), data)?;
        Ok(self.derived(v, Op::SumLast(a), &[a]))
    }

    /// Reverse sweep from a scalar `root`, accumulating into every
    /// differentiable ancestor.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[root.0] {
            Some(g) => g[0] += 1.0,
            slot @ None => *slot = Some(vec![1.0]),
        }
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[i].value;

        // Gradient buffer of a parent, or None when it takes no gradient.
        macro_rules! slot {
            ($v:expr) => {{
                let p: Var = $v;
                if nodes[p.0].requires_grad {
                    let n = nodes[p.0].value.len();
                    Some(grads[p.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }
        let val = |v: Var| nodes[v.0].value.data();

        match nodes[i].op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            } => {
                let (ad, bd) = (val(a), val(b));
                if let Some(ga) = slot!(a) {
                    for bi in 0..batch {
                        let gm = MatRef::new(&g[bi * m * n..(bi + 1) * m * n], m, n);
                        let bm = if b_batched {
                            MatRef::new(&bd[bi * k * n..(bi + 1) * k * n], k, n)
                        } else {
                            MatRef::new(bd, k, n)
                        };
                        gemm(gm, bm.t(), &mut ga[bi * m * k..(bi + 1) * m * k], 1.0);
                    }
                }
                if let Some(gb) = slot!(b) {
                    for bi in 0..batch {
                        let am = MatRef::new(&ad[bi * m * k..(bi + 1) * m * k], m, k);
                        let gm = MatRef::new(&g[bi * m * n..(bi + 1) * m * n], m, n);
                        let dst = if b_batched {
                            &mut gb[bi * k * n..(bi + 1) * k * n]
                        } else {
                            &mut gb[..]
                        };
                        gemm(am.t(), gm, dst, 1.0);
                    }
                }
            }
            Op::Transpose {
                a,
                batch,
                rows,
                cols,
            } => {
                if let Some(ga) = slot!(a) {
                    for bi in 0..batch {
                        let off = bi * rows * cols;
                        for r in 0..rows {
                            for c in 0..cols {
                                ga[off + r * cols + c] += g[off + c * rows + r];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) | Op::AddScalar(a) => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gb) = slot!(b) {
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gb) = slot!(b) {
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                if let Some(gb) = slot!(b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * ad[j];
                    }
                }
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(a), val(b));
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] / bd[j];
                    }
                }
                if let Some(gb) = slot!(b) {
                    for j in 0..g.len() {
                        gb[j] -= g[j] * ad[j] / (bd[j] * bd[j]);
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gb) = slot!(bias) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
                }
            }
            Op::Square(a) => {
                let ad = val(a);
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += 2.0 * ad[j] * g[j];
                    }
                }
            }
            Op::Softplus(a) => {
                let ad = val(a);
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * sigmoid(ad[j]);
                    }
                }
            }
            Op::LogClamped { a, floor } => {
                let ad = val(a);
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        if ad[j] > floor {
                            ga[j] += g[j] / ad[j];
                        }
                    }
                }
            }
            Op::Digamma(a) => {
                let ad = val(a);
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * trigamma_unchecked(ad[j]);
                    }
                }
            }
            Op::Lgamma(a) => {
                let ad = val(a);
                if let Some(ga) = slot!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * digamma_unchecked(ad[j]);
                    }
                }
            }
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                let y = out.data();
                if let Some(ga) = slot!(a) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + ii;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot!(a) {
                    let d = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += d);
                }
            }
            Op::SumLast(a) => {
                if let Some(ga) = slot!(a) {
                    let n = nodes[a.0].value.last_dim();
                    if n > 0 {
                        for (row, d) in ga.chunks_mut(n).zip(g) {
                            row.iter_mut().for_each(|x| *x += d);
                        }
                    }
                }
            }
        }
    }
}
