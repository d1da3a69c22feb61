//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its nodes. Leaves created
//! with [`Graph::leaf`] are tracked; constants are not. Calling
//! [`Graph::backward`] on a scalar node accumulates gradients into every
//! tracked leaf. Gradients accumulate across calls until [`Graph::zero_grad`].
//!
//! ```
//! use gnndm::numcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().item(), 6.0);
//! ```

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    L2Normalize(Var, Vec<f64>),
    CosineSim(Var, Var, Vec<(f64, f64)>),
    SliceCols(Var, usize, usize),
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Adds a tracked leaf; its gradient is populated by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary keeps shape");
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("binary keeps shape");
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    /// `[r, k] · [k, c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_raw(ta.data(), tb.data(), r, k, c);
        let value = Tensor::new(vec![r, c], data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (r, c) = ta.matrix_dims()?;
        let src = ta.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Transpose(a), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a length-`c` bias to every row of an `[r, c]` matrix. The only
    /// broadcast the graph supports.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (r, c) = ta.matrix_dims()?;
        if tb.rank() != 1 || tb.len() != c {
            return Err(mismatch("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (o, &bv) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(bias);
        Ok(self.push(value, Op::AddBias(a, bias), tracked))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("log of non-positive value"));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    /// Row sums of `[r, c]`, giving shape `[r]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (_, c) = ta.matrix_dims()?;
        let data = ta.data().chunks(c).map(|row| row.iter().sum()).collect();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::vector(data), Op::SumRows(a), tracked))
    }

    /// Divides every row by its Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (_, c) = ta.matrix_dims()?;
        let mut norms = Vec::with_capacity(ta.rows());
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(c) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNorm { op: "l2_normalize" });
            }
            norms.push(n);
            data.extend(row.iter().map(|x| x / n));
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::L2Normalize(a, norms), tracked))
    }

    /// Row-wise cosine similarity. Two vectors give a scalar; two `[r, c]`
    /// matrices give shape `[r]`.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_sim", a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (_, c) = ta.matrix_dims()?;
        let mut norms = Vec::with_capacity(ta.rows());
        let mut data = Vec::with_capacity(ta.rows());
        for (ra, rb) in ta.data().chunks(c).zip(tb.data().chunks(c)) {
            let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
                return Err(Error::ZeroNorm { op: "cosine_sim" });
            }
            let d: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            norms.push((na, nb));
            data.push(d / (na * nb));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::vector(data), Op::CosineSim(a, b, norms), tracked))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (r, c) = ta.matrix_dims()?;
        if start >= end || end > c {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{end} out of range for {c} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in ta.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let value = Tensor::new(vec![r, w], data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SliceCols(a, start, end), tracked))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (_, c) = ta.matrix_dims()?;
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::LogSoftmax(a), tracked))
    }

    /// Propagates d(loss)/d(node) back to every tracked leaf, adding into
    /// any gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                adj[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }

        for (id, a) in adj.into_iter().enumerate() {
            let Some(a) = a else { continue };
            let node = &mut self.nodes[id];
            if !(node.tracked && matches!(node.op, Op::Leaf)) {
                continue;
            }
            match &mut node.grad {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&a) {
                        *e += v;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), a)?);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let brow = &bv[p * c..(p + 1) * c];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = nodes[a.0].value.matrix_dims().expect("checked in forward");
                acc(*a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::AddBias(a, b) => {
                let c = nodes[b.0].value.len();
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| {
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |da| {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += k * gv;
                }
            }),
            Op::AddScalar(a) => acc(*a, &mut |da| add_into(da, g)),
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |da| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        if x > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |da| {
                for ((d, &gv), &y) in da.iter_mut().zip(g).zip(out) {
                    *d += gv * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |da| {
                for ((d, &gv), &y) in da.iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }),
            Op::LogSigmoid(a) => {
                let av = val(*a);
                acc(*a, &mut |da| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += gv * sigmoid(-x);
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |da| {
                for ((d, &gv), &y) in da.iter_mut().zip(g).zip(out) {
                    *d += gv * y;
                }
            }),
            Op::Log(a) => {
                let av = val(*a);
                acc(*a, &mut |da| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += gv / x;
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                acc(*a, &mut |da| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += 2.0 * x * gv;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = val(*a);
                acc(*a, &mut |da| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        if x >= *lo && x <= *hi {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |da| {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(a) => acc(*a, &mut |da| {
                let s = g[0] / da.len() as f64;
                for d in da.iter_mut() {
                    *d += s;
                }
            }),
            Op::SumRows(a) => {
                let c = nodes[a.0].value.cols();
                acc(*a, &mut |da| {
                    for (row, &gv) in da.chunks_mut(c).zip(g) {
                        for d in row {
                            *d += gv;
                        }
                    }
                });
            }
            Op::L2Normalize(a, norms) => {
                let c = nodes[a.0].value.cols();
                acc(*a, &mut |da| {
                    for (i, drow) in da.chunks_mut(c).enumerate() {
                        let y = &out[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let yg: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((d, &yv), &gv) in drow.iter_mut().zip(y).zip(gr) {
                            *d += (gv - yv * yg) / norms[i];
                        }
                    }
                });
            }
            Op::CosineSim(a, b, norms) => {
                let c = nodes[a.0].value.cols();
                let (av, bv) = (val(*a), val(*b));
                let side = |x: &[f64], y: &[f64], first: bool, dx: &mut [f64]| {
                    for (i, drow) in dx.chunks_mut(c).enumerate() {
                        let (na, nb) = norms[i];
                        let (nx, ny) = if first { (na, nb) } else { (nb, na) };
                        let xr = &x[i * c..(i + 1) * c];
                        let yr = &y[i * c..(i + 1) * c];
                        let cs = out[i];
                        for ((d, &xv), &yv) in drow.iter_mut().zip(xr).zip(yr) {
                            *d += g[i] * (yv / (nx * ny) - cs * xv / (nx * nx));
                        }
                    }
                };
                acc(*a, &mut |da| side(av, bv, true, da));
                acc(*b, &mut |db| side(bv, av, false, db));
            }
            Op::SliceCols(a, start, end) => {
                let c = nodes[a.0].value.cols();
                let w = end - start;
                acc(*a, &mut |da| {
                    for (i, drow) in da.chunks_mut(c).enumerate() {
                        add_into(&mut drow[*start..*end], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = nodes[a.0].value.cols();
                acc(*a, &mut |da| {
                    for (i, drow) in da.chunks_mut(c).enumerate() {
                        let y = &out[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let gs: f64 = gr.iter().sum();
                        for ((d, &yv), &gv) in drow.iter_mut().zip(y).zip(gr) {
                            *d += gv - yv.exp() * gs;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
