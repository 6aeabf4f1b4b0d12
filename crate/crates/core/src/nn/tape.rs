//! Reverse-mode tape.
//!
//! Every op appends a node holding its output. Activations are batch-major:
//! dense layers take `[batch, features]`, convolutions take NHWC
//! `[batch, height, width, channels]`. Dense weights are `[in, out]` and
//! convolution kernels `[3, 3, in, out]`.

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn relu_slope(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn abs_slope(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Linear { x: usize, w: usize, b: usize },
    Conv { x: usize, w: usize, b: usize, geom: ConvGeom, cols: Vec<f64> },
    Relu { x: usize, pinned: Option<Vec<f64>> },
    Dropout { x: usize, mask: Vec<f64> },
    Reshape(usize),
    Concat { a: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalar { x: usize, s: usize },
    Scale(usize, f64),
    Square(usize),
    Abs { x: usize, pinned: Option<Vec<f64>> },
    Exp(usize),
    Sum(usize),
    Mean(usize),
    Column { x: usize, j: usize },
    Gather { x: usize, rows: Vec<usize> },
    Scatter { x: usize, rows: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Slopes taken by every ReLU and abs op of one forward pass, in op order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KinkPattern(Vec<Vec<f64>>);

impl KinkPattern {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Default)]
enum Kinks {
    #[default]
    Free,
    Record(KinkPattern),
    Pin { pattern: KinkPattern, next: usize },
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    spent: bool,
    kinks: Kinks,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that remembers which side of the kink each ReLU and abs
    /// input fell on; see [`Tape::take_kink_pattern`].
    pub fn recording_kinks() -> Self {
        Self {
            kinks: Kinks::Record(KinkPattern::default()),
            ..Self::default()
        }
    }

    /// A tape whose ReLU and abs ops apply the slopes of `pattern` instead
    /// of the signs of their inputs. The ops then act linearly, so the
    /// graph is smooth around the point the pattern was recorded at and
    /// agrees with the unpinned graph wherever no input changes sign.
    /// Used for finite-difference checks.
    pub fn pinned_kinks(pattern: KinkPattern) -> Self {
        Self {
            kinks: Kinks::Pin { pattern, next: 0 },
            ..Self::default()
        }
    }

    /// The slopes recorded so far by a [`Tape::recording_kinks`] tape.
    pub fn take_kink_pattern(&mut self) -> KinkPattern {
        match &mut self.kinks {
            Kinks::Record(p) => std::mem::take(p),
            _ => KinkPattern::default(),
        }
    }

    /// Slope per element for a piecewise-linear op, from the input signs or
    /// the pinned pattern. `None` when the tape is free.
    fn kink_slopes(&mut self, x: Var, slope: fn(f64) -> f64) -> Result<Option<Vec<f64>>> {
        let n = self.nodes[x.0].value.len();
        match &mut self.kinks {
            Kinks::Free => Ok(None),
            Kinks::Record(p) => {
                let s: Vec<f64> = self.nodes[x.0].value.data().iter().map(|&v| slope(v)).collect();
                p.0.push(s.clone());
                Ok(Some(s))
            }
            Kinks::Pin { pattern, next } => {
                let s = pattern
                    .0
                    .get(*next)
                    .filter(|s| s.len() == n)
                    .ok_or_else(|| mismatch("pinned kink", &[*next, n], &[pattern.0.len()]))?
                    .clone();
                *next += 1;
                Ok(Some(s))
            }
        }
    }

    fn piecewise(&mut self, name: &'static str, x: Var, slope: fn(f64) -> f64, relu: bool) -> Result<Var> {
        let pinned = self.kink_slopes(x, slope)?;
        let t = &self.nodes[x.0].value;
        let data = match &pinned {
            Some(s) => t.data().iter().zip(s).map(|(v, k)| v * k).collect(),
            None => t.data().iter().map(|&v| v * slope(v)).collect(),
        };
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let op = if relu {
            Op::Relu { x: x.0, pinned }
        } else {
            Op::Abs { x: x.0, pinned }
        };
        self.push(name, value, op, &[x.0])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    fn data(&self, i: usize) -> &[f64] {
        self.nodes[i].value.data()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push("input", t, Op::Input, &[])
    }

    /// Places parameter `name` on the tape (once; later calls return the
    /// same node).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&(_, i)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(Var(i));
        }
        let value = store.get(name)?.clone();
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        let i = self.nodes.len() - 1;
        self.params.push((name.to_string(), i));
        Ok(Var(i))
    }

    /// `x · w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x.0), self.shape(w.0), self.shape(b.0));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(mismatch("linear", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(mismatch("linear bias", ws, bs));
        }
        let (batch, inp, out) = (xs[0], ws[0], ws[1]);
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.data(b.0));
        }
        kernels::gemm_nn(self.data(x.0), self.data(w.0), &mut y, batch, inp, out);
        let value = Tensor::new(vec![batch, out], y)?;
        self.push("linear", value, Op::Linear { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0])
    }

    /// 3×3 convolution with padding 1 on NHWC input.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x.0), self.shape(w.0), self.shape(b.0));
        if xs.len() != 4 || ws.len() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[3] || stride == 0 {
            return Err(mismatch("conv3x3", xs, ws));
        }
        if bs != [ws[3]] {
            return Err(mismatch("conv3x3 bias", ws, bs));
        }
        let geom = ConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            c: xs[3],
            stride,
        };
        let out = ws[3];
        let cols = kernels::im2col(self.data(x.0), &geom);
        let pixels = geom.out_pixels();
        let mut y = Vec::with_capacity(pixels * out);
        for _ in 0..pixels {
            y.extend_from_slice(self.data(b.0));
        }
        kernels::gemm_nn(&cols, self.data(w.0), &mut y, pixels, geom.patch(), out);
        let value = Tensor::new(vec![geom.batch, geom.out_h(), geom.out_w(), out], y)?;
        self.push(
            "conv3x3",
            value,
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
                cols,
            },
            &[x.0, w.0, b.0],
        )
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, value, op, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.piecewise("relu", x, relu_slope, true)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x.0))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.piecewise("abs", x, abs_slope, false)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x.0))
    }

    /// Inverted dropout: at train time each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; at eval
    /// time (or `p == 0`) the input passes through unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !train || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout probability {p} must be below 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = &self.nodes[x.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        self.push("dropout", value, Op::Dropout { x: x.0, mask }, &[x.0])
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.rows_cols();
        self.reshape(x, vec![rows, cols])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x.0), &[x.0])
    }

    /// Joins two `[batch, _]` matrices along the feature dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a.0), self.shape(b.0));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(mismatch("concat", sa, sb));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut y = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            y.extend_from_slice(&self.data(a.0)[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&self.data(b.0)[r * cb..(r + 1) * cb]);
        }
        let value = Tensor::matrix(rows, ca + cb, y)?;
        self.push("concat", value, Op::Concat { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, value, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(mismatch("mul_scalar", self.shape(x.0), self.shape(s.0)));
        }
        let k = self.nodes[s.0].value.item();
        let t = &self.nodes[x.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect())?;
        self.push("mul_scalar", value, Op::MulScalar { x: x.0, s: s.0 }, &[x.0, s.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x.0).iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x.0);
        let m = d.iter().sum::<f64>() / d.len().max(1) as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(x.0), &[x.0])
    }

    /// Column `j` of a `[batch, n]` matrix as `[batch, 1]`.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let s = self.shape(x.0);
        if s.len() != 2 || j >= s[1] {
            return Err(mismatch("column", s, &[j]));
        }
        let n = s[1];
        let col: Vec<f64> = self.data(x.0).chunks(n).map(|r| r[j]).collect();
        let value = Tensor::matrix(col.len(), 1, col)?;
        self.push("column", value, Op::Column { x: x.0, j }, &[x.0])
    }

    /// Rows `rows` of a `[batch, n]` matrix, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x.0);
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) {
            return Err(mismatch("gather_rows", s, &[rows.len()]));
        }
        let n = s[1];
        let mut y = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            y.extend_from_slice(&self.data(x.0)[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(rows.len(), n, y)?;
        self.push("gather_rows", value, Op::Gather { x: x.0, rows: rows.to_vec() }, &[x.0])
    }

    /// Places the rows of `x` at positions `rows` of a zero `[total, n]`
    /// matrix. Positions must be distinct.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], total: usize) -> Result<Var> {
        let s = self.shape(x.0);
        let mut seen = vec![false; total];
        let distinct = rows.iter().all(|&r| r < total && !std::mem::replace(&mut seen[r], true));
        if s.len() != 2 || s[0] != rows.len() || !distinct {
            return Err(mismatch("scatter_rows", s, &[rows.len(), total]));
        }
        let n = s[1];
        let mut y = vec![0.0; total * n];
        for (i, &r) in rows.iter().enumerate() {
            y[r * n..(r + 1) * n].copy_from_slice(&self.data(x.0)[i * n..(i + 1) * n]);
        }
        let value = Tensor::matrix(total, n, y)?;
        self.push("scatter_rows", value, Op::Scatter { x: x.0, rows: rows.to_vec() }, &[x.0])
    }

    /// Gradients of the scalar `loss` with respect to every parameter in
    /// `store`. Parameters that did not take part get exact zeros. A tape
    /// supports a single backward pass.
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Config("tape already used for a backward pass".into()));
        }
        let ls = self.shape(loss.0);
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param => grads[i] = Some(dy),
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let ws = self.shape(w);
                    let (inp, out) = (ws[0], ws[1]);
                    let batch = dy.len() / out;
                    if self.nodes[w].needs_grad {
                        let g = acc(&mut grads, w, inp * out);
                        kernels::gemm_tn(self.data(x), &dy, g, batch, inp, out);
                    }
                    if self.nodes[b].needs_grad {
                        let g = acc(&mut grads, b, out);
                        for row in dy.chunks(out) {
                            kernels::axpy(g, 1.0, row);
                        }
                    }
                    if self.nodes[x].needs_grad {
                        let g = acc(&mut grads, x, batch * inp);
                        kernels::gemm_nt(&dy, self.data(w), g, batch, out, inp);
                    }
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let (x, w, b) = (*x, *w, *b);
                    let out = self.shape(w)[3];
                    let pixels = geom.out_pixels();
                    let patch = geom.patch();
                    if self.nodes[w].needs_grad {
                        let g = acc(&mut grads, w, patch * out);
                        kernels::gemm_tn(cols, &dy, g, pixels, patch, out);
                    }
                    if self.nodes[b].needs_grad {
                        let g = acc(&mut grads, b, out);
                        for row in dy.chunks(out) {
                            kernels::axpy(g, 1.0, row);
                        }
                    }
                    if self.nodes[x].needs_grad {
                        let mut dcols = vec![0.0; pixels * patch];
                        kernels::gemm_nt(&dy, self.data(w), &mut dcols, pixels, out, patch);
                        let n = self.nodes[x].value.len();
                        kernels::col2im(&dcols, geom, acc(&mut grads, x, n));
                    }
                }
                Op::Relu { x, pinned: Some(s) } | Op::Abs { x, pinned: Some(s) } => {
                    let dx: Vec<f64> = dy.iter().zip(s).map(|(d, k)| d * k).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Relu { x, pinned: None } => {
                    let dx: Vec<f64> = dy.iter().zip(self.data(*x)).map(|(d, &v)| d * relu_slope(v)).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Dropout { x, mask } => {
                    let dx: Vec<f64> = dy.iter().zip(mask).map(|(d, m)| d * m).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Reshape(x) => add_into(&mut grads, *x, &dy),
                Op::Concat { a, b } => {
                    let (ca, cb) = (self.shape(*a)[1], self.shape(*b)[1]);
                    let mut da = Vec::with_capacity(dy.len() / (ca + cb) * ca);
                    let mut db = Vec::with_capacity(dy.len() / (ca + cb) * cb);
                    for row in dy.chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    add_into(&mut grads, *a, &da);
                    add_into(&mut grads, *b, &db);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &dy);
                    add_into(&mut grads, *b, &dy);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, &dy);
                    let neg: Vec<f64> = dy.iter().map(|d| -d).collect();
                    add_into(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = dy.iter().zip(self.data(*b)).map(|(d, v)| d * v).collect();
                    let db: Vec<f64> = dy.iter().zip(self.data(*a)).map(|(d, v)| d * v).collect();
                    add_into(&mut grads, *a, &da);
                    add_into(&mut grads, *b, &db);
                }
                Op::MulScalar { x, s } => {
                    let k = self.data(*s)[0];
                    let dx: Vec<f64> = dy.iter().map(|d| d * k).collect();
                    let ds = kernels::dot(&dy, self.data(*x));
                    add_into(&mut grads, *x, &dx);
                    add_into(&mut grads, *s, &[ds]);
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = dy.iter().map(|d| d * c).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Square(x) => {
                    let dx: Vec<f64> = dy.iter().zip(self.data(*x)).map(|(d, v)| 2.0 * v * d).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Abs { x, pinned: None } => {
                    let dx: Vec<f64> = dy.iter().zip(self.data(*x)).map(|(d, &v)| d * abs_slope(v)).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Exp(x) => {
                    let dx: Vec<f64> = dy.iter().zip(self.data(i)).map(|(d, y)| d * y).collect();
                    add_into(&mut grads, *x, &dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[*x].value.len();
                    add_into(&mut grads, *x, &vec![dy[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.nodes[*x].value.len();
                    add_into(&mut grads, *x, &vec![dy[0] / n as f64; n]);
                }
                Op::Column { x, j } => {
                    let n = self.shape(*x)[1];
                    let mut dx = vec![0.0; self.nodes[*x].value.len()];
                    for (r, d) in dy.iter().enumerate() {
                        dx[r * n + j] = *d;
                    }
                    add_into(&mut grads, *x, &dx);
                }
                Op::Gather { x, rows } => {
                    let n = self.shape(*x)[1];
                    let len = self.nodes[*x].value.len();
                    let g = acc(&mut grads, *x, len);
                    for (k, &r) in rows.iter().enumerate() {
                        kernels::axpy(&mut g[r * n..(r + 1) * n], 1.0, &dy[k * n..(k + 1) * n]);
                    }
                }
                Op::Scatter { x, rows } => {
                    let n = self.shape(*x)[1];
                    let mut dx = Vec::with_capacity(rows.len() * n);
                    for &r in rows {
                        dx.extend_from_slice(&dy[r * n..(r + 1) * n]);
                    }
                    add_into(&mut grads, *x, &dx);
                }
            }
        }

        let mut out = Gradients::zeros_like(store);
        for (name, i) in &self.params {
            if let Some(g) = grads[*i].take() {
                out.accumulate(name, &g)?;
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(grads: &mut [Option<Vec<f64>>], i: usize, d: &[f64]) {
    match &mut grads[i] {
        Some(g) => kernels::axpy(g, 1.0, d),
        slot => *slot = Some(d.to_vec()),
    }
}
