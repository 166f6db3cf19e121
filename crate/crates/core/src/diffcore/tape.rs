//! Reverse-mode gradient tape over row-batched tensors.
//!
//! Every operation evaluates eagerly and records its inputs on the tape.
//! [`Tape::backward`] walks the records in reverse and accumulates exact
//! gradients. Rows of a matrix are independent samples, so a whole minibatch
//! of sequences runs through one tape.

use std::cell::{Ref, RefCell};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5; // ln(2π)

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Affine { x: usize, w: usize, b: Option<usize> },
    ConcatCols(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SelectRows { parts: Vec<usize>, idx: Vec<usize> },
    GatherRows { a: usize, idx: Vec<usize> },
    Sum(usize),
    RowSum(usize),
    Softmax(usize),
    LogSoftmax(usize),
    GaussLogPdf { y: usize, mu: usize, logvar: usize },
    GaussKl { mq: usize, lq: usize, mp: usize, lp: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph. Single-use, confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, &*self.value())
    }
}

/// Gradients of one scalar loss with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an input value (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    fn val(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Exact reverse-mode gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accum(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::zeros(t.shape())
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let v = |i: usize| &nodes[i].value;
    let gd = g.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::AddConst(a) => accum(grads, *a, g.clone()),
        Op::Add(a, b) => {
            accum(grads, *a, g.clone());
            accum(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accum(grads, *a, g.clone());
            accum(grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (v(*a), v(*b));
            let ga = elementwise(g, bv, |g, b| g * b);
            let gb = elementwise(g, av, |g, a| g * a);
            accum(grads, *a, ga);
            accum(grads, *b, gb);
        }
        Op::AddRow(a, b) => {
            accum(grads, *a, g.clone());
            let cols = g.cols();
            let mut gb = zeros_like(v(*b));
            for r in 0..g.rows() {
                for (acc, x) in gb.data_mut().iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                    *acc += x;
                }
            }
            accum(grads, *b, gb);
        }
        Op::MulCol(a, w) => {
            let (av, wv) = (v(*a), v(*w));
            let cols = av.cols();
            let mut ga = zeros_like(av);
            let mut gw = zeros_like(wv);
            for r in 0..av.rows() {
                let wr = wv.data()[r];
                let row = &av.data()[r * cols..(r + 1) * cols];
                let grow = &gd[r * cols..(r + 1) * cols];
                let mut s = 0.0;
                for c in 0..cols {
                    ga.data_mut()[r * cols + c] = grow[c] * wr;
                    s += grow[c] * row[c];
                }
                gw.data_mut()[r] = s;
            }
            accum(grads, *a, ga);
            accum(grads, *w, gw);
        }
        Op::Scale(a, c) => accum(grads, *a, g.map(|x| x * c)),
        Op::Tanh(a) => accum(grads, *a, elementwise(g, out, |g, y| g * (1.0 - y * y))),
        Op::Sigmoid(a) => accum(grads, *a, elementwise(g, out, |g, y| g * y * (1.0 - y))),
        Op::Exp(a) => accum(grads, *a, elementwise(g, out, |g, y| g * y)),
        Op::Ln(a) => accum(grads, *a, elementwise(g, v(*a), |g, x| g / x)),
        Op::Square(a) => accum(grads, *a, elementwise(g, v(*a), |g, x| 2.0 * g * x)),
        Op::Clamp(a, lo, hi) => {
            let ga = elementwise(g, v(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
            accum(grads, *a, ga);
        }
        Op::Affine { x, w, b } => {
            let (xv, wv) = (v(*x), v(*w));
            let (rows, inp, outd) = (xv.rows(), xv.cols(), wv.rows());
            let mut gx = zeros_like(xv);
            let mut gw = zeros_like(wv);
            {
                let gxd = gx.data_mut();
                let gwd = gw.data_mut();
                let (xd, wd) = (xv.data(), wv.data());
                for r in 0..rows {
                    let xr = &xd[r * inp..(r + 1) * inp];
                    let gxr = &mut gxd[r * inp..(r + 1) * inp];
                    for o in 0..outd {
                        let go = gd[r * outd + o];
                        if go == 0.0 {
                            continue;
                        }
                        let wrow = &wd[o * inp..(o + 1) * inp];
                        let gwrow = &mut gwd[o * inp..(o + 1) * inp];
                        for i in 0..inp {
                            gxr[i] += go * wrow[i];
                            gwrow[i] += go * xr[i];
                        }
                    }
                }
            }
            accum(grads, *x, gx);
            accum(grads, *w, gw);
            if let Some(b) = b {
                let mut gb = zeros_like(v(*b));
                for r in 0..rows {
                    for o in 0..outd {
                        gb.data_mut()[o] += gd[r * outd + o];
                    }
                }
                accum(grads, *b, gb);
            }
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pc = v(p).cols();
                let mut gp = zeros_like(v(p));
                for r in 0..rows {
                    gp.row_mut(r).copy_from_slice(&gd[r * total + offset..r * total + offset + pc]);
                }
                offset += pc;
                accum(grads, p, gp);
            }
        }
        Op::SliceCols { a, start } => {
            let av = v(*a);
            let (rows, ac, len) = (av.rows(), av.cols(), g.cols());
            let mut ga = zeros_like(av);
            for r in 0..rows {
                ga.data_mut()[r * ac + start..r * ac + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
            }
            accum(grads, *a, ga);
        }
        Op::SelectRows { parts, idx } => {
            let cols = g.cols();
            let mut per: Vec<Option<Tensor>> = parts.iter().map(|_| None).collect();
            for (r, &k) in idx.iter().enumerate() {
                let gp = per[k].get_or_insert_with(|| zeros_like(v(parts[k])));
                gp.row_mut(r).copy_from_slice(&gd[r * cols..(r + 1) * cols]);
            }
            for (k, gp) in per.into_iter().enumerate() {
                if let Some(gp) = gp {
                    accum(grads, parts[k], gp);
                }
            }
        }
        Op::GatherRows { a, idx } => {
            let cols = g.cols();
            let mut ga = zeros_like(v(*a));
            for (r, &k) in idx.iter().enumerate() {
                for (acc, x) in ga.row_mut(k).iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                    *acc += x;
                }
            }
            accum(grads, *a, ga);
        }
        Op::Sum(a) => accum(grads, *a, Tensor::full(v(*a).shape(), gd[0])),
        Op::RowSum(a) => {
            let av = v(*a);
            let mut ga = zeros_like(av);
            for r in 0..av.rows() {
                ga.row_mut(r).fill(gd[r]);
            }
            accum(grads, *a, ga);
        }
        Op::Softmax(a) => {
            let cols = out.cols();
            let mut ga = zeros_like(out);
            for r in 0..out.rows() {
                let s = out.row(r);
                let gr = &gd[r * cols..(r + 1) * cols];
                let dot: f64 = s.iter().zip(gr).map(|(s, g)| s * g).sum();
                for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                    *o = s[c] * (gr[c] - dot);
                }
            }
            accum(grads, *a, ga);
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let mut ga = zeros_like(out);
            for r in 0..out.rows() {
                let ls = out.row(r);
                let gr = &gd[r * cols..(r + 1) * cols];
                let gsum: f64 = gr.iter().sum();
                for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                    *o = gr[c] - ls[c].exp() * gsum;
                }
            }
            accum(grads, *a, ga);
        }
        Op::GaussLogPdf { y, mu, logvar } => {
            let (yv, mv, lv) = (v(*y), v(*mu), v(*logvar));
            let cols = yv.cols();
            let mut gy = zeros_like(yv);
            let mut gm = zeros_like(mv);
            let mut gl = zeros_like(lv);
            for r in 0..yv.rows() {
                let gr = gd[r];
                for c in 0..cols {
                    let i = r * cols + c;
                    let prec = (-lv.data()[i]).exp();
                    let diff = yv.data()[i] - mv.data()[i];
                    gm.data_mut()[i] = gr * diff * prec;
                    gy.data_mut()[i] = -gr * diff * prec;
                    gl.data_mut()[i] = -0.5 * gr * (1.0 - diff * diff * prec);
                }
            }
            accum(grads, *y, gy);
            accum(grads, *mu, gm);
            accum(grads, *logvar, gl);
        }
        Op::GaussKl { mq, lq, mp, lp } => {
            let (mqv, lqv, mpv, lpv) = (v(*mq), v(*lq), v(*mp), v(*lp));
            let cols = mqv.cols();
            let mut gmq = zeros_like(mqv);
            let mut glq = zeros_like(lqv);
            let mut gmp = zeros_like(mpv);
            let mut glp = zeros_like(lpv);
            for r in 0..mqv.rows() {
                let gr = gd[r];
                for c in 0..cols {
                    let i = r * cols + c;
                    let prec_p = (-lpv.data()[i]).exp();
                    let diff = mqv.data()[i] - mpv.data()[i];
                    let var_q = lqv.data()[i].exp();
                    gmq.data_mut()[i] = gr * diff * prec_p;
                    gmp.data_mut()[i] = -gr * diff * prec_p;
                    glq.data_mut()[i] = 0.5 * gr * (var_q * prec_p - 1.0);
                    glp.data_mut()[i] = 0.5 * gr * (1.0 - (var_q + diff * diff) * prec_p);
                }
            }
            accum(grads, *mq, gmq);
            accum(grads, *lq, glq);
            accum(grads, *mp, gmp);
            accum(grads, *lp, glp);
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn as_matrix_shape(t: &Tensor, cols: usize) -> Vec<usize> {
    if t.rank() <= 1 {
        vec![cols]
    } else {
        vec![t.rows(), cols]
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op)
    }

    fn binary_same(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value(), other.value());
            if !a.same_shape(&b) {
                return Err(Error::dim(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            elementwise(&a, &b, f)
        };
        Ok(self.tape.push(out, op))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds the vector `row` to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value(), row.value());
            if b.len() != a.cols() {
                return Err(Error::dim("add_row", format!("{:?} + row {:?}", a.shape(), b.shape())));
            }
            let cols = a.cols();
            let mut out = a.clone();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += b.data()[i % cols];
            }
            out
        };
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id)))
    }

    /// Scales row `r` of `self` by `weights[r]`.
    pub fn mul_col(self, weights: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, w) = (self.value(), weights.value());
            if w.len() != a.rows() {
                return Err(Error::dim("mul_col", format!("{:?} * col {:?}", a.shape(), w.shape())));
            }
            let cols = a.cols();
            let mut out = a.clone();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o *= w.data()[i / cols];
            }
            out
        };
        Ok(self.tape.push(out, Op::MulCol(self.id, weights.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |x| x + c)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `x·Wᵀ + b` for each row `x` of `self`, with `W` of shape `out × in`.
    pub fn affine(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let out = {
            let (x, w) = (self.value(), weight.value());
            if w.rank() != 2 || w.cols() != x.cols() {
                return Err(Error::dim(
                    "affine",
                    format!("input {:?} incompatible with weight {:?}", x.shape(), w.shape()),
                ));
            }
            let (rows, inp, outd) = (x.rows(), x.cols(), w.rows());
            let mut data = vec![0.0; rows * outd];
            let bias_val = bias.map(|b| b.value());
            if let Some(b) = &bias_val {
                if b.len() != outd {
                    return Err(Error::dim("affine", format!("bias {:?} for output width {outd}", b.shape())));
                }
            }
            let (xd, wd) = (x.data(), w.data());
            for r in 0..rows {
                let xr = &xd[r * inp..(r + 1) * inp];
                for o in 0..outd {
                    let wrow = &wd[o * inp..(o + 1) * inp];
                    let mut s = bias_val.as_ref().map_or(0.0, |b| b.data()[o]);
                    for i in 0..inp {
                        s += wrow[i] * xr[i];
                    }
                    data[r * outd + o] = s;
                }
            }
            Tensor::new(as_matrix_shape(&x, outd), data)?
        };
        Ok(self.tape.push(out, Op::Affine { x: self.id, w: weight.id, b: bias.map(|b| b.id) }))
    }

    /// Column-wise concatenation; all parts must have the same row count.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts.first().ok_or_else(|| Error::dim("concat_cols", "no parts"))?.tape;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].rows();
            if vals.iter().any(|v| v.rows() != rows) {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(as_matrix_shape(&vals[0], total), data)?
        };
        Ok(tape.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if start + len > a.cols() {
                return Err(Error::dim("slice_cols", format!("[{start}, {}) of {} columns", start + len, a.cols())));
            }
            let mut data = Vec::with_capacity(a.rows() * len);
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row(r)[start..start + len]);
            }
            Tensor::new(as_matrix_shape(&a, len), data)?
        };
        Ok(self.tape.push(out, Op::SliceCols { a: self.id, start }))
    }

    /// Row `r` of the result is row `r` of `parts[idx[r]]`.
    pub fn select_rows(parts: &[Var<'t>], idx: &[usize]) -> Result<Var<'t>> {
        let tape = parts.first().ok_or_else(|| Error::dim("select_rows", "no parts"))?.tape;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let shape = vals[0].shape().to_vec();
            if vals.iter().any(|v| v.shape() != shape.as_slice()) {
                return Err(Error::dim("select_rows", "parts differ in shape"));
            }
            if idx.len() != vals[0].rows() {
                return Err(Error::dim("select_rows", format!("{} indices for {} rows", idx.len(), vals[0].rows())));
            }
            let mut data = Vec::with_capacity(vals[0].len());
            for (r, &k) in idx.iter().enumerate() {
                let part = vals.get(k).ok_or(Error::Index { what: "select_rows part", index: k, size: vals.len() })?;
                data.extend_from_slice(part.row(r));
            }
            Tensor::new(shape, data)?
        };
        Ok(tape.push(out, Op::SelectRows { parts: parts.iter().map(|p| p.id).collect(), idx: idx.to_vec() }))
    }

    /// Row `r` of the result is row `idx[r]` of `self`.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let mut data = Vec::with_capacity(idx.len() * a.cols());
            for &k in idx {
                if k >= a.rows() {
                    return Err(Error::Index { what: "gather_rows", index: k, size: a.rows() });
                }
                data.extend_from_slice(a.row(k));
            }
            Tensor::new(vec![idx.len(), a.cols()], data)?
        };
        Ok(self.tape.push(out, Op::GatherRows { a: self.id, idx: idx.to_vec() }))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Sum of each row, shaped `rows × 1`.
    pub fn row_sum(self) -> Var<'t> {
        let out = {
            let a = self.value();
            let data: Vec<f64> = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
            Tensor::new(vec![a.rows(), 1], data).expect("rows x 1")
        };
        self.tape.push(out, Op::RowSum(self.id))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if a.cols() == 0 {
                return Err(Error::dim("softmax", "empty vector"));
            }
            let mut out = a.clone();
            for r in 0..a.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        };
        Ok(self.tape.push(out, Op::Softmax(self.id)))
    }

    pub fn log_softmax(self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if a.cols() == 0 {
                return Err(Error::dim("log_softmax", "empty vector"));
            }
            let mut out = a.clone();
            for r in 0..a.rows() {
                log_softmax_in_place(out.row_mut(r));
            }
            out
        };
        Ok(self.tape.push(out, Op::LogSoftmax(self.id)))
    }

    /// Row-wise diagonal-Gaussian log density, shaped `rows × 1`.
    pub fn gaussian_log_pdf(y: Var<'t>, mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (yv, mv, lv) = (y.value(), mu.value(), logvar.value());
            if !yv.same_shape(&mv) || !yv.same_shape(&lv) {
                return Err(Error::dim(
                    "gaussian_log_pdf",
                    format!("y {:?}, mu {:?}, logvar {:?}", yv.shape(), mv.shape(), lv.shape()),
                ));
            }
            let cols = yv.cols();
            let data: Vec<f64> = (0..yv.rows())
                .map(|r| {
                    (r * cols..(r + 1) * cols)
                        .map(|i| {
                            let d = yv.data()[i] - mv.data()[i];
                            -0.5 * (LN_2PI + lv.data()[i] + d * d * (-lv.data()[i]).exp())
                        })
                        .sum()
                })
                .collect();
            Tensor::new(vec![yv.rows(), 1], data)?
        };
        Ok(y.tape.push(out, Op::GaussLogPdf { y: y.id, mu: mu.id, logvar: logvar.id }))
    }

    /// Row-wise `KL(N(mu_q, e^lq) || N(mu_p, e^lp))` for diagonal Gaussians, shaped `rows × 1`.
    pub fn gaussian_kl(mu_q: Var<'t>, logvar_q: Var<'t>, mu_p: Var<'t>, logvar_p: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (mq, lq, mp, lp) = (mu_q.value(), logvar_q.value(), mu_p.value(), logvar_p.value());
            if !mq.same_shape(&lq) || !mq.same_shape(&mp) || !mq.same_shape(&lp) {
                return Err(Error::dim("gaussian_kl", "argument shapes differ"));
            }
            let cols = mq.cols();
            let data: Vec<f64> = (0..mq.rows())
                .map(|r| {
                    (r * cols..(r + 1) * cols)
                        .map(|i| kl_term(mq.data()[i], lq.data()[i], mp.data()[i], lp.data()[i]))
                        .sum()
                })
                .collect();
            Tensor::new(vec![mq.rows(), 1], data)?
        };
        Ok(mu_q.tape.push(out, Op::GaussKl { mq: mu_q.id, lq: logvar_q.id, mp: mu_p.id, lp: logvar_p.id }))
    }
}

pub(crate) fn kl_term(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    let d = mq - mp;
    0.5 * (lp - lq + (lq.exp() + d * d) * (-lp).exp() - 1.0)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let loss = p.square().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(p).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(x).item(), 7.0);
    }
}
