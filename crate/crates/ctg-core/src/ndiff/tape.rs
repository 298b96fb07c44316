use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`]. Copyable; only valid for the
/// tape that produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    idx: usize,
}

enum Op<F> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, F),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    RowGather(usize, Vec<usize>),
    RowScatterAdd(usize, Vec<usize>),
    MeanRows(usize),
    Transpose(usize),
    Reshape(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Rsqrt(usize),
    Bce(usize, usize),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "elementwise_mul",
            Op::ScalarMul(..) => "scalar_mul",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::RowGather(..) => "row_gather",
            Op::RowScatterAdd(..) => "row_scatter_add",
            Op::MeanRows(..) => "mean_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Rsqrt(..) => "rsqrt",
            Op::Bce(..) => "binary_cross_entropy",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    requires_grad: bool,
    op: Op<F>,
}

/// Records primitive ops in execution order; [`Tape::backward`] replays them
/// in reverse, visiting each node exactly once. A tape is single-use: after
/// backward it refuses both new ops and a second backward.
pub struct Tape<F: Scalar> {
    id: u64,
    nodes: RefCell<Vec<Node<F>>>,
    consumed: Cell<bool>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf tensor that does not receive a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn param(&self, value: Tensor<F>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var { tape_id: self.id, idx: nodes.len() - 1 }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape_id != self.id || v.idx >= self.nodes.borrow().len() {
            return Err(Error::Detached);
        }
        Ok(v.idx)
    }

    /// Clone of the value stored at `v`.
    pub fn value(&self, v: Var) -> Tensor<F> {
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.idx].value.shape()
    }

    /// Gradient accumulated at `v` by the last `backward` call, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.nodes.borrow()[v.idx].grad.clone()
    }

    fn with_values<R>(&self, f: impl FnOnce(&[Node<F>]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    fn push_op(&self, value: Tensor<F>, op: Op<F>, parents: &[usize]) -> Result<Var> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var { tape_id: self.id, idx: nodes.len() - 1 })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.with_values(|n| n[ia].value.matmul(&n[ib].value))?;
        self.push_op(value, Op::Matmul(ia, ib), &[ia, ib])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.binary_elementwise("add", ia, ib, |x, y| x + y)?;
        self.push_op(value, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.binary_elementwise("sub", ia, ib, |x, y| x - y)?;
        self.push_op(value, Op::Sub(ia, ib), &[ia, ib])
    }

    pub fn elementwise_mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.binary_elementwise("elementwise_mul", ia, ib, |x, y| x * y)?;
        self.push_op(value, Op::Mul(ia, ib), &[ia, ib])
    }

    fn binary_elementwise(
        &self,
        op: &'static str,
        ia: usize,
        ib: usize,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        self.with_values(|n| {
            let (a, b) = (&n[ia].value, &n[ib].value);
            if a.shape() != b.shape() {
                return Err(Error::Shape { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) });
            }
            Ok(a.zip_map(b, f))
        })
    }

    pub fn scalar_mul(&self, a: Var, c: F) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(|x| x * c));
        self.push_op(value, Op::ScalarMul(ia, c), &[ia])
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.with_values(|n| {
            let (a, b) = (&n[ia].value, &n[ib].value);
            if a.rows() != b.rows() {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                });
            }
            let mut out = Tensor::zeros(a.rows(), a.cols() + b.cols());
            for i in 0..a.rows() {
                let row = &mut out.data_mut()[i * (a.cols() + b.cols())..];
                row[..a.cols()].copy_from_slice(a.row(i));
                row[a.cols()..a.cols() + b.cols()].copy_from_slice(b.row(i));
            }
            Ok(out)
        })?;
        self.push_op(value, Op::ConcatCols(ia, ib), &[ia, ib])
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.with_values(|n| {
            let (a, b) = (&n[ia].value, &n[ib].value);
            if a.cols() != b.cols() {
                return Err(Error::Shape {
                    op: "concat_rows",
                    detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                });
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::from_vec(a.rows() + b.rows(), a.cols(), data)
        })?;
        self.push_op(value, Op::ConcatRows(ia, ib), &[ia, ib])
    }

    /// Select rows of `a` in the order given by `idx` (repeats allowed).
    pub fn row_gather(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| {
            let a = &n[ia].value;
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
                return Err(Error::Shape {
                    op: "row_gather",
                    detail: format!("row {bad} out of bounds for {} rows", a.rows()),
                });
            }
            let mut out = Tensor::zeros(idx.len(), a.cols());
            for (o, &src) in idx.iter().enumerate() {
                let c = a.cols();
                out.data_mut()[o * c..(o + 1) * c].copy_from_slice(a.row(src));
            }
            Ok(out)
        })?;
        self.push_op(value, Op::RowGather(ia, idx.to_vec()), &[ia])
    }

    /// Scatter-add rows of `a` into a fresh `out_rows x cols` zero tensor:
    /// `out[idx[i]] += a[i]`.
    pub fn row_scatter_add(&self, a: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| {
            let a = &n[ia].value;
            if idx.len() != a.rows() {
                return Err(Error::Shape {
                    op: "row_scatter_add",
                    detail: format!("{} indices for {} rows", idx.len(), a.rows()),
                });
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
                return Err(Error::Shape {
                    op: "row_scatter_add",
                    detail: format!("target row {bad} out of bounds for {out_rows} rows"),
                });
            }
            let c = a.cols();
            let mut out = Tensor::zeros(out_rows, c);
            for (i, &dst) in idx.iter().enumerate() {
                let row = a.row(i);
                let out_row = &mut out.data_mut()[dst * c..(dst + 1) * c];
                for (o, &v) in out_row.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Ok(out)
        })?;
        self.push_op(value, Op::RowScatterAdd(ia, idx.to_vec()), &[ia])
    }

    /// Column-wise mean over rows: `n x c -> 1 x c`.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| {
            let a = &n[ia].value;
            if a.rows() == 0 {
                return Err(Error::Shape { op: "mean_rows", detail: "empty tensor".into() });
            }
            let inv = F::one() / F::from_usize(a.rows()).unwrap();
            let mut out = Tensor::zeros(1, a.cols());
            for i in 0..a.rows() {
                for (o, &v) in out.data_mut().iter_mut().zip(a.row(i)) {
                    *o += v;
                }
            }
            Ok(out.map(|x| x * inv))
        })?;
        self.push_op(value, Op::MeanRows(ia), &[ia])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.transpose());
        self.push_op(value, Op::Transpose(ia), &[ia])
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| {
            let a = &n[ia].value;
            if a.len() != rows * cols {
                return Err(Error::Shape {
                    op: "reshape",
                    detail: format!("{:?} -> {rows}x{cols}", a.shape()),
                });
            }
            Tensor::from_vec(rows, cols, a.data().to_vec())
        })?;
        self.push_op(value, Op::Reshape(ia), &[ia])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(|x| x.max(F::zero())));
        self.push_op(value, Op::Relu(ia), &[ia])
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(sigmoid_scalar));
        self.push_op(value, Op::Sigmoid(ia), &[ia])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(|x| x.exp()));
        self.push_op(value, Op::Exp(ia), &[ia])
    }

    /// Natural log; a non-positive entry makes the output non-finite, which
    /// is reported as an error.
    pub fn log(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(|x| x.ln()));
        self.push_op(value, Op::Log(ia), &[ia])
    }

    /// Elementwise `x^(-1/2)`.
    pub fn rsqrt(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.with_values(|n| n[ia].value.map(|x| x.sqrt().recip()));
        self.push_op(value, Op::Rsqrt(ia), &[ia])
    }

    /// Mean binary cross-entropy over all entries, as a 1x1 tensor.
    /// Probabilities are clamped to `[eps, 1-eps]` so saturated predictions
    /// produce a large finite loss instead of an infinity.
    pub fn binary_cross_entropy(&self, preds: Var, labels: Var) -> Result<Var> {
        let (ip, iy) = (self.check(preds)?, self.check(labels)?);
        let value = self.with_values(|n| {
            let (p, y) = (&n[ip].value, &n[iy].value);
            if p.shape() != y.shape() {
                return Err(Error::Shape {
                    op: "binary_cross_entropy",
                    detail: format!("{:?} vs {:?}", p.shape(), y.shape()),
                });
            }
            if p.is_empty() {
                return Err(Error::Shape { op: "binary_cross_entropy", detail: "empty tensor".into() });
            }
            let eps = F::bce_epsilon();
            let mut total = F::zero();
            for (&pi, &yi) in p.data().iter().zip(y.data()) {
                let pc = clamp(pi, eps, F::one() - eps);
                total = total - (yi * pc.ln() + (F::one() - yi) * (F::one() - pc).ln());
            }
            Ok(Tensor::scalar(total / F::from_usize(p.len()).unwrap()))
        })?;
        self.push_op(value, Op::Bce(ip, iy), &[ip, iy])
    }

    /// Populate gradients of every grad-requiring tensor reachable from
    /// `loss`, which must be 1x1. Consumes the tape: recording further ops
    /// or calling backward again is an error.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        if nodes[il].value.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", nodes[il].value.shape()),
            });
        }
        self.consumed.set(true);
        nodes[il].grad = Some(Tensor::ones(1, 1));

        for i in (0..=il).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = nodes[i].grad.take() else { continue };
            // Split borrow: the node's op and value stay readable while
            // parent grads are updated.
            macro_rules! accumulate {
                ($parent:expr, $delta:expr) => {{
                    let p = $parent;
                    if nodes[p].requires_grad {
                        let delta: Tensor<F> = $delta;
                        match nodes[p].grad.as_mut() {
                            Some(existing) => existing.add_assign(&delta),
                            None => nodes[p].grad = Some(delta),
                        }
                    }
                }};
            }
            let op = std::mem::replace(&mut nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {
                    nodes[i].grad = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    accumulate!(*a, g.matmul(&nodes[*b].value.transpose())?);
                    accumulate!(*b, nodes[*a].value.transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    accumulate!(*a, g.clone());
                    accumulate!(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate!(*a, g.clone());
                    accumulate!(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&nodes[*b].value, |gi, bi| gi * bi);
                    let gb = g.zip_map(&nodes[*a].value, |gi, ai| gi * ai);
                    accumulate!(*a, ga);
                    accumulate!(*b, gb);
                }
                Op::ScalarMul(a, c) => {
                    accumulate!(*a, g.map(|x| x * *c));
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[*a].value.cols();
                    let cb = nodes[*b].value.cols();
                    let mut ga = Tensor::zeros(g.rows(), ca);
                    let mut gb = Tensor::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        ga.data_mut()[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                        gb.data_mut()[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                    }
                    accumulate!(*a, ga);
                    accumulate!(*b, gb);
                }
                Op::ConcatRows(a, b) => {
                    let ra = nodes[*a].value.rows();
                    let c = g.cols();
                    let ga = Tensor::from_vec(ra, c, g.data()[..ra * c].to_vec())?;
                    let gb = Tensor::from_vec(g.rows() - ra, c, g.data()[ra * c..].to_vec())?;
                    accumulate!(*a, ga);
                    accumulate!(*b, gb);
                }
                Op::RowGather(a, idx) => {
                    let c = g.cols();
                    let mut ga = Tensor::zeros(nodes[*a].value.rows(), c);
                    for (i_out, &src) in idx.iter().enumerate() {
                        let grow = g.row(i_out);
                        let target = &mut ga.data_mut()[src * c..(src + 1) * c];
                        for (t, &v) in target.iter_mut().zip(grow) {
                            *t += v;
                        }
                    }
                    accumulate!(*a, ga);
                }
                Op::RowScatterAdd(a, idx) => {
                    let c = g.cols();
                    let mut ga = Tensor::zeros(idx.len(), c);
                    for (i_in, &dst) in idx.iter().enumerate() {
                        ga.data_mut()[i_in * c..(i_in + 1) * c].copy_from_slice(g.row(dst));
                    }
                    accumulate!(*a, ga);
                }
                Op::MeanRows(a) => {
                    let rows = nodes[*a].value.rows();
                    let inv = F::one() / F::from_usize(rows).unwrap();
                    let mut ga = Tensor::zeros(rows, g.cols());
                    for r in 0..rows {
                        let target = &mut ga.data_mut()[r * g.cols()..(r + 1) * g.cols()];
                        for (t, &v) in target.iter_mut().zip(g.row(0)) {
                            *t = v * inv;
                        }
                    }
                    accumulate!(*a, ga);
                }
                Op::Transpose(a) => {
                    accumulate!(*a, g.transpose());
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    accumulate!(*a, Tensor::from_vec(r, c, g.data().to_vec())?);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gi, xi| {
                        if xi > F::zero() {
                            gi
                        } else {
                            F::zero()
                        }
                    });
                    accumulate!(*a, ga);
                }
                Op::Sigmoid(a) => {
                    // Saved output: node i's own value.
                    let ga = g.zip_map(&nodes[i].value, |gi, s| gi * s * (F::one() - s));
                    accumulate!(*a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&nodes[i].value, |gi, e| gi * e);
                    accumulate!(*a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gi, xi| gi / xi);
                    accumulate!(*a, ga);
                }
                Op::Rsqrt(a) => {
                    let half = F::from_f64(0.5).unwrap();
                    let ga = g.zip_map(&nodes[i].value, |gi, o| -gi * half * o * o * o);
                    accumulate!(*a, ga);
                }
                Op::Bce(p, y) => {
                    let eps = F::bce_epsilon();
                    let m = F::from_usize(nodes[*p].value.len()).unwrap();
                    let gs = g.item();
                    let gp = nodes[*p].value.zip_map(&nodes[*y].value, |pi, yi| {
                        if pi < eps || pi > F::one() - eps {
                            // clamp region: the loss is constant in p here
                            F::zero()
                        } else {
                            gs * (pi - yi) / (pi * (F::one() - pi)) / m
                        }
                    });
                    let gy = nodes[*p].value.map(|pi| {
                        let pc = clamp(pi, eps, F::one() - eps);
                        gs * ((F::one() - pc).ln() - pc.ln()) / m
                    });
                    accumulate!(*p, gp);
                    accumulate!(*y, gy);
                }
            }
            nodes[i].op = op;
        }
        Ok(())
    }
}

#[inline]
fn clamp<F: Scalar>(x: F, lo: F, hi: F) -> F {
    x.max(lo).min(hi)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        let e = (-x).exp();
        F::one() / (F::one() + e)
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
