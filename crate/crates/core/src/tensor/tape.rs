use std::cell::{Cell, RefCell};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SegmentIndex, Tensor, LAYER_NORM_EPS};
use crate::error::{Error, Result};

const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AddScalar(Var, Var),
    MulRows(Var, Var),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, SegmentIndex),
    SegmentSoftmax(Var, SegmentIndex),
    LeakyRelu(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    RowNorms(Var),
    NormalizeRows(Var),
    Reshape(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddScalar(a, b) | MulRows(a, b) => {
                vec![*a, *b]
            }
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Concat(vs) => vs.clone(),
            Transpose(a)
            | Scale(a, _)
            | AddConst(a)
            | GatherRows(a, _)
            | SegmentSum(a, _)
            | SegmentSoftmax(a, _)
            | LeakyRelu(a, _)
            | Relu(a)
            | Dropout(a, _)
            | SliceCols(a, _, _)
            | Exp(a)
            | Log(a)
            | Sum(a)
            | Mean(a)
            | SumLast(a)
            | RowNorms(a)
            | NormalizeRows(a)
            | Reshape(a)
            | LogSoftmax(a)
            | Pick(a, _) => {
                vec![*a]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Operations take `&self`, so a forward pass is written as a sequence of
/// `tape.op(..)?` calls over copyable [`Var`] handles. Leaves created with
/// [`Tape::param`] receive gradients; [`Tape::constant`] and
/// [`Tape::detach`] values never do.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Gradients of a scalar loss with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `None` when no gradient reaches `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when no path from the loss reaches it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, "2-d matrix", format!("{s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            ref op => op.inputs().iter().any(|v| nodes[v.0].requires_grad),
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn with2<R>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.with(v, Tensor::clone)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.with(v, |t| t.shape().to_vec())
    }

    pub fn item(&self, v: Var) -> f64 {
        self.with(v, |t| t.data()[0])
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Direct inputs of a recorded node.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes.borrow()[v.0].op.inputs()
    }

    /// Whether `target` is reachable from `v` by walking recorded inputs.
    pub fn depends_on(&self, v: Var, target: Var) -> bool {
        let nodes = self.nodes.borrow();
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![v];
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if n.0 < target.0 || seen[n.0] {
                continue;
            }
            seen[n.0] = true;
            stack.extend(nodes[n.0].op.inputs());
        }
        false
    }

    /// Same values, cut off from the gradient graph.
    pub fn detach(&self, x: Var) -> Var {
        let value = self.value(x);
        self.push(value, Op::Constant)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.with2(a, b, |a, b| {
            let (m, k) = check_matrix("matmul", a)?;
            let (k2, n) = check_matrix("matmul", b)?;
            if k != k2 {
                return Err(Error::shape("matmul", format!("inner dim {k}"), k2));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        })?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.with(a, |a| {
            let (m, n) = check_matrix("transpose", a)?;
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = a.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)
        })?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.with2(a, b, |a, b| {
            check_same_shape(op, a, b)?;
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| f(*x, *y))
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        })
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.with(a, |a| {
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| f(*x)).collect())
                .expect("same length")
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, Op::AddConst(a))
    }

    /// Adds a one-element tensor to every entry of `a`.
    pub fn add_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let out = self.with2(a, s, |a, s| {
            if s.len() != 1 {
                return Err(Error::shape("add_scalar", "1 element", s.len()));
            }
            let c = s.data()[0];
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect())
        })?;
        Ok(self.push(out, Op::AddScalar(a, s)))
    }

    /// Scales row `r` of `x` by `w[r]`.
    pub fn mul_rows(&self, x: Var, w: Var) -> Result<Var> {
        let out = self.with2(x, w, |x, w| {
            let (n, c) = (x.rows(), x.cols());
            if w.len() != n {
                return Err(Error::shape("mul_rows", n, w.len()));
            }
            let mut data = x.data().to_vec();
            for r in 0..n {
                let wr = w.data()[r];
                data[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= wr);
            }
            Tensor::new(x.shape().to_vec(), data)
        })?;
        Ok(self.push(out, Op::MulRows(x, w)))
    }

    /// Row gather: output row `k` is row `idx[k]` of `x`.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = self.with(x, |x| x.select_rows(idx))?;
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// Sums the rows of `x` belonging to each segment.
    pub fn segment_sum(&self, x: Var, seg: &SegmentIndex) -> Result<Var> {
        let out = self.with(x, |x| {
            if x.rows() != seg.len() {
                return Err(Error::shape(
                    "segment_sum",
                    format!("{} rows", seg.len()),
                    x.rows(),
                ));
            }
            let c = x.cols();
            let mut data = vec![0.0; seg.count() * c];
            for (r, &s) in seg.ids().iter().enumerate() {
                let src = x.row(r);
                for (o, v) in data[s * c..(s + 1) * c].iter_mut().zip(src) {
                    *o += v;
                }
            }
            let mut shape = x.shape().to_vec();
            shape[0] = seg.count();
            Tensor::new(shape, data)
        })?;
        Ok(self.push(out, Op::SegmentSum(x, seg.clone())))
    }

    /// Softmax of `scores` within each segment, stabilized by the
    /// per-segment maximum.
    pub fn segment_softmax(&self, scores: Var, seg: &SegmentIndex) -> Result<Var> {
        let out = self.with(scores, |x| {
            if x.len() != seg.len() {
                return Err(Error::shape("segment_softmax", seg.len(), x.len()));
            }
            let mut max = vec![f64::NEG_INFINITY; seg.count()];
            for (v, &s) in x.data().iter().zip(seg.ids()) {
                max[s] = max[s].max(*v);
            }
            let mut data: Vec<f64> = x
                .data()
                .iter()
                .zip(seg.ids())
                .map(|(v, &s)| (v - max[s]).exp())
                .collect();
            let mut total = vec![0.0; seg.count()];
            for (v, &s) in data.iter().zip(seg.ids()) {
                total[s] += v;
            }
            for (v, &s) in data.iter_mut().zip(seg.ids()) {
                *v /= total[s];
            }
            Tensor::new(x.shape().to_vec(), data)
        })?;
        Ok(self.push(out, Op::SegmentSoftmax(scores, seg.clone())))
    }

    /// `x` for positive entries, `slope * x` otherwise.
    pub fn leaky_relu(&self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Parameter(format!(
                "leaky slope {slope} not in (0, 1)"
            )));
        }
        let out = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        Ok(self.push(out, Op::LeakyRelu(x, slope)))
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Row-wise layer normalization followed by an affine map.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (xt, gt, bt) = (
            &nodes[x.0].value,
            &nodes[gain.0].value,
            &nodes[bias.0].value,
        );
        let (n, d) = (xt.rows(), xt.cols());
        if d == 0 {
            return Err(Error::shape("layer_norm", "width >= 1", 0));
        }
        if gt.len() != d || bt.len() != d {
            return Err(Error::shape(
                "layer_norm",
                d,
                format!("gain {} / bias {}", gt.len(), bt.len()),
            ));
        }
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = gt.data()[c] * h + bt.data()[c];
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), out)?;
        drop(nodes);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. The mask is a pure function of `seed`; outside
    /// training (or at rate 0) the input is returned unchanged.
    pub fn dropout(&self, x: Var, rate: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} not in [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.with(x, Tensor::len);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.with(x, |t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
            )
        })?;
        Ok(self.push(out, Op::Dropout(x, mask)))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "at least one input", 0));
        }
        let nodes = self.nodes.borrow();
        let n = nodes[xs[0].0].value.rows();
        let widths: Vec<usize> = xs.iter().map(|v| nodes[v.0].value.cols()).collect();
        for v in xs {
            let t = &nodes[v.0].value;
            if t.shape().len() != 2 || t.rows() != n {
                return Err(Error::shape(
                    "concat",
                    format!("[{n}, _]"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for v in xs {
                data.extend_from_slice(nodes[v.0].value.row(r));
            }
        }
        drop(nodes);
        let out = Tensor::new(vec![n, total], data)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.with(x, |t| {
            let (n, c) = check_matrix("slice_cols", t)?;
            if start > end || end > c {
                return Err(Error::shape(
                    "slice_cols",
                    format!("range within 0..{c}"),
                    format!("{start}..{end}"),
                ));
            }
            let mut data = Vec::with_capacity(n * (end - start));
            for r in 0..n {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::new(vec![n, end - start], data)
        })?;
        Ok(self.push(out, Op::SliceCols(x, start, end)))
    }

    pub fn exp(&self, x: Var) -> Var {
        let out = self.map(x, f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Var {
        let out = self.map(x, f64::ln);
        self.push(out, Op::Log(x))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data().iter().sum());
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data().iter().sum::<f64>() / t.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Sum along the last axis: `[n, m] -> [n]`.
    pub fn sum_last(&self, x: Var) -> Var {
        let out = self.with(x, |t| {
            let n = t.rows();
            Tensor::vector((0..n).map(|r| t.row(r).iter().sum()).collect())
        });
        self.push(out, Op::SumLast(x))
    }

    /// Euclidean norm of every row: `[n, d] -> [n]`.
    pub fn row_norms(&self, x: Var) -> Var {
        let out = self.with(x, |t| {
            Tensor::vector(
                (0..t.rows())
                    .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect(),
            )
        });
        self.push(out, Op::RowNorms(x))
    }

    /// L2 distance between matching rows of `a` and `b`.
    pub fn row_distances(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        Ok(self.row_norms(d))
    }

    /// Rescales every row to unit Euclidean length.
    pub fn normalize_rows(&self, x: Var) -> Var {
        let out = self.with(x, |t| {
            let c = t.cols();
            let mut data = t.data().to_vec();
            for r in 0..t.rows() {
                let row = &mut data[r * c..(r + 1) * c];
                let s = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
                row.iter_mut().for_each(|v| *v *= s);
            }
            Tensor::new(t.shape().to_vec(), data).expect("same length")
        });
        self.push(out, Op::NormalizeRows(x))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&self, x: Var) -> Result<Var> {
        let out = self.with(x, |t| {
            let (n, m) = check_matrix("log_softmax", t)?;
            let mut data = Vec::with_capacity(n * m);
            for r in 0..n {
                let row = t.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                data.extend(row.iter().map(|v| v - lse));
            }
            Tensor::new(vec![n, m], data)
        })?;
        Ok(self.push(out, Op::LogSoftmax(x)))
    }

    /// Picks entry `cols[r]` from row `r`: `[n, m] -> [n]`.
    pub fn pick(&self, x: Var, cols: &[usize]) -> Result<Var> {
        let out = self.with(x, |t| {
            let (n, m) = check_matrix("pick", t)?;
            if cols.len() != n {
                return Err(Error::shape("pick", n, cols.len()));
            }
            let mut data = Vec::with_capacity(n);
            for (r, &c) in cols.iter().enumerate() {
                if c >= m {
                    return Err(Error::Index {
                        what: "column",
                        index: c,
                        bound: m,
                    });
                }
                data.push(t.data()[r * m + c]);
            }
            Ok(Tensor::vector(data))
        })?;
        Ok(self.push(out, Op::Pick(x, cols.to_vec())))
    }

    /// Reverse pass from a scalar `loss`. A tape may be back-propagated once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::Tape("backward already ran on this tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar loss",
                format!("{:?}", nodes[loss.0].value.shape()),
            ));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k) = (at.rows(), at.cols());
            let n = bt.cols();
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..m {
                    for p in 0..k {
                        let brow = &bt.data()[p * n..(p + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = at.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (m, n) = (val(*a).rows(), val(*a).cols());
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v)
            });
        }
        Op::Mul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |ga| {
                for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bt.data()) {
                    *o += gv * bv;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((o, gv), av) in gb.iter_mut().zip(g).zip(at.data()) {
                    *o += gv * av;
                }
            });
        }
        Op::Scale(a, c) => {
            accumulate(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)
            });
        }
        Op::AddConst(a) | Op::Reshape(a) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
        }
        Op::AddScalar(a, s) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *s, |gs| gs[0] += g.iter().sum::<f64>());
        }
        Op::MulRows(x, w) => {
            let (xt, wt) = (val(*x), val(*w));
            let c = xt.cols();
            accumulate(nodes, grads, *x, |gx| {
                for (r, wr) in wt.data().iter().enumerate() {
                    for j in r * c..(r + 1) * c {
                        gx[j] += g[j] * wr;
                    }
                }
            });
            accumulate(nodes, grads, *w, |gw| {
                for (r, o) in gw.iter_mut().enumerate() {
                    *o += (r * c..(r + 1) * c)
                        .map(|j| g[j] * xt.data()[j])
                        .sum::<f64>();
                }
            });
        }
        Op::GatherRows(x, idx) => {
            let c = val(*x).cols();
            accumulate(nodes, grads, *x, |gx| {
                for (k, &r) in idx.iter().enumerate() {
                    add_into(&mut gx[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                }
            });
        }
        Op::SegmentSum(x, seg) => {
            let c = val(*x).cols();
            accumulate(nodes, grads, *x, |gx| {
                for (r, &s) in seg.ids().iter().enumerate() {
                    add_into(&mut gx[r * c..(r + 1) * c], &g[s * c..(s + 1) * c]);
                }
            });
        }
        Op::SegmentSoftmax(x, seg) => {
            let mut dot = vec![0.0; seg.count()];
            for ((gv, yv), &s) in g.iter().zip(y.data()).zip(seg.ids()) {
                dot[s] += gv * yv;
            }
            accumulate(nodes, grads, *x, |gx| {
                for (r, &s) in seg.ids().iter().enumerate() {
                    gx[r] += y.data()[r] * (g[r] - dot[s]);
                }
            });
        }
        Op::LeakyRelu(x, slope) => {
            let xt = val(*x);
            accumulate(nodes, grads, *x, |gx| {
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xt.data()) {
                    *o += if *xv > 0.0 { *gv } else { slope * gv };
                }
            });
        }
        Op::Relu(x) => {
            let xt = val(*x);
            accumulate(nodes, grads, *x, |gx| {
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xt.data()) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gt = val(*gain);
            let d = gt.len();
            let n = inv_std.len();
            accumulate(nodes, grads, *x, |gx| {
                for r in 0..n {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..d {
                        let dh = g[r * d + c] * gt.data()[c];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[r * d + c];
                    }
                    for c in 0..d {
                        let dh = g[r * d + c] * gt.data()[c];
                        gx[r * d + c] += inv_std[r] / d as f64
                            * (d as f64 * dh - sum_dh - xhat[r * d + c] * sum_dh_h);
                    }
                }
            });
            accumulate(nodes, grads, *gain, |gg| {
                for r in 0..n {
                    for c in 0..d {
                        gg[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |gb| {
                for r in 0..n {
                    add_into(gb, &g[r * d..(r + 1) * d]);
                }
            });
        }
        Op::Dropout(x, mask) => {
            accumulate(nodes, grads, *x, |gx| {
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                }
            });
        }
        Op::Concat(xs) => {
            let total = y.cols();
            let n = y.rows();
            let mut offset = 0;
            for v in xs {
                let w = val(*v).cols();
                accumulate(nodes, grads, *v, |gv| {
                    for r in 0..n {
                        add_into(
                            &mut gv[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                });
                offset += w;
            }
        }
        Op::SliceCols(x, start, end) => {
            let c = val(*x).cols();
            let w = end - start;
            accumulate(nodes, grads, *x, |gx| {
                for r in 0..y.rows() {
                    add_into(&mut gx[r * c + start..r * c + end], &g[r * w..(r + 1) * w]);
                }
            });
        }
        Op::Exp(x) => {
            accumulate(nodes, grads, *x, |gx| {
                for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y.data()) {
                    *o += gv * yv;
                }
            });
        }
        Op::Log(x) => {
            let xt = val(*x);
            accumulate(nodes, grads, *x, |gx| {
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xt.data()) {
                    *o += gv / xv;
                }
            });
        }
        Op::Sum(x) => {
            accumulate(nodes, grads, *x, |gx| {
                gx.iter_mut().for_each(|o| *o += g[0])
            });
        }
        Op::Mean(x) => {
            let n = val(*x).len().max(1) as f64;
            accumulate(nodes, grads, *x, |gx| {
                gx.iter_mut().for_each(|o| *o += g[0] / n)
            });
        }
        Op::SumLast(x) => {
            let c = val(*x).cols();
            accumulate(nodes, grads, *x, |gx| {
                for (r, gv) in g.iter().enumerate() {
                    gx[r * c..(r + 1) * c].iter_mut().for_each(|o| *o += gv);
                }
            });
        }
        Op::RowNorms(x) => {
            let xt = val(*x);
            let c = xt.cols();
            accumulate(nodes, grads, *x, |gx| {
                for (r, (gv, norm)) in g.iter().zip(y.data()).enumerate() {
                    // Subgradient 0 at the origin.
                    if *norm > 0.0 {
                        let span = r * c..(r + 1) * c;
                        for (gj, xj) in gx[span.clone()].iter_mut().zip(&xt.data()[span]) {
                            *gj += gv * xj / norm;
                        }
                    }
                }
            });
        }
        Op::NormalizeRows(x) => {
            let xt = val(*x);
            let c = xt.cols();
            accumulate(nodes, grads, *x, |gx| {
                for r in 0..xt.rows() {
                    let row = xt.row(r);
                    let grow = &g[r * c..(r + 1) * c];
                    let s = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
                    let xg: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += s * grow[j] - s * s * s * row[j] * xg;
                    }
                }
            });
        }
        Op::LogSoftmax(x) => {
            let m = y.cols();
            accumulate(nodes, grads, *x, |gx| {
                for r in 0..y.rows() {
                    let grow = &g[r * m..(r + 1) * m];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..m {
                        gx[r * m + j] += grow[j] - y.data()[r * m + j].exp() * gsum;
                    }
                }
            });
        }
        Op::Pick(x, cols) => {
            let m = val(*x).cols();
            accumulate(nodes, grads, *x, |gx| {
                for (r, &c) in cols.iter().enumerate() {
                    gx[r * m + c] += g[r];
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
