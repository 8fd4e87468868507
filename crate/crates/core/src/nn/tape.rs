//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation eagerly: each call computes its value
//! immediately and appends a node. [`Tape::backward`] walks the nodes in
//! reverse and accumulates gradients into per-node slots; calling it twice
//! without [`Tape::zero_grad`] adds the gradients again.
//!
//! Only nodes that depend on a leaf created with `requires_grad = true`
//! receive gradients, so constant inputs (images, targets) cost nothing on
//! the way back.

use std::sync::Arc;

use super::gemm::gemm;
use super::tensor::Tensor;
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward pass.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input given the output adjoint.
    /// `None` marks an input that receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64]) -> Vec<Option<Vec<f64>>>;
}

/// Row-compressed sparse matrix used for fixed linear operators such as the
/// mesh Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in &rows {
            for &(c, v) in r {
                assert!(c < cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

struct ConvMeta {
    stride: usize,
    pad: usize,
    /// im2col buffers for every image in the batch.
    cols: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AffineCols(Var, Arc<[f64]>),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    SinCos(Var),
    WrapPeriodic(Var),
    Reshape(Var),
    Conv2d(Var, Var, Var, Box<ConvMeta>),
    GlobalAvgPool(Var),
    AvgPool(Var, usize),
    NormalizeRows(Var, Vec<f64>),
    RowNorm(Var),
    ConcatCols(Var, Var),
    Stack(Vec<Var>),
    Row(Var, usize),
    Gather(Var, Arc<[usize]>),
    CrossRows(Var, Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    SparseMatMul(Arc<CsrMatrix>, Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record and gradient store.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn expect_shape(t: &Tensor, rank: usize, op: &str) -> Result<(), NnError> {
    if t.shape().len() != rank {
        return Err(NnError::ShapeMismatch(format!(
            "{op}: expected rank {rank}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn im2col(
    img: &[f64],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    cols: &mut [f64],
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            img[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(
    cols: &[f64],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    img: &mut [f64],
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            img[(ci * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Leaf node. Gradients are tracked only when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// `[m,k] × [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_shape(av, 2, "matmul")?;
        expect_shape(bv, 2, "matmul")?;
        let (m, k, k2, n) = (av.shape()[0], av.shape()[1], bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `[m,n] + [n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        expect_shape(xv, 2, "add_row_bias")?;
        let n = xv.shape()[1];
        if bv.len() != n {
            return Err(NnError::ShapeMismatch(format!("bias {} vs cols {n}", bv.len())));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, out), Op::AddRowBias(x, bias), ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool), NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, name)?;
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::new(av.shape().to_vec(), out), self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (t, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (t, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (t, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (t, ng) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| f(*v)).collect();
        (Tensor::new(xv.shape().to_vec(), out), self.ng(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (t, ng) = self.unary(x, |v| v * s);
        self.push(t, Op::Scale(x, s), ng)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let (t, ng) = self.unary(x, |v| v + c);
        self.push(t, Op::AddConst(x), ng)
    }

    /// `y[i,j] = x[i,j]·scale[j] + shift[j]` on a rank-2 tensor.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "affine_cols")?;
        let n = xv.shape()[1];
        if scale.len() != n || shift.len() != n {
            return Err(NnError::ShapeMismatch("affine_cols coefficient length".into()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for j in 0..n {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out);
        let ng = self.ng(x);
        Ok(self.push(t, Op::AffineCols(x, scale.into()), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (t, ng) = self.unary(x, f64::tanh);
        self.push(t, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (t, ng) = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let (t, ng) = self.unary(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu(x, slope), ng)
    }

    /// Overflow-safe `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let (t, ng) = self.unary(x, softplus);
        self.push(t, Op::Softplus(x), ng)
    }

    /// `[n,k] → [n,2k]`: sines of each column followed by cosines.
    pub fn sin_cos(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "sin_cos")?;
        let (n, k) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; n * 2 * k];
        for i in 0..n {
            for j in 0..k {
                let (s, c) = xv.data()[i * k + j].sin_cos();
                out[i * 2 * k + j] = s;
                out[i * 2 * k + k + j] = c;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![n, 2 * k], out), Op::SinCos(x), ng))
    }

    /// Wraps each value into `(-period/2, period/2]` by subtracting a
    /// multiple of `period`; the gradient passes through unchanged.
    pub fn wrap_periodic(&mut self, x: Var, period: f64) -> Var {
        let half = period * 0.5;
        let (t, ng) = self.unary(x, |v| {
            let w = (v + half).rem_euclid(period) - half;
            if w <= -half {
                w + period
            } else {
                w
            }
        });
        self.push(t, Op::WrapPeriodic(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(NnError::ShapeMismatch(format!(
                "reshape {:?} to {shape:?}",
                xv.shape()
            )));
        }
        let t = xv.clone().reshaped(shape);
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// 2-D convolution. `input [N,C,H,W]`, `weight [O,C,K,K]`, `bias [O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (iv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        expect_shape(iv, 4, "conv2d input")?;
        expect_shape(wv, 4, "conv2d weight")?;
        let [n, c, h, w] = [iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]];
        let [o, c2, k, k2] = [wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]];
        if c != c2 || k != k2 || bv.len() != o || stride == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d input {:?} weight {:?} bias {:?}",
                iv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(NnError::ShapeMismatch("conv2d kernel larger than input".into()));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let ckk = c * k * k;
        let hw = ho * wo;
        let mut cols = vec![0.0; n * ckk * hw];
        let mut out = vec![0.0; n * o * hw];
        for b in 0..n {
            let img = &iv.data()[b * c * h * w..(b + 1) * c * h * w];
            let col = &mut cols[b * ckk * hw..(b + 1) * ckk * hw];
            im2col(img, (c, h, w), k, stride, pad, (ho, wo), col);
            let dst = &mut out[b * o * hw..(b + 1) * o * hw];
            for (oc, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bv.data()[oc]);
            }
            gemm(o, ckk, hw, wv.data(), false, col, false, dst, true);
        }
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        let meta = Box::new(ConvMeta { stride, pad, cols });
        Ok(self.push(
            Tensor::new(vec![n, o, ho, wo], out),
            Op::Conv2d(input, weight, bias, meta),
            ng,
        ))
    }

    /// `[N,C,H,W] → [N,C]` mean over space.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 4, "global_avg_pool")?;
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        let hw = xv.shape()[2] * xv.shape()[3];
        let out = xv
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![n, c], out), Op::GlobalAvgPool(x), ng))
    }

    /// Average pooling by `factor` over the last two dimensions.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let r = xv.shape().len();
        if r < 2 || factor == 0 {
            return Err(NnError::ShapeMismatch("avg_pool needs rank >= 2".into()));
        }
        let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        if h % factor != 0 || w % factor != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "avg_pool: {h}x{w} not divisible by {factor}"
            )));
        }
        let (ho, wo) = (h / factor, w / factor);
        let planes = xv.len() / (h * w);
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..h {
                for x in 0..w {
                    dst[(y / factor) * wo + x / factor] += src[y * w + x] * inv;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out), Op::AvgPool(x, factor), ng))
    }

    /// Scales each row of `[n,d]` to unit L2 norm (rows of zeros stay zero).
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "normalize_rows")?;
        let d = xv.shape()[1];
        let mut norms = Vec::with_capacity(xv.shape()[0]);
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(nrm);
            if nrm > 0.0 {
                row.iter_mut().for_each(|v| *v /= nrm);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out);
        let ng = self.ng(x);
        Ok(self.push(t, Op::NormalizeRows(x, norms), ng))
    }

    /// `[n,d] → [n]` row L2 norms; the gradient at a zero row is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "row_norm")?;
        let d = xv.shape()[1];
        let out: Vec<f64> = xv
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_vec(out), Op::RowNorm(x), ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_shape(av, 2, "concat_cols")?;
        expect_shape(bv, 2, "concat_cols")?;
        let n = av.shape()[0];
        if bv.shape()[0] != n {
            return Err(NnError::ShapeMismatch("concat_cols row count".into()));
        }
        let (da, db) = (av.shape()[1], bv.shape()[1]);
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * da..(i + 1) * da]);
            out.extend_from_slice(&bv.data()[i * db..(i + 1) * db]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, da + db], out), Op::ConcatCols(a, b), ng))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("stack of nothing".into()))?;
        let shape = self.value(*first).shape().to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.value(*first).len());
        let mut ng = false;
        for p in parts {
            let v = self.value(*p);
            if v.shape() != shape.as_slice() {
                return Err(NnError::ShapeMismatch("stack of mixed shapes".into()));
            }
            out.extend_from_slice(v.data());
            ng |= self.ng(*p);
        }
        let mut full = vec![parts.len()];
        full.extend(shape);
        Ok(self.push(Tensor::new(full, out), Op::Stack(parts.to_vec()), ng))
    }

    /// Row `i` of the leading axis, dropping that axis.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.shape().is_empty() || i >= xv.shape()[0] {
            return Err(NnError::ShapeMismatch(format!("row {i} of {:?}", xv.shape())));
        }
        let stride = xv.len() / xv.shape()[0];
        let t = Tensor::new(xv.shape()[1..].to_vec(), xv.data()[i * stride..(i + 1) * stride].to_vec());
        let ng = self.ng(x);
        Ok(self.push(t, Op::Row(x, i), ng))
    }

    /// Selects rows of `[n,d]` by index, with repetition allowed.
    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "gather")?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            if i >= n {
                return Err(NnError::ShapeMismatch(format!("gather index {i} >= {n}")));
            }
            out.extend_from_slice(&xv.data()[i * d..(i + 1) * d]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![idx.len(), d], out), Op::Gather(x, idx), ng))
    }

    /// Row-wise cross product of two `[n,3]` tensors.
    pub fn cross_rows(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "cross_rows")?;
        expect_shape(av, 2, "cross_rows")?;
        if av.shape()[1] != 3 {
            return Err(NnError::ShapeMismatch("cross_rows needs 3 columns".into()));
        }
        let out: Vec<f64> = av
            .data()
            .chunks(3)
            .zip(bv.data().chunks(3))
            .flat_map(|(p, q)| {
                [
                    p[1] * q[2] - p[2] * q[1],
                    p[2] * q[0] - p[0] * q[2],
                    p[0] * q[1] - p[1] * q[0],
                ]
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(av.shape().to_vec(), out), Op::CrossRows(a, b), ng))
    }

    /// `[n,d] → [n]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "row_sum")?;
        let d = xv.shape()[1];
        let out = xv.data().chunks(d).map(|r| r.iter().sum()).collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_vec(out), Op::RowSum(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// `A · x` for a fixed sparse `A` and `x [cols, d]`.
    pub fn sparse_matmul(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        expect_shape(xv, 2, "sparse_matmul")?;
        if xv.shape()[0] != a.cols {
            return Err(NnError::ShapeMismatch("sparse_matmul dims".into()));
        }
        let d = xv.shape()[1];
        let mut out = vec![0.0; a.rows * d];
        for r in 0..a.rows {
            for p in a.row_ptr[r]..a.row_ptr[r + 1] {
                let (c, w) = (a.col_idx[p], a.values[p]);
                for j in 0..d {
                    out[r * d + j] += w * xv.data()[c * d + j];
                }
            }
        }
        let rows = a.rows;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![rows, d], out), Op::SparseMatMul(a, x), ng))
    }

    /// Records a node computed outside the tape with a hand-written backward.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        let ng = inputs.iter().any(|v| self.ng(*v));
        self.push(output, Op::Custom(op, inputs.to_vec()), ng)
    }

    /// Reverse pass from a one-element `root`, accumulating into the
    /// gradient slots of every node that depends on a tracked leaf.
    pub fn backward(&mut self, root: Var) -> Result<(), NnError> {
        if self.value(root).len() != 1 {
            return Err(NnError::NonScalarRoot(self.value(root).shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            add_into(&mut self.grads[i], &g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].needs_grad;
        let mut send = |v: Var, grad: Vec<f64>| {
            if self.nodes[v.0].needs_grad {
                match &mut adj[v.0] {
                    Some(d) => d.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(grad),
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if want(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, bv.data(), true, &mut ga, false);
                    send(*a, ga);
                }
                if want(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g, false, &mut gb, false);
                    send(*b, gb);
                }
            }
            Op::AddRowBias(x, b) => {
                if want(*b) {
                    let n = val(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    send(*b, gb);
                }
                send(*x, g.to_vec());
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if want(*a) {
                    send(*a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if want(*b) {
                    send(*b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b).data();
                if want(*a) {
                    send(*a, g.iter().zip(bv).map(|(g, y)| g / y).collect());
                }
                if want(*b) {
                    let ov = out.data();
                    send(*b, g.iter().zip(ov).zip(bv).map(|((g, q), y)| -g * q / y).collect());
                }
            }
            Op::Scale(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::AddConst(x) | Op::WrapPeriodic(x) | Op::Reshape(x) => send(*x, g.to_vec()),
            Op::AffineCols(x, scale) => {
                let n = scale.len();
                let mut gx = g.to_vec();
                for row in gx.chunks_mut(n) {
                    row.iter_mut().zip(scale.iter()).for_each(|(v, s)| *v *= s);
                }
                send(*x, gx);
            }
            Op::Tanh(x) => send(*x, g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Sigmoid(x) => send(*x, g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x).data();
                send(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, v)| if *v > 0.0 { *g } else { g * slope })
                        .collect(),
                )
            }
            Op::Softplus(x) => {
                let xv = val(*x).data();
                send(*x, g.iter().zip(xv).map(|(g, v)| g * sigmoid(*v)).collect())
            }
            Op::SinCos(x) => {
                let xv = val(*x);
                let (n, k) = (xv.shape()[0], xv.shape()[1]);
                let mut gx = vec![0.0; n * k];
                for r in 0..n {
                    for j in 0..k {
                        let (s, c) = xv.data()[r * k + j].sin_cos();
                        gx[r * k + j] = g[r * 2 * k + j] * c - g[r * 2 * k + k + j] * s;
                    }
                }
                send(*x, gx);
            }
            Op::Conv2d(input, weight, bias, meta) => {
                let (iv, wv) = (val(*input), val(*weight));
                let [n, c, h, w] = [iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]];
                let [o, _, k, _] = [wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]];
                let (ho, wo) = (out.shape()[2], out.shape()[3]);
                let (hw, ckk) = (ho * wo, c * k * k);
                if want(*bias) {
                    let mut gb = vec![0.0; o];
                    for b in 0..n {
                        for (oc, gbv) in gb.iter_mut().enumerate() {
                            *gbv += g[(b * o + oc) * hw..(b * o + oc + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    send(*bias, gb);
                }
                if want(*weight) {
                    let mut gw = vec![0.0; o * ckk];
                    for b in 0..n {
                        let gout = &g[b * o * hw..(b + 1) * o * hw];
                        let col = &meta.cols[b * ckk * hw..(b + 1) * ckk * hw];
                        gemm(o, hw, ckk, gout, false, col, true, &mut gw, true);
                    }
                    send(*weight, gw);
                }
                if want(*input) {
                    let mut gi = vec![0.0; n * c * h * w];
                    let mut gcol = vec![0.0; ckk * hw];
                    for b in 0..n {
                        let gout = &g[b * o * hw..(b + 1) * o * hw];
                        gemm(ckk, o, hw, wv.data(), true, gout, false, &mut gcol, false);
                        col2im(
                            &gcol,
                            (c, h, w),
                            k,
                            meta.stride,
                            meta.pad,
                            (ho, wo),
                            &mut gi[b * c * h * w..(b + 1) * c * h * w],
                        );
                    }
                    send(*input, gi);
                }
            }
            Op::GlobalAvgPool(x) => {
                let xv = val(*x);
                let hw = xv.shape()[2] * xv.shape()[3];
                let mut gx = vec![0.0; xv.len()];
                for (p, chunk) in gx.chunks_mut(hw).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = g[p] / hw as f64);
                }
                send(*x, gx);
            }
            Op::AvgPool(x, factor) => {
                let xv = val(*x);
                let r = xv.shape().len();
                let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
                let (ho, wo) = (h / factor, w / factor);
                let inv = 1.0 / (factor * factor) as f64;
                let mut gx = vec![0.0; xv.len()];
                for p in 0..xv.len() / (h * w) {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[p * h * w + y * w + xx] = g[p * ho * wo + (y / factor) * wo + xx / factor] * inv;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::NormalizeRows(x, norms) => {
                let d = out.shape()[1];
                let mut gx = vec![0.0; out.len()];
                for (r, &nrm) in norms.iter().enumerate() {
                    if nrm == 0.0 {
                        continue;
                    }
                    let y = &out.data()[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let proj: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = (gr[j] - y[j] * proj) / nrm;
                    }
                }
                send(*x, gx);
            }
            Op::RowNorm(x) => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let mut gx = vec![0.0; xv.len()];
                for (r, &nrm) in out.data().iter().enumerate() {
                    if nrm > 0.0 {
                        for j in 0..d {
                            gx[r * d + j] = g[r] * xv.data()[r * d + j] / nrm;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::ConcatCols(a, b) => {
                let (da, db) = (val(*a).shape()[1], val(*b).shape()[1]);
                let rows = out.shape()[0];
                let mut ga = Vec::with_capacity(rows * da);
                let mut gb = Vec::with_capacity(rows * db);
                for r in 0..rows {
                    let row = &g[r * (da + db)..(r + 1) * (da + db)];
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Stack(parts) => {
                let each = out.len() / parts.len();
                for (i, p) in parts.iter().enumerate() {
                    if want(*p) {
                        send(*p, g[i * each..(i + 1) * each].to_vec());
                    }
                }
            }
            Op::Row(x, i) => {
                let xv = val(*x);
                let stride = xv.len() / xv.shape()[0];
                let mut gx = vec![0.0; xv.len()];
                gx[i * stride..(i + 1) * stride].copy_from_slice(g);
                send(*x, gx);
            }
            Op::Gather(x, idx) => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let mut gx = vec![0.0; xv.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..d {
                        gx[src * d + j] += g[r * d + j];
                    }
                }
                send(*x, gx);
            }
            Op::CrossRows(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                // d(a×b)·g: grad_a = b × g, grad_b = g × a
                let cross = |p: &[f64], q: &[f64]| {
                    [
                        p[1] * q[2] - p[2] * q[1],
                        p[2] * q[0] - p[0] * q[2],
                        p[0] * q[1] - p[1] * q[0],
                    ]
                };
                if want(*a) {
                    let ga = bv.chunks(3).zip(g.chunks(3)).flat_map(|(q, gg)| cross(q, gg)).collect();
                    send(*a, ga);
                }
                if want(*b) {
                    let gb = g.chunks(3).zip(av.chunks(3)).flat_map(|(gg, p)| cross(gg, p)).collect();
                    send(*b, gb);
                }
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let gx = (0..xv.len()).map(|i| g[i / d]).collect();
                send(*x, gx);
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                send(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                send(*x, vec![g[0] / n.max(1) as f64; n]);
            }
            Op::SparseMatMul(a, x) => {
                let d = out.shape()[1];
                let mut gx = vec![0.0; a.cols * d];
                for r in 0..a.rows {
                    for p in a.row_ptr[r]..a.row_ptr[r + 1] {
                        let (c, w) = (a.col_idx[p], a.values[p]);
                        for j in 0..d {
                            gx[c * d + j] += w * g[r * d + j];
                        }
                    }
                }
                send(*x, gx);
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let grads = op.backward(&ins, out, g);
                for (v, gr) in inputs.iter().zip(grads) {
                    if let Some(gr) = gr {
                        send(*v, gr);
                    }
                }
            }
        }
    }
}
