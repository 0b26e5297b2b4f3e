//! Op constructors. Values are computed eagerly; every call records a node so
//! backward can replay the vector-Jacobian products.

use std::rc::Rc;

use super::graph::{Graph, Op, Tensor};
use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};

fn unary(x: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    x.graph.push(op, x.shape(), data, x.requires_grad())
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    a.expect_same_graph(b)?;
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!(
            "elementwise op on mismatched shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let da = a.data();
    let db = b.data();
    let data: Vec<f64> = da.iter().zip(db.iter()).map(|(&x, &y)| f(x, y)).collect();
    Ok(a.graph.push(op, a.shape(), data, a.requires_grad() || b.requires_grad()))
}

fn matrix_shape(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::dimension(format!("{what} must be rank 2, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, Op::Scale(self.id, c), |v| v * c)
    }

    pub fn shift(&self, c: f64) -> Tensor {
        unary(self, Op::Shift(self.id), |v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        unary(self, Op::Ln(self.id), f64::ln)
    }

    pub fn recip(&self) -> Tensor {
        unary(self, Op::Recip(self.id), |v| 1.0 / v)
    }

    /// Numerically safe logistic: large |x| saturates without overflow.
    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn softplus(&self) -> Tensor {
        unary(self, Op::Softplus(self.id), |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, Op::Tanh(self.id), f64::tanh)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_graph(other)?;
        let (m, k) = matrix_shape(self, "matmul lhs")?;
        let (k2, n) = matrix_shape(other, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul inner dimensions disagree: {m}x{k} vs {k2}x{n}"
            )));
        }
        let data = kernels::matmul(&self.data(), &other.data(), m, k, n);
        Ok(self.graph.push(
            Op::MatMul(self.id, other.id),
            vec![m, n],
            data,
            self.requires_grad() || other.requires_grad(),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = matrix_shape(self, "transpose input")?;
        let data = kernels::transpose(&self.data(), r, c);
        Ok(self.graph.push(Op::Transpose(self.id), vec![c, r], data, self.requires_grad()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension(format!(
                "cannot reshape {} values into {:?}",
                self.numel(),
                shape
            )));
        }
        Ok(self.graph.push_rc(Op::Reshape(self.id), shape.to_vec(), self.data(), self.requires_grad()))
    }

    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        self.graph.push(Op::SumAll(self.id), vec![1], vec![total], self.requires_grad())
    }

    /// Sum over axis 0: [m,n] -> [n].
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (m, n) = matrix_shape(self, "sum_rows input")?;
        let d = self.data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += d[i * n + j];
            }
        }
        Ok(self.graph.push(Op::SumRows(self.id), vec![n], out, self.requires_grad()))
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over axis 0: [m,n] -> [n].
    pub fn mean_axis0(&self) -> Result<Tensor> {
        let (m, _) = matrix_shape(self, "mean_axis0 input")?;
        Ok(self.sum_rows()?.scale(1.0 / m as f64))
    }

    /// Same values, detached from the tape (constant).
    pub fn detach(&self) -> Tensor {
        self.graph.push_rc(Op::Leaf, self.shape(), self.data(), false)
    }
}

/// Tile a vector [n] into [rows, n].
pub fn broadcast_row(v: &Tensor, rows: usize) -> Result<Tensor> {
    let s = v.shape();
    if s.len() != 1 {
        return Err(Error::dimension(format!("broadcast_row expects rank 1, got {s:?}")));
    }
    if rows == 0 {
        return Err(Error::dimension("broadcast_row to zero rows"));
    }
    let d = v.data();
    let mut out = Vec::with_capacity(rows * d.len());
    for _ in 0..rows {
        out.extend_from_slice(&d);
    }
    Ok(v.graph.push(Op::BroadcastRow { v: v.id }, vec![rows, s[0]], out, v.requires_grad()))
}

/// Fill a tensor of `shape` with a scalar's value.
pub fn fill_like(s: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(Error::dimension("fill_like source must be scalar"));
    }
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return Err(Error::dimension("fill_like target shape has zero elements"));
    }
    let v = s.item();
    Ok(s.graph.push(Op::FillLike { s: s.id }, shape.to_vec(), vec![v; numel], s.requires_grad()))
}

/// Select block `index` along the outermost axis: [T, rest..] -> [rest..].
pub fn slice_outer(x: &Tensor, index: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::dimension(format!("slice_outer expects rank >= 2, got {s:?}")));
    }
    if index >= s[0] {
        return Err(Error::dimension(format!("slice index {index} out of {} blocks", s[0])));
    }
    let inner: usize = s[1..].iter().product();
    let data = x.data()[index * inner..(index + 1) * inner].to_vec();
    Ok(x.graph.push(Op::SliceOuter { x: x.id, index }, s[1..].to_vec(), data, x.requires_grad()))
}

/// Embed [rest..] as block `index` of a zero tensor [outer, rest..].
pub fn pad_outer(x: &Tensor, index: usize, outer: usize) -> Result<Tensor> {
    if index >= outer {
        return Err(Error::dimension(format!("pad index {index} out of {outer} blocks")));
    }
    let s = x.shape();
    let inner = x.numel();
    let mut data = vec![0.0; outer * inner];
    data[index * inner..(index + 1) * inner].copy_from_slice(&x.data());
    let mut shape = Vec::with_capacity(s.len() + 1);
    shape.push(outer);
    shape.extend_from_slice(&s);
    Ok(x.graph.push(Op::PadOuter { x: x.id, index }, shape, data, x.requires_grad()))
}

/// Heaviside step with ties firing (v >= 0 -> 1); backward uses the ATan
/// surrogate d/dv [(1/pi) atan((pi/2) alpha v) + 1/2].
pub fn spike_heaviside_atan(v: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha > 0.0) {
        return Err(Error::validation(format!("surrogate width alpha must be > 0, got {alpha}")));
    }
    let data: Vec<f64> = v.data().iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect();
    Ok(v.graph.push(Op::SpikeStep { v: v.id, alpha }, v.shape(), data, v.requires_grad()))
}

pub(crate) fn im2col_op(x: &Tensor, geom: ConvGeom) -> Result<Tensor> {
    let data = kernels::im2col(&x.data(), &geom);
    Ok(x.graph.push(
        Op::Im2Col { x: x.id, geom },
        vec![geom.rows(), geom.patch_len()],
        data,
        x.requires_grad(),
    ))
}

pub(crate) fn col2im_op(cols: &Tensor, geom: ConvGeom) -> Result<Tensor> {
    let data = kernels::col2im(&cols.data(), &geom);
    Ok(cols.graph.push(
        Op::Col2Im { cols: cols.id, geom },
        vec![geom.b, geom.c, geom.h, geom.w],
        data,
        cols.requires_grad(),
    ))
}

pub(crate) fn cols_to_nchw(cols: &Tensor, b: usize, f: usize, oh: usize, ow: usize) -> Result<Tensor> {
    let data = kernels::cols_to_nchw(&cols.data(), b, f, oh, ow);
    Ok(cols.graph.push(
        Op::ColsToNchw { cols: cols.id, b, f, oh, ow },
        vec![b, f, oh, ow],
        data,
        cols.requires_grad(),
    ))
}

pub(crate) fn nchw_to_cols(x: &Tensor, b: usize, f: usize, oh: usize, ow: usize) -> Result<Tensor> {
    let data = kernels::nchw_to_cols(&x.data(), b, f, oh, ow);
    Ok(x.graph.push(
        Op::NchwToCols { x: x.id, b, f, oh, ow },
        vec![b * oh * ow, f],
        data,
        x.requires_grad(),
    ))
}

/// 2x2 average pooling with stride 2 on [B,C,H,W]; H and W must be even.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dimension(format!("avg_pool2 expects rank 4, got {s:?}")));
    }
    if s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::dimension(format!("avg_pool2 needs even spatial dims, got {s:?}")));
    }
    let data = kernels::avg_pool2(&x.data(), s[0], s[1], s[2], s[3]);
    Ok(x.graph.push(
        Op::AvgPool2(x.id),
        vec![s[0], s[1], s[2] / 2, s[3] / 2],
        data,
        x.requires_grad(),
    ))
}

pub(crate) fn upsample_pool2(gy: &Tensor) -> Result<Tensor> {
    let s = gy.shape();
    if s.len() != 4 {
        return Err(Error::dimension(format!("upsample_pool2 expects rank 4, got {s:?}")));
    }
    let data = kernels::upsample_pool2(&gy.data(), s[0], s[1], s[2], s[3]);
    Ok(gy.graph.push(
        Op::UpsamplePool2(gy.id),
        vec![s[0], s[1], s[2] * 2, s[3] * 2],
        data,
        gy.requires_grad(),
    ))
}

/// 2-D convolution: x[B,C,H,W] * w[F,C,k,k] + bias[F] -> [B,F,H',W'].
/// Lowered to im2col + matmul so its backward stays in primitive ops.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    x.expect_same_graph(w)?;
    x.expect_same_graph(bias)?;
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::dimension(format!(
            "conv2d expects x rank 4 and square weight [F,C,k,k], got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::dimension(format!(
            "conv2d channel mismatch: input has {}, weight expects {}",
            xs[1], ws[1]
        )));
    }
    if bias.shape() != vec![ws[0]] {
        return Err(Error::dimension(format!(
            "conv2d bias must be [{}], got {:?}",
            ws[0],
            bias.shape()
        )));
    }
    let geom = ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ws[2], stride, pad).ok_or_else(|| {
        Error::dimension(format!(
            "conv2d kernel {}x{} with stride {stride}, pad {pad} does not fit input {xs:?}",
            ws[2], ws[3]
        ))
    })?;
    let cols = im2col_op(x, geom)?;
    let wmat = w.reshape(&[ws[0], geom.patch_len()])?;
    let prod = cols.matmul(&wmat.transpose()?)?;
    let biased = prod.add(&broadcast_row(bias, geom.rows())?)?;
    cols_to_nchw(&biased, geom.b, ws[0], geom.oh, geom.ow)
}

/// Fully connected layer: x[B,D] * w[K,D]^T + bias[K] -> [B,K].
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.expect_same_graph(w)?;
    x.expect_same_graph(bias)?;
    let (b, d) = matrix_shape(x, "linear input")?;
    let (k, d2) = matrix_shape(w, "linear weight")?;
    if d != d2 {
        return Err(Error::dimension(format!(
            "linear expects input features {d} to match weight features {d2}"
        )));
    }
    if bias.shape() != vec![k] {
        return Err(Error::dimension(format!("linear bias must be [{k}], got {:?}", bias.shape())));
    }
    let _ = b;
    x.matmul(&w.transpose()?)?.add(&broadcast_row(bias, x.shape()[0])?)
}

/// Per-row max of z as a detached [B,K] constant. Subtracting it is exact for
/// softmax/log-softmax and keeps exp() in range.
fn detached_row_max(z: &Tensor) -> Result<Tensor> {
    let (b, k) = matrix_shape(z, "softmax input")?;
    let d = z.data();
    let mut m = vec![0.0; b * k];
    for i in 0..b {
        let row = &d[i * k..(i + 1) * k];
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        m[i * k..(i + 1) * k].fill(mx);
    }
    z.graph.constant(m, &[b, k])
}

/// Broadcast a [B] vector across columns into [B,K].
fn broadcast_col(v: &Tensor, cols: usize) -> Result<Tensor> {
    broadcast_row(v, cols)?.transpose()
}

/// Row-wise softmax on [B,K].
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    let (_, k) = matrix_shape(z, "softmax input")?;
    let shifted = z.sub(&detached_row_max(z)?)?;
    let e = shifted.exp();
    let sums = e.transpose()?.sum_rows()?;
    e.mul(&broadcast_col(&sums, k)?.recip())
}

/// Row-wise log-softmax on [B,K].
pub fn log_softmax(z: &Tensor) -> Result<Tensor> {
    let (_, k) = matrix_shape(z, "log_softmax input")?;
    let shifted = z.sub(&detached_row_max(z)?)?;
    let sums = shifted.exp().transpose()?.sum_rows()?;
    shifted.sub(&broadcast_col(&sums.ln(), k)?)
}

/// Mean over the batch of -sum_k target_k log softmax(logits)_k.
/// Differentiable in the logits and, for soft targets produced on the tape,
/// in the target side as well.
pub fn softmax_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    logits.expect_same_graph(target)?;
    let (b, k) = matrix_shape(logits, "cross-entropy logits")?;
    if target.shape() != vec![b, k] {
        return Err(Error::dimension(format!(
            "cross-entropy target shape {:?} does not match logits [{b}, {k}]",
            target.shape()
        )));
    }
    let td = target.data();
    for i in 0..b {
        let row_sum: f64 = td[i * k..(i + 1) * k].iter().sum();
        if (row_sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "cross-entropy target row {i} sums to {row_sum}, expected 1"
            )));
        }
    }
    let ls = log_softmax(logits)?;
    Ok(target.mul(&ls)?.sum_all().scale(-1.0 / b as f64))
}

/// sum((a-b)^2), the per-layer term of the gradient-matching objective.
pub fn sq_diff_sum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.sum_all())
}

/// One-hot rows as a detached constant [B,K].
pub fn one_hot(graph: &Graph, labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::validation(format!("label {l} out of range for {k} classes")));
        }
        data[i * k + l] = 1.0;
    }
    graph.constant(data, &[labels.len(), k])
}

/// Constant tensor sharing an existing buffer.
pub fn constant_rc(graph: &Graph, data: Rc<Vec<f64>>, shape: &[usize]) -> Result<Tensor> {
    graph.leaf_rc(data, shape, false)
}
