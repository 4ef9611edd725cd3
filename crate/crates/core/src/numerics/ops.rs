//! Pure tensor kernels shared by the eager and taped execution paths.

use super::{NumericsError, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
// 1/sqrt(2*pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(NumericsError::InvalidAxis { axis, rank: shape.len() });
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    if extent == 0 {
        return Ok(out);
    }
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let idx = |k: usize| base + k * inner;
            let mut max = f64::NEG_INFINITY;
            for k in 0..extent {
                max = max.max(data[idx(k)]);
            }
            let mut sum = 0.0;
            for k in 0..extent {
                let e = (data[idx(k)] - max).exp();
                data[idx(k)] = e;
                sum += e;
            }
            for k in 0..extent {
                data[idx(k)] /= sum;
            }
        }
    }
    Ok(out)
}

/// In-place stabilized softmax of one contiguous slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row mean and reciprocal standard deviation used by layer norm.
#[derive(Clone, Copy, Debug)]
pub struct NormStats {
    pub mean: f64,
    pub rstd: f64,
}

/// Layer normalization over the last axis.
pub fn layer_norm(
    x: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<Tensor, NumericsError> {
    layer_norm_with_stats(x, gain, bias, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_with_stats(
    x: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Tensor, Vec<NormStats>), NumericsError> {
    let d = x.last_dim();
    if d == 0 || x.rank() == 0 {
        return Err(NumericsError::EmptyAxis { op: "layer_norm" });
    }
    if gain.len() != d || bias.len() != d {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("last axis {d}, gain {}, bias {}", gain.len(), bias.len()),
        });
    }
    if !(eps > 0.0) {
        return Err(NumericsError::InvalidArgument { op: "layer_norm", detail: format!("eps {eps}") });
    }
    let mut out = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(x.num_rows());
    for r in 0..x.num_rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[k] - mean) * rstd * gain[k] + bias[k];
        }
        stats.push(NormStats { mean, rstd });
    }
    Ok((out, stats))
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

/// Derivative of exact GELU: `Phi(x) + x * phi(x)`.
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Four-accumulator dot product; fixed summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Strided view of a row-major matrix for the GEMM wrapper.
#[derive(Clone, Copy)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl MatView {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, row_stride: self.col_stride, col_stride: self.row_stride }
    }
}

/// `c = beta * c + a * b` for strided views.
pub(crate) fn gemm(a: &[f64], av: MatView, b: &[f64], bv: MatView, beta: f64, c: &mut [f64], cv: MatView) {
    assert_eq!(av.cols, bv.rows);
    assert_eq!(av.rows, cv.rows);
    assert_eq!(bv.cols, cv.cols);
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = (i as isize * cv.row_stride + j as isize * cv.col_stride) as usize;
                c[idx] *= beta;
            }
        }
        return;
    }
    let span = |v: MatView| {
        ((v.rows as isize - 1) * v.row_stride + (v.cols as isize - 1) * v.col_stride) as usize + 1
    };
    assert!(span(av) <= a.len() && span(bv) <= b.len() && span(cv) <= c.len());
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.row_stride,
            av.col_stride,
            b.as_ptr(),
            bv.row_stride,
            bv.col_stride,
            beta,
            c.as_mut_ptr(),
            cv.row_stride,
            cv.col_stride,
        );
    }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize), NumericsError> {
    if t.rank() != 2 {
        return Err(NumericsError::ShapeMismatch { op, detail: format!("expected rank 2, got {:?}", t.shape()) });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = as_matrix(a, "matmul")?;
    let (k2, n) = as_matrix(b, "matmul")?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(a.data(), MatView::dense(m, k), b.data(), MatView::dense(k, n), 0.0, out.data_mut(), MatView::dense(m, n));
    Ok(out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = as_matrix(a, "matmul_nt")?;
    let (n, k2) = as_matrix(b, "matmul_nt")?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_nt",
            detail: format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(a.data(), MatView::dense(m, k), b.data(), MatView::dense(n, k).t(), 0.0, out.data_mut(), MatView::dense(m, n));
    Ok(out)
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
