//! Forward kernels shared by the eager API and the tape.

use super::{NumericsError, Tensor};

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a, b));
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
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.require_matrix("matmul_nt")?;
    let (n, k2) = b.require_matrix("matmul_nt")?;
    if k != k2 {
        return Err(shape_err("matmul_nt", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (k, m) = a.require_matrix("matmul_tn")?;
    let (k2, n) = b.require_matrix("matmul_tn")?;
    if k != k2 {
        return Err(shape_err("matmul_tn", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Splits a shape into `(outer, axis_len, inner)` strides around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), NumericsError> {
    if axis >= shape.len() {
        return Err(NumericsError::Axis {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    softmax_masked(x, axis, None)
}

/// Softmax along `axis` where entries with `mask[i] == false` are excluded
/// (treated as −∞ scores, giving exactly zero weight).
pub fn softmax_masked(x: &Tensor, axis: usize, mask: Option<&[bool]>) -> Result<Tensor, NumericsError> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(NumericsError::Invalid(format!(
                "mask has {} entries for tensor of shape {:?}",
                m.len(),
                x.shape()
            )));
        }
    }
    let allowed = |idx: usize| mask.is_none_or(|m| m[idx]);
    let xd = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for j in 0..len {
                if allowed(idx(j)) {
                    any = true;
                    let v = xd[idx(j)];
                    // NaN must reach the output rather than be skipped by f64::max
                    max = if v.is_nan() { v } else { max.max(v) };
                    if max.is_nan() {
                        break;
                    }
                }
            }
            if !any {
                return Err(NumericsError::FullyMasked { slice: o * inner + i });
            }
            let mut total = 0.0;
            for j in 0..len {
                if allowed(idx(j)) {
                    let e = (xd[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Layer normalization output plus the per-row statistics needed for backward.
pub(crate) struct LayerNormParts {
    pub output: Tensor,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_parts(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<LayerNormParts, NumericsError> {
    if !(eps > 0.0) {
        return Err(NumericsError::Eps(eps));
    }
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(shape_err("layer_norm", x, gain));
    }
    let rows = x.rows();
    let (g, b) = (gain.data(), bias.data());
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..n {
            let xh = (row[j] - mean) * inv;
            normalized[r * n + j] = xh;
            out[r * n + j] = g[j] * xh + b[j];
        }
    }
    Ok(LayerNormParts {
        output: Tensor::new(x.shape().to_vec(), out)?,
        normalized,
        inv_std,
    })
}

/// Normalizes the last axis to zero mean and unit variance, then scales by
/// `gain` and shifts by `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    layer_norm_parts(x, gain, bias, eps).map(|p| p.output)
}

/// Adds a length-`n` vector to every row of an `m×n` matrix.
pub fn add_row(x: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let n = x.cols();
    if b.len() != n {
        return Err(shape_err("add_row", x, b));
    }
    let bd = b.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + bd[i % n])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `x·w + b` with `b` broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    add_row(&matmul(x, w)?, b)
}
