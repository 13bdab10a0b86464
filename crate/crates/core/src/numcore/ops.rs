//! Pure (non-recording) array operations and the raw kernels the tape reuses.

use super::array::split_axis;
use super::{Array, NumError};

// ── kernels ─────────────────────────────────────────────────────────

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(src[base + j * inner]);
            }
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[base + j * inner] - max).exp();
                dst[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                dst[base + j * inner] /= total;
            }
        }
    }
}

/// Normalizes each contiguous row of length `width`; returns per-row `1/σ`.
pub(crate) fn layer_norm_into(src: &[f64], dst: &mut [f64], width: usize, eps: f64) -> Vec<f64> {
    let rows = src.len() / width;
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let x = &src[r * width..(r + 1) * width];
        let mean = x.iter().sum::<f64>() / width as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (d, v) in dst[r * width..(r + 1) * width].iter_mut().zip(x) {
            *d = (v - mean) * inv;
        }
        rstd.push(inv);
    }
    rstd
}

// ── public pure ops ─────────────────────────────────────────────────

fn check_same(a: &Array, b: &Array, op: &str) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Matrix product of two 2-D arrays.
pub fn matmul(a: &Array, b: &Array) -> Result<Array, NumError> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NumError::Shape(format!(
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Array::new(vec![m, n], out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(a: &Array, axis: usize) -> Result<Array, NumError> {
    let (outer, len, inner) = split_axis(a.shape(), axis)?;
    let mut out = vec![0.0; a.len()];
    softmax_into(a.data(), &mut out, outer, len, inner);
    Array::new(a.shape().to_vec(), out)
}

pub fn relu(a: &Array) -> Array {
    a.map(|x| x.max(0.0))
}

pub fn add(a: &Array, b: &Array) -> Result<Array, NumError> {
    check_same(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Array::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Array, b: &Array) -> Result<Array, NumError> {
    check_same(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Array::new(a.shape().to_vec(), data)
}

/// Concatenates arrays that agree on every axis except `axis`.
pub fn concat(parts: &[&Array], axis: usize) -> Result<Array, NumError> {
    let first = parts
        .first()
        .ok_or_else(|| NumError::Shape("concat of zero arrays".into()))?;
    let ndim = first.ndim();
    if axis >= ndim {
        return Err(NumError::Axis { axis, ndim });
    }
    for p in parts {
        let ok = p.ndim() == ndim
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(NumError::Shape(format!(
                "concat on axis {axis}: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Array::new(shape, out)
}

/// Selects `indices` along `axis`, in the given order (repeats allowed).
pub fn gather(a: &Array, indices: &[usize], axis: usize) -> Result<Array, NumError> {
    let (outer, len, inner) = split_axis(a.shape(), axis)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(NumError::Index { index: bad, len });
    }
    let mut out = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &ix in indices {
            let start = (o * len + ix) * inner;
            out.extend_from_slice(&a.data()[start..start + inner]);
        }
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = indices.len();
    Array::new(shape, out)
}

/// Normalizes along the last axis to zero mean and unit variance (no affine).
pub fn layer_norm(a: &Array, eps: f64) -> Array {
    let width = *a.shape().last().unwrap_or(&1);
    let mut out = vec![0.0; a.len()];
    layer_norm_into(a.data(), &mut out, width, eps);
    Array::new(a.shape().to_vec(), out).expect("same shape")
}

/// `x · w + b` over the last axis of `x`; `w` is `in × out`, `b` has length `out`.
pub fn linear(x: &Array, w: &Array, b: &Array) -> Result<Array, NumError> {
    let d_in = *x.shape().last().unwrap_or(&0);
    if w.ndim() != 2 || w.shape()[0] != d_in || b.len() != w.shape()[1] {
        return Err(NumError::Shape(format!(
            "linear: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let rows = x.len() / d_in.max(1);
    let d_out = w.shape()[1];
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        out[r * d_out..(r + 1) * d_out].copy_from_slice(b.data());
    }
    gemm_nn(x.data(), w.data(), &mut out, rows, d_in, d_out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Array::new(shape, out)
}

/// Stack of linear layers with ReLU between them (none after the last).
pub fn mlp(x: &Array, layers: &[(&Array, &Array)]) -> Result<Array, NumError> {
    let mut h = x.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        h = linear(&h, w, b)?;
        if i + 1 < layers.len() {
            h = relu(&h);
        }
    }
    Ok(h)
}

/// General axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute(a: &Array, perm: &[usize]) -> Result<Array, NumError> {
    let nd = a.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(NumError::Shape(format!(
            "permute {perm:?} invalid for {:?}",
            a.shape()
        )));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * a.shape()[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(a.len());
    let mut idx = vec![0usize; nd];
    let src = a.data();
    for _ in 0..a.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Array::new(out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
