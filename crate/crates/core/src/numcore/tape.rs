//! Reverse-mode tape.
//!
//! A `Tape` lives for exactly one forward/backward pass. Every operation
//! appends a node holding its output value; `backward` walks the nodes in
//! reverse and accumulates vector-Jacobian products. Parameters enter the
//! tape through [`Tape::param`], which binds a [`ParamId`] so that gradients
//! can be written back into the owning [`ParamStore`].

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::array::split_axis;
use super::ops::{gemm_nn, gemm_nt, gemm_tn, inverse_perm, layer_norm_into, softmax_into};
use super::{Array, NumError, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    ScaleRows { x: Var, s: Var },
    MulScalar { x: Var, s: Var },
    Scale { x: Var, c: f64 },
    Relu(Var),
    Abs(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, rstd: Vec<f64> },
    Concat { parts: Vec<Var>, axis: usize },
    Gather { x: Var, indices: Vec<usize>, axis: usize },
    GatherBatched { x: Var, indices: Vec<usize>, k: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Sum(Var),
    TopHalf { x: Var, keep: Vec<bool> },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    flops: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fingerprint of the branch taken by every piecewise op (ReLU, abs,
    /// top_half). Passes with equal fingerprints lie in one smooth region.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => self.value(*x).data().iter().for_each(|v| (*v > 0.0).hash(&mut h)),
                Op::TopHalf { keep, .. } => keep.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add FLOPs (2·m·k·n per product) recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter; repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    // ── products ───────────────────────────────────────────────────

    /// `x · w (+ b)` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let d_in = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != d_in || b.is_some_and(|b| self.value(b).len() != ws[1]) {
            return Err(NumError::Shape(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let d_out = ws[1];
        let rows = self.value(x).len() / d_in.max(1);
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in 0..rows {
                out[r * d_out..(r + 1) * d_out].copy_from_slice(bias);
            }
        }
        gemm_nn(self.value(x).data(), self.value(w).data(), &mut out, rows, d_in, d_out);
        self.flops += 2 * (rows * d_in * d_out) as u64;
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        Ok(self.push(Array::new(shape, out)?, Op::Linear { x, w, b }))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(NumError::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        self.linear(a, b, None)
    }

    /// Batched product `[B,M,K] · [B,K,N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.batched(a, b, false)
    }

    /// Batched product with the second operand transposed: `[B,M,K] · [B,N,K]ᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.batched(a, b, true)
    }

    fn batched(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || NumError::Shape(format!("bmm(trans_b={trans_b}): {sa:?} x {sb:?}"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let av = &ad[i * m * k..(i + 1) * m * k];
            let bv = &bd[i * k * n..(i + 1) * k * n];
            let cv = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(av, bv, cv, m, k, n);
            } else {
                gemm_nn(av, bv, cv, m, k, n);
            }
        }
        self.flops += 2 * (batch * m * k * n) as u64;
        Ok(self.push(Array::new(vec![batch, m, n], out)?, Op::Bmm { a, b, trans_b }))
    }

    // ── elementwise ────────────────────────────────────────────────

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Array, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumError::Shape(format!("{name}: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Array::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    fn row_op(&mut self, x: Var, row: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Array, NumError> {
        let (vx, vr) = (self.value(x), self.value(row));
        let width = *vx.shape().last().unwrap_or(&0);
        if vr.len() != width {
            return Err(NumError::Shape(format!("{name}: {:?} with row {:?}", vx.shape(), vr.shape())));
        }
        let r = vr.data();
        let data = vx
            .data()
            .chunks(width.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| f(*a, *b)))
            .collect();
        Array::new(vx.shape().to_vec(), data)
    }

    /// Adds a vector across the last axis.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumError> {
        let v = self.row_op(x, row, "add_row", |a, b| a + b)?;
        Ok(self.push(v, Op::AddRow { x, row }))
    }

    /// Multiplies by a vector across the last axis.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, NumError> {
        let v = self.row_op(x, row, "mul_row", |a, b| a * b)?;
        Ok(self.push(v, Op::MulRow { x, row }))
    }

    /// Scales each last-axis row of `x` by the matching entry of `s`, where
    /// `s` holds one value per row.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, NumError> {
        let (vx, vs) = (self.value(x), self.value(s));
        let width = *vx.shape().last().unwrap_or(&0);
        if width == 0 || vx.len() / width != vs.len() {
            return Err(NumError::Shape(format!("scale_rows: {:?} by {:?}", vx.shape(), vs.shape())));
        }
        let data = vx
            .data()
            .chunks(width)
            .zip(vs.data())
            .flat_map(|(chunk, &f)| chunk.iter().map(move |v| v * f))
            .collect();
        let v = Array::new(vx.shape().to_vec(), data)?;
        Ok(self.push(v, Op::ScaleRows { x, s }))
    }

    /// Multiplies by a one-element variable.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, NumError> {
        if self.value(s).len() != 1 {
            return Err(NumError::Shape(format!("mul_scalar by {:?}", self.shape(s))));
        }
        let f = self.value(s).item();
        let v = self.value(x).map(|a| a * f);
        Ok(self.push(v, Op::MulScalar { x, s }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.push(v, Op::Abs(x))
    }

    // ── normalizations ─────────────────────────────────────────────

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumError> {
        let vx = self.value(x);
        let (outer, len, inner) = split_axis(vx.shape(), axis)?;
        let mut out = vec![0.0; vx.len()];
        softmax_into(vx.data(), &mut out, outer, len, inner);
        let v = Array::new(vx.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var, NumError> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.softmax(x, axis)
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let width = *vx.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; vx.len()];
        let rstd = layer_norm_into(vx.data(), &mut out, width, eps);
        let v = Array::new(vx.shape().to_vec(), out).expect("same shape");
        self.push(v, Op::LayerNorm { x, rstd })
    }

    // ── structure ──────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumError> {
        let arrays: Vec<&Array> = parts.iter().map(|&p| self.value(p)).collect();
        let v = super::ops::concat(&arrays, axis)?;
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn gather(&mut self, x: Var, indices: &[usize], axis: usize) -> Result<Var, NumError> {
        let v = super::ops::gather(self.value(x), indices, axis)?;
        Ok(self.push(
            v,
            Op::Gather {
                x,
                indices: indices.to_vec(),
                axis,
            },
        ))
    }

    /// From `x: [B, N, D]` selects, for each batch entry `b`, the rows
    /// `indices[b*k .. (b+1)*k]`, giving `[B, k, D]`.
    pub fn gather_batched(&mut self, x: Var, indices: &[usize], k: usize) -> Result<Var, NumError> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 3 || indices.len() != s[0] * k {
            return Err(NumError::Shape(format!(
                "gather_batched: x {s:?} with {} indices, k = {k}",
                indices.len()
            )));
        }
        let (batch, n, d) = (s[0], s[1], s[2]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(NumError::Index { index: bad, len: n });
        }
        let mut out = Vec::with_capacity(batch * k * d);
        for b in 0..batch {
            for &ix in &indices[b * k..(b + 1) * k] {
                let start = (b * n + ix) * d;
                out.extend_from_slice(&vx.data()[start..start + d]);
            }
        }
        let v = Array::new(vec![batch, k, d], out)?;
        Ok(self.push(
            v,
            Op::GatherBatched {
                x,
                indices: indices.to_vec(),
                k,
            },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumError> {
        let vx = self.value(x);
        let (outer, full, inner) = split_axis(vx.shape(), axis)?;
        if start + len > full {
            return Err(NumError::Index {
                index: start + len,
                len: full,
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        let v = Array::new(shape, out)?;
        Ok(self.push(v, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, NumError> {
        let v = super::ops::permute(self.value(x), perm)?;
        Ok(self.push(
            v,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Zeroes every entry strictly below the median of its last-axis row.
    /// The surviving pattern is a constant of the pass.
    pub fn top_half(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let width = *vx.shape().last().unwrap_or(&1);
        let mut keep = Vec::with_capacity(vx.len());
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(width.max(1)) {
            let med = median(row);
            for &v in row {
                let k = v >= med;
                keep.push(k);
                out.push(if k { v } else { 0.0 });
            }
        }
        let v = Array::new(vx.shape().to_vec(), out).expect("same shape");
        self.push(v, Op::TopHalf { x, keep })
    }

    // ── backward ───────────────────────────────────────────────────

    /// Computes gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients, NumError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NumError::NothingRecorded);
        }
        if self.value(loss).len() != 1 {
            return Err(NumError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs backward from `loss` and adds each bound parameter's gradient
    /// into `store`. Parameters the loss does not reach are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumError> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.bound {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (d_in, d_out) = (ws[0], ws[1]);
                let rows = g.len() / d_out.max(1);
                let mut dx = vec![0.0; rows * d_in];
                gemm_nt(g, val(*w), &mut dx, rows, d_out, d_in);
                accumulate(grads, *x, &dx);
                let mut dw = vec![0.0; d_in * d_out];
                gemm_tn(val(*x), g, &mut dw, d_in, rows, d_out);
                accumulate(grads, *w, &dw);
                if let Some(b) = b {
                    let mut db = vec![0.0; d_out];
                    for chunk in g.chunks(d_out) {
                        for (d, v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (val(*a), val(*b));
                let mut da = vec![0.0; batch * m * k];
                let mut db = vec![0.0; batch * k * n];
                for bi in 0..batch {
                    let gv = &g[bi * m * n..(bi + 1) * m * n];
                    let av = &ad[bi * m * k..(bi + 1) * m * k];
                    let bv = &bd[bi * k * n..(bi + 1) * k * n];
                    let dav = &mut da[bi * m * k..(bi + 1) * m * k];
                    let dbv = &mut db[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        gemm_nn(gv, bv, dav, m, n, k);
                        gemm_tn(gv, av, dbv, n, m, k);
                    } else {
                        gemm_nt(gv, bv, dav, m, n, k);
                        gemm_tn(av, gv, dbv, k, m, n);
                    }
                }
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::AddRow { x, row } => {
                accumulate(grads, *x, g);
                let w = self.value(*row).len();
                let mut dr = vec![0.0; w];
                for chunk in g.chunks(w) {
                    for (d, v) in dr.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                accumulate(grads, *row, &dr);
            }
            Op::MulRow { x, row } => {
                let r = val(*row);
                let w = r.len();
                let xv = val(*x);
                let mut dx = vec![0.0; g.len()];
                let mut dr = vec![0.0; w];
                for (c, (gc, xc)) in g.chunks(w).zip(xv.chunks(w)).enumerate() {
                    for j in 0..w {
                        dx[c * w + j] = gc[j] * r[j];
                        dr[j] += gc[j] * xc[j];
                    }
                }
                accumulate(grads, *x, &dx);
                accumulate(grads, *row, &dr);
            }
            Op::ScaleRows { x, s } => {
                let sv = val(*s);
                let w = g.len() / sv.len();
                let xv = val(*x);
                let mut dx = vec![0.0; g.len()];
                let mut ds = vec![0.0; sv.len()];
                for r in 0..sv.len() {
                    for j in r * w..(r + 1) * w {
                        dx[j] = g[j] * sv[r];
                        ds[r] += g[j] * xv[j];
                    }
                }
                accumulate(grads, *x, &dx);
                accumulate(grads, *s, &ds);
            }
            Op::MulScalar { x, s } => {
                let f = val(*s)[0];
                let dx: Vec<f64> = g.iter().map(|v| v * f).collect();
                let ds: f64 = g.iter().zip(val(*x)).map(|(g, x)| g * x).sum();
                accumulate(grads, *x, &dx);
                accumulate(grads, *s, &[ds]);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::Abs(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -*g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis).expect("recorded axis");
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| y[base + j * inner] * g[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.len()];
                for (r, &inv) in rstd.iter().enumerate() {
                    let (gr, yr) = (&g[r * w..(r + 1) * w], &y[r * w..(r + 1) * w]);
                    let mean_g = gr.iter().sum::<f64>() / w as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    for j in 0..w {
                        dx[r * w + j] = inv * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    let mut dp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        dp.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                    }
                    accumulate(grads, p, &dp);
                    offset += chunk;
                }
            }
            Op::Gather { x, indices, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis).expect("recorded axis");
                let mut dx = vec![0.0; outer * len * inner];
                let k = indices.len();
                for o in 0..outer {
                    for (slot, &ix) in indices.iter().enumerate() {
                        let src = (o * k + slot) * inner;
                        let dst = (o * len + ix) * inner;
                        for j in 0..inner {
                            dx[dst + j] += g[src + j];
                        }
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::GatherBatched { x, indices, k } => {
                let s = self.shape(*x);
                let (batch, n, d) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; batch * n * d];
                for b in 0..batch {
                    for (slot, &ix) in indices[b * k..(b + 1) * k].iter().enumerate() {
                        let src = (b * k + slot) * d;
                        let dst = (b * n + ix) * d;
                        for j in 0..d {
                            dx[dst + j] += g[src + j];
                        }
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis).expect("recorded axis");
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(grads, *x, &dx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Permute { x, perm } => {
                let ga = Array::new(node.value.shape().to_vec(), g.to_vec()).expect("grad shape");
                let back = super::ops::permute(&ga, &inverse_perm(perm)).expect("valid perm");
                accumulate(grads, *x, back.data());
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                accumulate(grads, *x, &dx);
            }
            Op::TopHalf { x, keep } => {
                let dx: Vec<f64> = g.iter().zip(keep).map(|(g, &k)| if k { *g } else { 0.0 }).collect();
                accumulate(grads, *x, &dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(g) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
