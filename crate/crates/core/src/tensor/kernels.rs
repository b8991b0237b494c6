//! Forward kernels and their adjoints on plain tensors.
//!
//! The autodiff ops in `ops.rs` are thin wrappers that call these. Everything
//! here is single-threaded and iterates in a fixed order, so results are
//! bitwise reproducible.

use super::Tensor;
use crate::error::{Error, Result};

/// Zero padding applied on both ends of the length axis of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(K-1)/2` zeros on each side; only defined for odd `K`.
    Same,
    /// Length-preserving for any `K`: `(K-1)/2` on the left, the rest on the right.
    SameAsymmetric,
    Explicit { left: usize, right: usize },
}

impl Padding {
    pub fn resolve(self, k: usize) -> Result<(usize, usize)> {
        match self {
            Padding::Same if k % 2 == 0 => Err(Error::InvalidArgument(format!(
                "same padding needs an odd kernel size, got {k}"
            ))),
            Padding::Same | Padding::SameAsymmetric => {
                let left = (k - 1) / 2;
                Ok((left, k - 1 - left))
            }
            Padding::Explicit { left, right } => Ok((left, right)),
        }
    }
}

// ---------------------------------------------------------------- broadcasting

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (right-aligned), zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every flat index of `out` together with the matching flat offsets
/// into the broadcast operands.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let n: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..n {
        f(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub fn broadcast_binary(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shape(op, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
    Tensor::new(out, data)
}

/// Sum `g` (shaped like a broadcast result) back down to `shape`.
pub fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let out = g.shape().to_vec();
    let s = broadcast_strides(shape, &out);
    let zero = vec![0; out.len()];
    let mut acc = Tensor::zeros(shape);
    let gd = g.data();
    let ad = acc.data_mut();
    for_each_broadcast(&out, &s, &zero, |i, ia, _| ad[ia] += gd[i]);
    acc
}

// ---------------------------------------------------------------- convolution

struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len_in: usize,
    len_out: usize,
    k: usize,
    groups: usize,
    left: usize,
}

fn batch_view(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, l] => Ok((1, c, l)),
        [b, c, l] => Ok((b, c, l)),
        ref s => Err(Error::shape(op, format!("expected [C, L] or [B, C, L], got {s:?}"))),
    }
}

fn out_shape(x: &Tensor, batch: usize, c: usize, l: usize) -> Vec<usize> {
    if x.rank() == 2 {
        vec![c, l]
    } else {
        vec![batch, c, l]
    }
}

fn check_bias(bias: Option<&Tensor>, c_out: usize, op: &'static str) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c_out] => Err(Error::shape(op, format!("bias {:?} for {c_out} channels", b.shape()))),
        _ => Ok(()),
    }
}

/// Convolution dims; `w` is `[C_out, C_in/groups, K]`.
fn conv_dims(x: &Tensor, w: &Tensor, groups: usize, padding: Padding) -> Result<ConvDims> {
    let (batch, c_in, len_in) = batch_view(x, "conv1d")?;
    let [c_out, cin_g, k] = *w.shape() else {
        return Err(Error::shape("conv1d", format!("kernel must be [C_out, C_in/g, K], got {:?}", w.shape())));
    };
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups {
        return Err(Error::shape(
            "conv1d",
            format!("input channels {c_in}, kernel {:?}, groups {groups}", w.shape()),
        ));
    }
    let (left, right) = padding.resolve(k)?;
    let padded = len_in + left + right;
    if padded < k {
        return Err(Error::shape("conv1d", format!("kernel {k} longer than padded input {padded}")));
    }
    Ok(ConvDims { batch, c_in, c_out, len_in, len_out: padded - k + 1, k, groups, left })
}

/// Transposed-convolution dims; `w` is `[C_in, C_out/groups, K]`.
fn conv_t_dims(y: &Tensor, w: &Tensor, groups: usize, padding: Padding) -> Result<ConvDims> {
    let (batch, c_in, len_in) = batch_view(y, "conv_transpose1d")?;
    let [wc_in, cout_g, k] = *w.shape() else {
        return Err(Error::shape(
            "conv_transpose1d",
            format!("kernel must be [C_in, C_out/g, K], got {:?}", w.shape()),
        ));
    };
    if groups == 0 || wc_in != c_in || c_in % groups != 0 {
        return Err(Error::shape(
            "conv_transpose1d",
            format!("input channels {c_in}, kernel {:?}, groups {groups}", w.shape()),
        ));
    }
    let (left, right) = padding.resolve(k)?;
    let len_out = (len_in + k - 1)
        .checked_sub(left + right)
        .filter(|&l| l > 0)
        .ok_or_else(|| Error::shape("conv_transpose1d", "padding exceeds output length"))?;
    Ok(ConvDims { batch, c_in, c_out: cout_g * groups, len_in, len_out, k, groups, left })
}

/// Index range of `t` for which `t + j - left` lands inside `[0, len)`.
#[inline]
fn valid_range(j: usize, left: usize, len_src: usize, len_t: usize) -> (usize, usize) {
    let lo = left.saturating_sub(j);
    let hi = (len_src + left).saturating_sub(j).min(len_t);
    (lo, hi.max(lo))
}

/// Cross-correlation with zero padding:
/// `out[b,o,t] = bias[o] + Σ_{i,j} w[o,i,j] · x[b, g·C_in/g + i, t + j − left]`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize, padding: Padding) -> Result<Tensor> {
    let d = conv_dims(x, w, groups, padding)?;
    check_bias(bias, d.c_out, "conv1d")?;
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let mut out = vec![0.0; d.batch * d.c_out * d.len_out];
    let (xd, wd) = (x.data(), w.data());
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + o) * d.len_out..][..d.len_out];
            if let Some(bias) = bias {
                orow.fill(bias.data()[o]);
            }
            let g = o / cout_g;
            for il in 0..cin_g {
                let i = g * cin_g + il;
                let xrow = &xd[(b * d.c_in + i) * d.len_in..][..d.len_in];
                for j in 0..d.k {
                    let wv = wd[(o * cin_g + il) * d.k + j];
                    let (lo, hi) = valid_range(j, d.left, d.len_in, d.len_out);
                    for t in lo..hi {
                        orow[t] += wv * xrow[t + j - d.left];
                    }
                }
            }
        }
    }
    Tensor::new(out_shape(x, d.batch, d.c_out, d.len_out), out)
}

/// Gradient of [`conv1d`] with respect to its kernel.
pub fn conv1d_grad_weight(x: &Tensor, grad_out: &Tensor, w_shape: &[usize], groups: usize, padding: Padding) -> Result<Tensor> {
    let d = conv_dims(x, &Tensor::zeros(w_shape), groups, padding)?;
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let mut gw = Tensor::zeros(w_shape);
    let (xd, gd) = (x.data(), grad_out.data());
    let gwd = gw.data_mut();
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let grow = &gd[(b * d.c_out + o) * d.len_out..][..d.len_out];
            let g = o / cout_g;
            for il in 0..cin_g {
                let xrow = &xd[(b * d.c_in + g * cin_g + il) * d.len_in..][..d.len_in];
                for j in 0..d.k {
                    let (lo, hi) = valid_range(j, d.left, d.len_in, d.len_out);
                    let s: f64 = (lo..hi).map(|t| grow[t] * xrow[t + j - d.left]).sum();
                    gwd[(o * cin_g + il) * d.k + j] += s;
                }
            }
        }
    }
    Ok(gw)
}

/// Adjoint of [`conv1d`] with respect to its input, plus an optional bias:
/// `out[b,o,s] = bias[o] + Σ_{i,j} w[i,o,j] · y[b,i,t]` over `s = t + j − left`.
pub fn conv_transpose1d(y: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize, padding: Padding) -> Result<Tensor> {
    let d = conv_t_dims(y, w, groups, padding)?;
    check_bias(bias, d.c_out, "conv_transpose1d")?;
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let mut out = vec![0.0; d.batch * d.c_out * d.len_out];
    let (yd, wd) = (y.data(), w.data());
    for b in 0..d.batch {
        if let Some(bias) = bias {
            for o in 0..d.c_out {
                out[(b * d.c_out + o) * d.len_out..][..d.len_out].fill(bias.data()[o]);
            }
        }
        for i in 0..d.c_in {
            let g = i / cin_g;
            let yrow = &yd[(b * d.c_in + i) * d.len_in..][..d.len_in];
            for ol in 0..cout_g {
                let o = g * cout_g + ol;
                let orow = &mut out[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for j in 0..d.k {
                    let wv = wd[(i * cout_g + ol) * d.k + j];
                    // s = t + j - left must lie in [0, len_out); t in [0, len_in)
                    let (lo, hi) = valid_range(j, d.left, d.len_out, d.len_in);
                    for t in lo..hi {
                        orow[t + j - d.left] += wv * yrow[t];
                    }
                }
            }
        }
    }
    Tensor::new(out_shape(y, d.batch, d.c_out, d.len_out), out)
}

/// Gradient of [`conv_transpose1d`] with respect to its kernel.
pub fn conv_transpose1d_grad_weight(
    y: &Tensor,
    grad_out: &Tensor,
    w_shape: &[usize],
    groups: usize,
    padding: Padding,
) -> Result<Tensor> {
    let d = conv_t_dims(y, &Tensor::zeros(w_shape), groups, padding)?;
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let mut gw = Tensor::zeros(w_shape);
    let (yd, gd) = (y.data(), grad_out.data());
    let gwd = gw.data_mut();
    for b in 0..d.batch {
        for i in 0..d.c_in {
            let g = i / cin_g;
            let yrow = &yd[(b * d.c_in + i) * d.len_in..][..d.len_in];
            for ol in 0..cout_g {
                let o = g * cout_g + ol;
                let grow = &gd[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for j in 0..d.k {
                    let (lo, hi) = valid_range(j, d.left, d.len_out, d.len_in);
                    let s: f64 = (lo..hi).map(|t| yrow[t] * grow[t + j - d.left]).sum();
                    gwd[(i * cout_g + ol) * d.k + j] += s;
                }
            }
        }
    }
    Ok(gw)
}

/// Sum of `g` over every axis except the channel axis (axis -2).
pub fn channel_sums(g: &Tensor) -> Tensor {
    let (batch, c, l) = batch_view(g, "channel_sums").expect("conv output shape");
    let mut out = vec![0.0; c];
    for b in 0..batch {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g.data()[(b * c + ch) * l..][..l].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(out)
}

// ---------------------------------------------------------------- dense maps

fn rows_of(x: &Tensor) -> (usize, usize) {
    let d = *x.shape().last().unwrap();
    (x.numel() / d, d)
}

/// `x[.., D_in] · w[D_in, D_out] + bias`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (rows, d_in) = rows_of(x);
    let [w_in, d_out] = *w.shape() else {
        return Err(Error::shape("linear", format!("weight must be [D_in, D_out], got {:?}", w.shape())));
    };
    if w_in != d_in {
        return Err(Error::shape("linear", format!("input dim {d_in} vs weight {:?}", w.shape())));
    }
    check_bias(bias, d_out, "linear")?;
    let mut out = vec![0.0; rows * d_out];
    gemm_acc(x.data(), w.data(), &mut out, rows, d_in, d_out);
    if let Some(b) = bias {
        for row in out.chunks_mut(d_out) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(shape, out)
}

/// `out[m,n] += Σ_k a[m,k] b[k,n]`, all row-major.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..][..k];
        let orow = &mut out[r * n..][..n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += Σ_k a[k,m] b[k,n]` (a transposed).
pub(crate) fn gemm_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let arow = &a[kk * m..][..m];
        let brow = &b[kk * n..][..n];
        for (r, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[r * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += Σ_k a[m,k] b[n,k]` (b transposed).
pub(crate) fn gemm_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..][..k];
        for c in 0..n {
            let brow = &b[c * k..][..k];
            out[r * n + c] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Gradients of [`linear`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (rows, d_in) = rows_of(x);
    let d_out = w.shape()[1];
    let mut gx = vec![0.0; rows * d_in];
    gemm_a_bt_acc(g.data(), w.data(), &mut gx, rows, d_out, d_in);
    let mut gw = vec![0.0; d_in * d_out];
    gemm_at_b_acc(x.data(), g.data(), &mut gw, d_in, rows, d_out);
    let mut gb = vec![0.0; d_out];
    for row in g.data().chunks(d_out) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).unwrap(),
        Tensor::new(vec![d_in, d_out], gw).unwrap(),
        Tensor::from_vec(gb),
    )
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] || a.shape()[ra - 1] != b.shape()[rb - 2] {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let batch: usize = a.shape()[..ra - 2].iter().product();
    Ok((batch, a.shape()[ra - 2], a.shape()[ra - 1], b.shape()[rb - 1]))
}

/// Batched matrix product over the last two axes; leading axes must match.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm_acc(&a.data()[i * m * k..][..m * k], &b.data()[i * k * n..][..k * n], &mut out[i * m * n..][..m * n], m, k, n);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (batch, m, k, n) = matmul_dims(a, b).expect("validated in forward");
    let mut ga = vec![0.0; batch * m * k];
    let mut gb = vec![0.0; batch * k * n];
    for i in 0..batch {
        let gi = &g.data()[i * m * n..][..m * n];
        gemm_a_bt_acc(gi, &b.data()[i * k * n..][..k * n], &mut ga[i * m * k..][..m * k], m, n, k);
        gemm_at_b_acc(&a.data()[i * m * k..][..m * k], gi, &mut gb[i * k * n..][..k * n], k, m, n);
    }
    (
        Tensor::new(a.shape().to_vec(), ga).unwrap(),
        Tensor::new(b.shape().to_vec(), gb).unwrap(),
    )
}

pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("invalid permutation {perm:?} for rank {rank}")));
    }
    let shape = x.shape();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zero = vec![0; rank];
    let mut data = vec![0.0; x.numel()];
    let xd = x.data();
    for_each_broadcast(&out_shape, &strides, &zero, |i, ix, _| data[i] = xd[ix]);
    Tensor::new(out_shape, data)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

// ---------------------------------------------------------------- normalizations

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::shape("softmax", format!("axis {axis} for shape {:?}", x.shape())));
    }
    let (outer, n, inner) = axis_layout(x.shape(), axis);
    let mut y = x.clone();
    let yd = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| yd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..n {
                let e = (yd[idx(k)] - m).exp();
                yd[idx(k)] = e;
                z += e;
            }
            for k in 0..n {
                yd[idx(k)] /= z;
            }
        }
    }
    Ok(y)
}

pub fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_layout(y.shape(), axis);
    let mut gx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), g.data());
    let gxd = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..n {
                gxd[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
            }
        }
    }
    gx
}

/// Layer norm over the last axis. Returns `(y, x_hat, inv_std per row)`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (rows, d) = rows_of(x);
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(
            "layer_norm",
            format!("feature dim {d}, gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
        ));
    }
    let mut xhat = x.clone();
    let mut inv = Vec::with_capacity(rows);
    for row in xhat.data_mut().chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv.push(is);
    }
    let mut y = xhat.clone();
    for row in y.data_mut().chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Ok((y, xhat, inv))
}

/// Gradients of [`layer_norm`]: `(d_x, d_gamma, d_beta)`.
pub fn layer_norm_backward(xhat: &Tensor, inv_std: &[f64], gamma: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (_, d) = rows_of(xhat);
    let mut gx = Tensor::zeros(xhat.shape());
    let mut ggamma = vec![0.0; d];
    let mut gbeta = vec![0.0; d];
    for (r, ((xr, gr), gxr)) in xhat
        .data()
        .chunks(d)
        .zip(g.data().chunks(d))
        .zip(gx.data_mut().chunks_mut(d))
        .enumerate()
    {
        let mut mean_gh = 0.0;
        let mut mean_ghx = 0.0;
        for k in 0..d {
            ggamma[k] += gr[k] * xr[k];
            gbeta[k] += gr[k];
            let gh = gr[k] * gamma.data()[k];
            mean_gh += gh;
            mean_ghx += gh * xr[k];
        }
        mean_gh /= d as f64;
        mean_ghx /= d as f64;
        for k in 0..d {
            let gh = gr[k] * gamma.data()[k];
            gxr[k] = inv_std[r] * (gh - mean_gh - xr[k] * mean_ghx);
        }
    }
    (gx, Tensor::from_vec(ggamma), Tensor::from_vec(gbeta))
}

// ---------------------------------------------------------------- length-axis reshuffles

fn last_dim(x: &Tensor) -> (usize, usize) {
    rows_of(x)
}

fn with_last(x: &Tensor, len: usize) -> Vec<usize> {
    let mut s = x.shape().to_vec();
    *s.last_mut().unwrap() = len;
    s
}

/// Centered moving average along the last axis; indices outside the row are
/// clamped to the nearest edge sample.
pub fn moving_average(x: &Tensor, window: usize) -> Result<Tensor> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("moving-average window must be odd, got {window}")));
    }
    let (rows, l) = last_dim(x);
    let half = (window - 1) / 2;
    let mut out = vec![0.0; rows * l];
    for r in 0..rows {
        let src = &x.data()[r * l..][..l];
        // prefix sums over the edge-extended row
        let ext = |i: isize| src[i.clamp(0, l as isize - 1) as usize];
        let mut acc: f64 = (-(half as isize)..=half as isize).map(ext).sum();
        out[r * l] = acc / window as f64;
        for t in 1..l {
            let t = t as isize;
            acc += ext(t + half as isize) - ext(t - half as isize - 1);
            out[r * l + t as usize] = acc / window as f64;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Adjoint of [`moving_average`].
pub fn moving_average_backward(g: &Tensor, window: usize) -> Tensor {
    let (rows, l) = last_dim(g);
    let half = (window - 1) / 2;
    let w = window as f64;
    let mut gx = Tensor::zeros(g.shape());
    let gxd = gx.data_mut();
    for r in 0..rows {
        for t in 0..l {
            let gv = g.data()[r * l + t] / w;
            for dlt in -(half as isize)..=half as isize {
                let s = (t as isize + dlt).clamp(0, l as isize - 1) as usize;
                gxd[r * l + s] += gv;
            }
        }
    }
    gx
}

/// Append `n` copies of the last sample along the last axis.
pub fn pad_right_replicate(x: &Tensor, n: usize) -> Tensor {
    let (rows, l) = last_dim(x);
    let mut out = Vec::with_capacity(rows * (l + n));
    for row in x.data().chunks(l) {
        out.extend_from_slice(row);
        out.extend(std::iter::repeat_n(row[l - 1], n));
    }
    Tensor::new(with_last(x, l + n), out).unwrap()
}

pub fn pad_right_replicate_backward(g: &Tensor, n: usize) -> Tensor {
    let (rows, lp) = last_dim(g);
    let l = lp - n;
    let mut out = Vec::with_capacity(rows * l);
    for row in g.data().chunks(lp) {
        let start = out.len();
        out.extend_from_slice(&row[..l]);
        out[start + l - 1] += row[l..].iter().sum::<f64>();
    }
    Tensor::new(with_last(g, l), out).unwrap()
}

/// `x[.., start..start+len]`.
pub fn narrow_last(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (_, l) = last_dim(x);
    if len == 0 || start + len > l {
        return Err(Error::shape("narrow", format!("{start}..{} of length {l}", start + len)));
    }
    let data = x.data().chunks(l).flat_map(|row| row[start..start + len].iter().copied()).collect();
    Tensor::new(with_last(x, len), data)
}

pub fn narrow_last_backward(g: &Tensor, start: usize, full: usize) -> Tensor {
    let (_, len) = last_dim(g);
    let mut out = Tensor::zeros(&with_last(g, full));
    for (orow, grow) in out.data_mut().chunks_mut(full).zip(g.data().chunks(len)) {
        orow[start..start + len].copy_from_slice(grow);
    }
    out
}

/// `x[.., offset::step]` along the last axis.
pub fn stride_last(x: &Tensor, offset: usize, step: usize) -> Result<Tensor> {
    let (_, l) = last_dim(x);
    if step == 0 || offset >= l {
        return Err(Error::shape("stride", format!("offset {offset} step {step} of length {l}")));
    }
    let n = (l - offset).div_ceil(step);
    let data = x.data().chunks(l).flat_map(|row| row[offset..].iter().step_by(step).copied()).collect();
    Tensor::new(with_last(x, n), data)
}

pub fn stride_last_backward(g: &Tensor, offset: usize, step: usize, full: usize) -> Tensor {
    let (_, n) = last_dim(g);
    let mut out = Tensor::zeros(&with_last(g, full));
    for (orow, grow) in out.data_mut().chunks_mut(full).zip(g.data().chunks(n)) {
        for (k, &v) in grow.iter().enumerate() {
            orow[offset + k * step] = v;
        }
    }
    out
}

/// `out[2n] = even[n]`, `out[2n+1] = odd[n]` along the last axis.
pub fn interleave_last(even: &Tensor, odd: &Tensor) -> Result<Tensor> {
    if even.shape() != odd.shape() {
        return Err(Error::shape("interleave", format!("{:?} vs {:?}", even.shape(), odd.shape())));
    }
    let (_, n) = last_dim(even);
    let mut out = Vec::with_capacity(2 * even.numel());
    for (er, or) in even.data().chunks(n).zip(odd.data().chunks(n)) {
        for (e, o) in er.iter().zip(or) {
            out.push(*e);
            out.push(*o);
        }
    }
    Tensor::new(with_last(even, 2 * n), out)
}

// ---------------------------------------------------------------- grouped linear

/// `out[b,c,:] = x[b,c,:] · w[assign[c]] + bias[assign[c]]` with
/// `x: [B, C, L]`, `w: [k, L, L_p]`, `bias: [k, L_p]`.
pub fn grouped_linear(x: &Tensor, w: &Tensor, bias: &Tensor, assign: &[usize]) -> Result<Tensor> {
    let [batch, c, l] = *x.shape() else {
        return Err(Error::shape("grouped_linear", format!("input must be [B, C, L], got {:?}", x.shape())));
    };
    let [k, wl, lp] = *w.shape() else {
        return Err(Error::shape("grouped_linear", format!("weight must be [k, L, L_p], got {:?}", w.shape())));
    };
    if wl != l || bias.shape() != [k, lp] || assign.len() != c || assign.iter().any(|&a| a >= k) {
        return Err(Error::shape(
            "grouped_linear",
            format!(
                "input {:?}, weight {:?}, bias {:?}, {} assignments",
                x.shape(),
                w.shape(),
                bias.shape(),
                assign.len()
            ),
        ));
    }
    let mut out = vec![0.0; batch * c * lp];
    for b in 0..batch {
        for (ch, &a) in assign.iter().enumerate() {
            let orow = &mut out[(b * c + ch) * lp..][..lp];
            orow.copy_from_slice(&bias.data()[a * lp..][..lp]);
            gemm_acc(&x.data()[(b * c + ch) * l..][..l], &w.data()[a * l * lp..][..l * lp], orow, 1, l, lp);
        }
    }
    Tensor::new(vec![batch, c, lp], out)
}

/// Gradients of [`grouped_linear`]: `(d_x, d_w, d_bias)`.
pub fn grouped_linear_backward(x: &Tensor, w: &Tensor, assign: &[usize], g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, lp) = (w.shape()[0], w.shape()[2]);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[k, lp]);
    for b in 0..batch {
        for (ch, &a) in assign.iter().enumerate() {
            let grow = &g.data()[(b * c + ch) * lp..][..lp];
            let xrow = &x.data()[(b * c + ch) * l..][..l];
            gemm_a_bt_acc(grow, &w.data()[a * l * lp..][..l * lp], &mut gx.data_mut()[(b * c + ch) * l..][..l], 1, lp, l);
            gemm_at_b_acc(xrow, grow, &mut gw.data_mut()[a * l * lp..][..l * lp], l, 1, lp);
            for (o, v) in gb.data_mut()[a * lp..][..lp].iter_mut().zip(grow) {
                *o += v;
            }
        }
    }
    (gx, gw, gb)
}
