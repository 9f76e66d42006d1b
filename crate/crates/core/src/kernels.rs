//! Slice-level numeric kernels shared by the autodiff graph and the
//! incremental (cache-based) decoder.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::AttentionMask;

/// Additive penalty applied to masked attention logits.
pub const MASK_PENALTY: f64 = -1e9;

/// `a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_bt_acc(a, b, &mut c, m, k, n);
    c
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · d[m×n]`
pub fn matmul_at_acc<T: Scalar>(a: &[T], d: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(d.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let d_row = &d[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_pj, &d_ij) in c_row.iter_mut().zip(d_row) {
                *c_pj += a_ip * d_ij;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four independent accumulators let the compiler vectorize the reduction.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn add_row_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in x.chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `x[m×k] · w[k×n] + b`
pub fn linear<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut y = matmul(x, w, m, k, n);
    if let Some(b) = b {
        add_row_bias(&mut y, b);
    }
    y
}

/// Row-wise layer normalization with population variance. Returns the output
/// together with the per-row mean and reciprocal standard deviation.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cols = gamma.len();
    let rows = x.len() / cols;
    let n = T::of(cols as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (row, out_row) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for ((o, &v), (&g, &b)) in out_row.iter_mut().zip(row).zip(gamma.iter().zip(beta)) {
            *o = (v - mean) * rstd * g + b;
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-half * x * x).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// In-place softmax over each row. `allowed(i, j) == false` adds the mask
/// penalty to logit `(i, j)` before normalization.
pub fn softmax_rows<T: Scalar>(
    scores: &mut [T],
    cols: usize,
    allowed: Option<&dyn Fn(usize, usize) -> bool>,
) -> Result<()> {
    let penalty = T::of(MASK_PENALTY);
    for (i, row) in scores.chunks_exact_mut(cols).enumerate() {
        if let Some(allowed) = allowed {
            let mut any = false;
            for (j, s) in row.iter_mut().enumerate() {
                if allowed(i, j) {
                    any = true;
                } else {
                    *s += penalty;
                }
            }
            if !any {
                return Err(Error::FullyMaskedRow { row: i });
            }
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
    Ok(())
}

/// Multi-head scaled dot-product attention.
///
/// `q` is `n_q × dim`, `k` and `v` are `n_k × dim`; head `h` owns columns
/// `h·dim/heads .. (h+1)·dim/heads`. Returns the concatenated head outputs (`n_q × dim`) and the
/// attention probabilities laid out as `heads × n_q × n_k`.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n_q: usize,
    n_k: usize,
    dim: usize,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<(Vec<T>, Vec<T>)> {
    let dh = dim / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut out = vec![T::zero(); n_q * dim];
    let mut probs = vec![T::zero(); heads * n_q * n_k];
    let mut kh = vec![T::zero(); n_k * dh];
    let mut vh = vec![T::zero(); n_k * dh];
    let mut qh = vec![T::zero(); dh];
    let allowed_fn = mask.map(|m| move |i: usize, j: usize| m.allowed(i, j));
    for h in 0..heads {
        gather_head(k, &mut kh, dim, h * dh, dh);
        gather_head(v, &mut vh, dim, h * dh, dh);
        let p = &mut probs[h * n_q * n_k..(h + 1) * n_q * n_k];
        for i in 0..n_q {
            for d in 0..dh {
                qh[d] = q[i * dim + h * dh + d] * scale;
            }
            let row = &mut p[i * n_k..(i + 1) * n_k];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(&qh, &kh[j * dh..(j + 1) * dh]);
            }
        }
        match &allowed_fn {
            Some(f) => softmax_rows(p, n_k, Some(f))?,
            None => softmax_rows(p, n_k, None)?,
        }
        for i in 0..n_q {
            let out_row = &mut out[i * dim + h * dh..i * dim + (h + 1) * dh];
            for (j, &pij) in p[i * n_k..(i + 1) * n_k].iter().enumerate() {
                if pij == T::zero() {
                    continue;
                }
                for (o, &vv) in out_row.iter_mut().zip(&vh[j * dh..(j + 1) * dh]) {
                    *o += pij * vv;
                }
            }
        }
    }
    Ok((out, probs))
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    n_q: usize,
    n_k: usize,
    dim: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = dim / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = vec![T::zero(); n_q * dim];
    let mut dk = vec![T::zero(); n_k * dim];
    let mut dv = vec![T::zero(); n_k * dim];
    let mut kh = vec![T::zero(); n_k * dh];
    let mut vh = vec![T::zero(); n_k * dh];
    let mut dkh = vec![T::zero(); n_k * dh];
    let mut dvh = vec![T::zero(); n_k * dh];
    let mut dp = vec![T::zero(); n_k];
    for h in 0..heads {
        gather_head(k, &mut kh, dim, h * dh, dh);
        gather_head(v, &mut vh, dim, h * dh, dh);
        dkh.iter_mut().for_each(|x| *x = T::zero());
        dvh.iter_mut().for_each(|x| *x = T::zero());
        let p = &probs[h * n_q * n_k..(h + 1) * n_q * n_k];
        for i in 0..n_q {
            let go = &d_out[i * dim + h * dh..i * dim + (h + 1) * dh];
            let p_row = &p[i * n_k..(i + 1) * n_k];
            let mut weighted = T::zero();
            for j in 0..n_k {
                let pij = p_row[j];
                if pij == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                dp[j] = dot(go, &vh[j * dh..(j + 1) * dh]);
                weighted += pij * dp[j];
                for (dvv, &g) in dvh[j * dh..(j + 1) * dh].iter_mut().zip(go) {
                    *dvv += pij * g;
                }
            }
            let qi = &q[i * dim + h * dh..i * dim + (h + 1) * dh];
            let dqi = &mut dq[i * dim + h * dh..i * dim + (h + 1) * dh];
            for j in 0..n_k {
                let pij = p_row[j];
                if pij == T::zero() {
                    continue;
                }
                let ds = pij * (dp[j] - weighted) * scale;
                for d in 0..dh {
                    dqi[d] += ds * kh[j * dh + d];
                    dkh[j * dh + d] += ds * qi[d];
                }
            }
        }
        scatter_head(&dkh, &mut dk, dim, h * dh, dh);
        scatter_head(&dvh, &mut dv, dim, h * dh, dh);
    }
    (dq, dk, dv)
}

fn gather_head<T: Scalar>(src: &[T], dst: &mut [T], dim: usize, offset: usize, dh: usize) {
    for (row_src, row_dst) in src.chunks_exact(dim).zip(dst.chunks_exact_mut(dh)) {
        row_dst.copy_from_slice(&row_src[offset..offset + dh]);
    }
}

fn scatter_head<T: Scalar>(src: &[T], dst: &mut [T], dim: usize, offset: usize, dh: usize) {
    for (row_src, row_dst) in src.chunks_exact(dh).zip(dst.chunks_exact_mut(dim)) {
        row_dst[offset..offset + dh].copy_from_slice(row_src);
    }
}
