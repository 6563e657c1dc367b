//! Raw slice kernels shared by the differentiation graph and the eager
//! reference path. Both must call the same routines so that their results
//! agree to the last bit.

use crate::scalar::{Scalar, Strided};

use super::NumericsError;

/// `a[m×k] · b[k×n]`.
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    F::gemm(m, k, n, Strided::row_major(a, k), Strided::row_major(b, n), F::zero(), &mut out);
    out
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_nt_acc<F: Scalar>(g: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    F::gemm(m, n, k, Strided::row_major(g, n), Strided::transposed(b, n), F::one(), out);
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub fn matmul_tn_acc<F: Scalar>(a: &[F], g: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    F::gemm(k, m, n, Strided::transposed(a, k), Strided::row_major(g, n), F::one(), out);
}

pub fn transpose<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise softmax with per-row max subtraction. `allowed[i*cols+j] == false`
/// forces an exact zero and removes the entry from the normalizer.
pub fn softmax_rows<F: Scalar>(
    x: &[F],
    rows: usize,
    cols: usize,
    allowed: Option<&[bool]>,
) -> Result<Vec<F>, NumericsError> {
    let mut out = vec![F::zero(); rows * cols];
    for i in 0..rows {
        let xr = &x[i * cols..(i + 1) * cols];
        let permitted = |j: usize| allowed.is_none_or(|m| m[i * cols + j]);
        let mut max = F::neg_infinity();
        let mut any = false;
        for (j, &v) in xr.iter().enumerate() {
            if permitted(j) {
                any = true;
                if v > max {
                    max = v;
                }
            }
        }
        if !any {
            return Err(NumericsError::DegenerateRow { row: i });
        }
        let or = &mut out[i * cols..(i + 1) * cols];
        let mut sum = F::zero();
        for (j, (&v, o)) in xr.iter().zip(or.iter_mut()).enumerate() {
            if permitted(j) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
        }
        let inv = F::one() / sum;
        for o in or.iter_mut() {
            *o *= inv;
        }
    }
    Ok(out)
}

/// Intermediate values of a row normalization, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<F> {
    pub normalized: Vec<F>,
    pub inv_std: Vec<F>,
}

/// Per-row `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn layer_norm<F: Scalar>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    rows: usize,
    cols: usize,
    eps: F,
) -> (Vec<F>, NormCache<F>) {
    let mut out = vec![F::zero(); rows * cols];
    let mut normalized = vec![F::zero(); rows * cols];
    let mut inv_std = vec![F::zero(); rows];
    let n = F::from_usize(cols).expect("column count");
    for i in 0..rows {
        let xr = &x[i * cols..(i + 1) * cols];
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let inv = F::one() / (var + eps).sqrt();
        inv_std[i] = inv;
        for j in 0..cols {
            let h = (xr[j] - mean) * inv;
            normalized[i * cols + j] = h;
            out[i * cols + j] = h * gamma[j] + beta[j];
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU, `0.5·x·(1 + tanh(u))`, evaluated as the
/// equal `x·σ(2u)` with `u = c·(x + a·x³)`.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    x * gelu_gate(x)
}

#[inline]
fn gelu_gate<F: Scalar>(x: F) -> F {
    let two_u = F::of(2.0 * GELU_C) * (x + F::of(GELU_A) * x * x * x);
    F::one() / (F::one() + (-two_u).exp())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let s = gelu_gate(x);
    let d_two_u = F::of(2.0 * GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    s + x * s * (F::one() - s) * d_two_u
}

/// `max(z,0) - z*y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce_with_logits<F: Scalar>(z: F, y: F) -> F {
    z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}
