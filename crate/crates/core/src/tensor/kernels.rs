//! Row-parallel dense kernels. Each output row is computed by one task in a
//! fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `c_row += a_row · b` for one output row, four inner indices at a time so
/// each pass over `c_row` folds in four rows of `b`.
#[inline]
fn row_kernel(a_row: &[f64], b: &[f64], c_row: &mut [f64], n: usize) {
    let k = a_row.len();
    let c_row = &mut c_row[..n];
    let mut p = 0;
    while p + 4 <= k {
        let (a0, a1, a2, a3) = (a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]);
        let b0 = &b[p * n..][..n];
        let b1 = &b[(p + 1) * n..][..n];
        let b2 = &b[(p + 2) * n..][..n];
        let b3 = &b[(p + 3) * n..][..n];
        for j in 0..n {
            c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        p += 4;
    }
    while p < k {
        let av = a_row[p];
        let br = &b[p * n..(p + 1) * n];
        for (cv, &bv) in c_row.iter_mut().zip(br) {
            *cv += av * bv;
        }
        p += 1;
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if n == 0 {
        return;
    }
    let body = |(i, row): (usize, &mut [f64])| row_kernel(&a[i * k..(i + 1) * k], b, row, n);
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
}

/// `r×c` row-major to `c×r`.
fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_acc(a, b, &mut c, m, k, n);
    c
}

/// `da[m×k] += dc[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_grad_lhs(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(dc, &transpose(b, k, n), da, m, n, k);
}

/// `db[k×n] += aᵀ · dc` where `a` is `m×k` and `dc` is `m×n`.
pub fn matmul_grad_rhs(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(&transpose(a, m, k), dc, db, k, m, n);
}
