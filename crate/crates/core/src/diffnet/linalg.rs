//! Row-major matrix products backed by `matrixmultiply`, parallelized over
//! output row blocks. Every output element is produced by exactly one thread
//! with a fixed reduction order, so results are bit-deterministic.

use rayon::prelude::*;

/// Below this many multiply-adds a single kernel call beats thread fan-out.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;
const MIN_ROWS_PER_CHUNK: usize = 64;

fn row_chunks(rows: usize, cost_per_row: usize) -> usize {
    if rows * cost_per_row < PAR_FLOP_THRESHOLD {
        return rows.max(1);
    }
    let target = rayon::current_num_threads() * 4;
    (rows / target).max(MIN_ROWS_PER_CHUNK).min(rows.max(1))
}

/// `out = a · b` with `a: m x k`, `b: k x n`, all row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm_nn(a, b, m, k, n, 0.0, out);
}

/// `out += a · b`.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm_nn(a, b, m, k, n, 1.0, out);
}

fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, beta: f64, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            out.fill(0.0);
        }
        return;
    }
    let chunk = row_chunks(m, k * n);
    out.par_chunks_mut(chunk * n)
        .zip(a.par_chunks(chunk * k))
        .for_each(|(out_rows, a_rows)| {
            let rows = a_rows.len() / k;
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a_rows.as_ptr(),
                    k as isize,
                    1,
                    b.as_ptr(),
                    n as isize,
                    1,
                    beta,
                    out_rows.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// `out = a · b^T` with `a: m x n`, `b: k x n` (row-major), `out: m x k`.
/// This is the input-gradient product `dX = dY · W^T`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    if m == 0 || k == 0 {
        return;
    }
    if n == 0 {
        out.fill(0.0);
        return;
    }
    let chunk = row_chunks(m, n * k);
    out.par_chunks_mut(chunk * k)
        .zip(a.par_chunks(chunk * n))
        .for_each(|(out_rows, a_rows)| {
            let rows = a_rows.len() / n;
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    n,
                    k,
                    1.0,
                    a_rows.as_ptr(),
                    n as isize,
                    1,
                    // b used transposed: element (i, j) of b^T is b[j * n + i].
                    b.as_ptr(),
                    1,
                    n as isize,
                    0.0,
                    out_rows.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        });
}

/// `out += a^T · b` with `a: m x k`, `b: m x n` (row-major), `out: k x n`.
/// This is the weight-gradient product `dW += X^T · dY`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if k == 0 || n == 0 || m == 0 {
        return;
    }
    let chunk = row_chunks(k, m * n);
    out.par_chunks_mut(chunk * n)
        .enumerate()
        .for_each(|(ci, out_rows)| {
            let r0 = ci * chunk;
            let rows = out_rows.len() / n;
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    m,
                    n,
                    1.0,
                    // Row i of a^T is column r0 + i of a.
                    a.as_ptr().add(r0),
                    1,
                    k as isize,
                    b.as_ptr(),
                    n as isize,
                    1,
                    1.0,
                    out_rows.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}
