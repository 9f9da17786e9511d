//! Flat-slice kernels shared by the dense and LSTM layers.
//!
//! The dot kernel accumulates into eight independent lanes so LLVM can keep
//! the partial sums in one vector register. The lane structure is fixed, so
//! results are identical run to run (though not equal to a strict
//! left-to-right sum).

use rayon::prelude::*;

use crate::tensor::Scalar;

const PAR_ROW_THRESHOLD: usize = 1 << 16;

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; 8];
    let chunks = a.len() / 8;
    let (a_main, a_tail) = a.split_at(chunks * 8);
    let (b_main, b_tail) = b.split_at(chunks * 8);
    for (ca, cb) in a_main.chunks_exact(8).zip(b_main.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] = ca[k].mul_add(cb[k], acc[k]);
        }
    }
    let mut tail = S::ZERO;
    for (&x, &y) in a_tail.iter().zip(b_tail) {
        tail = x.mul_add(y, tail);
    }
    (((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))) + tail
}

/// `out[b, o] += x[b, :] . w[o, :]` for row-major `x: [rows, k]`,
/// `w: [cols, k]`, `out: [rows, cols]`.
pub(crate) fn addmm_nt<S: Scalar>(
    out: &mut [S],
    x: &[S],
    w: &[S],
    rows: usize,
    k: usize,
    cols: usize,
    parallel: bool,
) {
    debug_assert_eq!(out.len(), rows * cols);
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.len(), cols * k);
    let body = |(row, out_row): (usize, &mut [S])| {
        let x_row = &x[row * k..(row + 1) * k];
        for (o, slot) in out_row.iter_mut().enumerate() {
            *slot += dot(x_row, &w[o * k..(o + 1) * k]);
        }
    };
    if parallel && rows * cols * k >= PAR_ROW_THRESHOLD {
        out.par_chunks_mut(cols).enumerate().for_each(body);
    } else {
        out.chunks_mut(cols).enumerate().for_each(body);
    }
}

/// `out[b, :] += sum_o a[b, o] * w[o, :]` — i.e. `out += a . w` for
/// row-major `a: [rows, cols]`, `w: [cols, k]`, `out: [rows, k]`.
pub(crate) fn addmm_nn<S: Scalar>(
    out: &mut [S],
    a: &[S],
    w: &[S],
    rows: usize,
    cols: usize,
    k: usize,
    parallel: bool,
) {
    debug_assert_eq!(out.len(), rows * k);
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(w.len(), cols * k);
    let body = |(row, out_row): (usize, &mut [S])| {
        for o in 0..cols {
            let coeff = a[row * cols + o];
            let w_row = &w[o * k..(o + 1) * k];
            for (slot, &wv) in out_row.iter_mut().zip(w_row) {
                *slot = coeff.mul_add(wv, *slot);
            }
        }
    };
    if parallel && rows * cols * k >= PAR_ROW_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(body);
    } else {
        out.chunks_mut(k).enumerate().for_each(body);
    }
}

/// `wg[o, :] += sum_b a[b, o] * x[b, :]` — the weight-gradient update
/// `wg += a^T . x` for `a: [rows, cols]`, `x: [rows, k]`, `wg: [cols, k]`.
pub(crate) fn acc_outer_t<S: Scalar>(
    wg: &mut [S],
    a: &[S],
    x: &[S],
    rows: usize,
    cols: usize,
    k: usize,
    parallel: bool,
) {
    debug_assert_eq!(wg.len(), cols * k);
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), rows * k);
    let body = |(o, wg_row): (usize, &mut [S])| {
        for b in 0..rows {
            let coeff = a[b * cols + o];
            let x_row = &x[b * k..(b + 1) * k];
            for (slot, &xv) in wg_row.iter_mut().zip(x_row) {
                *slot = coeff.mul_add(xv, *slot);
            }
        }
    };
    if parallel && rows * cols * k >= PAR_ROW_THRESHOLD {
        wg.par_chunks_mut(k).enumerate().for_each(body);
    } else {
        wg.chunks_mut(k).enumerate().for_each(body);
    }
}
