//! Rayon kernels. Work splits over disjoint output slabs; each element is
//! computed by the same per-element helper as the sequential kernel, so the
//! output bits do not depend on the thread count.

use super::seq;
use super::ConvDims;
use crate::scalar::Scalar;
use rayon::prelude::*;

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.out_numel()];
    let plane = d.ho * d.wo;
    out.par_chunks_mut(plane).enumerate().for_each(|(slab, chunk)| {
        let n = slab / d.cout;
        let co = slab % d.cout;
        for ho in 0..d.ho {
            for wo in 0..d.wo {
                chunk[ho * d.wo + wo] = seq::conv_out_pixel(x, w, d, n, co, ho, wo) + b[co];
            }
        }
    });
    out
}

pub fn conv2d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut dx = vec![T::zero(); d.batch * d.cin * d.h * d.w];
    let plane = d.h * d.w;
    dx.par_chunks_mut(plane).enumerate().for_each(|(slab, chunk)| {
        let n = slab / d.cin;
        let ci = slab % d.cin;
        for h in 0..d.h {
            for w_pos in 0..d.w {
                chunk[h * d.w + w_pos] = seq::conv_dx_pixel(dy, w, d, n, ci, h, w_pos);
            }
        }
    });
    dx
}

pub fn conv2d_backward_w<T: Scalar>(dy: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let mut dw = vec![T::zero(); d.cout * d.cin * d.kh * d.kw];
    let plane = d.cin * d.kh * d.kw;
    dw.par_chunks_mut(plane).enumerate().for_each(|(co, chunk)| {
        for ci in 0..d.cin {
            for i in 0..d.kh {
                for j in 0..d.kw {
                    chunk[(ci * d.kh + i) * d.kw + j] = seq::conv_dw_element(dy, x, d, co, ci, i, j);
                }
            }
        }
    });
    dw
}

pub fn matmul_forward<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(row, chunk)| {
        let bi = row / m;
        let i = row % m;
        seq::matmul_row(a, b, chunk, bi, i, m, k, n);
    });
    out
}

pub fn matmul_backward_a<T: Scalar>(dy: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); batch * m * k];
    da.par_chunks_mut(k).enumerate().for_each(|(row, chunk)| {
        let bi = row / m;
        let i = row % m;
        seq::matmul_da_row(dy, b, chunk, bi, i, m, k, n);
    });
    da
}

pub fn matmul_backward_b<T: Scalar>(dy: &[T], a: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::zero(); batch * k * n];
    db.par_chunks_mut(n).enumerate().for_each(|(row, chunk)| {
        let bi = row / k;
        let p = row % k;
        seq::matmul_db_row(dy, a, chunk, bi, p, m, k, n);
    });
    db
}
