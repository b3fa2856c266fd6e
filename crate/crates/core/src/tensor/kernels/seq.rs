//! Sequential reference kernels. Direct (gather-form) convolution is the
//! reference semantics; the per-element helpers here are reused by the
//! parallel kernels so both paths share one reduction order.

use super::ConvDims;
use crate::scalar::Scalar;

#[inline]
pub(crate) fn conv_out_pixel<T: Scalar>(
    x: &[T],
    w: &[T],
    d: &ConvDims,
    n: usize,
    co: usize,
    ho: usize,
    wo: usize,
) -> T {
    let mut acc = T::zero();
    let x_base = n * d.cin * d.h * d.w;
    let w_base = co * d.cin * d.kh * d.kw;
    for ci in 0..d.cin {
        let x_plane = x_base + ci * d.h * d.w;
        let w_plane = w_base + ci * d.kh * d.kw;
        for i in 0..d.kh {
            let hi = (ho * d.stride + i) as isize - d.padding as isize;
            if hi < 0 || hi >= d.h as isize {
                continue;
            }
            for j in 0..d.kw {
                let wi = (wo * d.stride + j) as isize - d.padding as isize;
                if wi < 0 || wi >= d.w as isize {
                    continue;
                }
                acc += x[x_plane + hi as usize * d.w + wi as usize] * w[w_plane + i * d.kw + j];
            }
        }
    }
    acc
}

#[inline]
pub(crate) fn conv_dx_pixel<T: Scalar>(
    dy: &[T],
    w: &[T],
    d: &ConvDims,
    n: usize,
    ci: usize,
    h: usize,
    w_pos: usize,
) -> T {
    let mut acc = T::zero();
    let dy_base = n * d.cout * d.ho * d.wo;
    for co in 0..d.cout {
        let dy_plane = dy_base + co * d.ho * d.wo;
        let w_plane = (co * d.cin + ci) * d.kh * d.kw;
        for i in 0..d.kh {
            let ho_num = h as isize + d.padding as isize - i as isize;
            if ho_num < 0 || ho_num % d.stride as isize != 0 {
                continue;
            }
            let ho = (ho_num / d.stride as isize) as usize;
            if ho >= d.ho {
                continue;
            }
            for j in 0..d.kw {
                let wo_num = w_pos as isize + d.padding as isize - j as isize;
                if wo_num < 0 || wo_num % d.stride as isize != 0 {
                    continue;
                }
                let wo = (wo_num / d.stride as isize) as usize;
                if wo >= d.wo {
                    continue;
                }
                acc += dy[dy_plane + ho * d.wo + wo] * w[w_plane + i * d.kw + j];
            }
        }
    }
    acc
}

#[inline]
pub(crate) fn conv_dw_element<T: Scalar>(
    dy: &[T],
    x: &[T],
    d: &ConvDims,
    co: usize,
    ci: usize,
    i: usize,
    j: usize,
) -> T {
    let mut acc = T::zero();
    for n in 0..d.batch {
        let x_plane = (n * d.cin + ci) * d.h * d.w;
        let dy_plane = (n * d.cout + co) * d.ho * d.wo;
        for ho in 0..d.ho {
            let hi = (ho * d.stride + i) as isize - d.padding as isize;
            if hi < 0 || hi >= d.h as isize {
                continue;
            }
            for wo in 0..d.wo {
                let wi = (wo * d.stride + j) as isize - d.padding as isize;
                if wi < 0 || wi >= d.w as isize {
                    continue;
                }
                acc += dy[dy_plane + ho * d.wo + wo] * x[x_plane + hi as usize * d.w + wi as usize];
            }
        }
    }
    acc
}

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.out_numel()];
    for n in 0..d.batch {
        for co in 0..d.cout {
            let o_plane = (n * d.cout + co) * d.ho * d.wo;
            for ho in 0..d.ho {
                for wo in 0..d.wo {
                    out[o_plane + ho * d.wo + wo] = conv_out_pixel(x, w, d, n, co, ho, wo) + b[co];
                }
            }
        }
    }
    out
}

pub fn conv2d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut dx = vec![T::zero(); d.batch * d.cin * d.h * d.w];
    for n in 0..d.batch {
        for ci in 0..d.cin {
            let plane = (n * d.cin + ci) * d.h * d.w;
            for h in 0..d.h {
                for w_pos in 0..d.w {
                    dx[plane + h * d.w + w_pos] = conv_dx_pixel(dy, w, d, n, ci, h, w_pos);
                }
            }
        }
    }
    dx
}

pub fn conv2d_backward_w<T: Scalar>(dy: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let mut dw = vec![T::zero(); d.cout * d.cin * d.kh * d.kw];
    for co in 0..d.cout {
        for ci in 0..d.cin {
            let plane = (co * d.cin + ci) * d.kh * d.kw;
            for i in 0..d.kh {
                for j in 0..d.kw {
                    dw[plane + i * d.kw + j] = conv_dw_element(dy, x, d, co, ci, i, j);
                }
            }
        }
    }
    dw
}

pub fn conv2d_backward_b<T: Scalar>(dy: &[T], d: &ConvDims) -> Vec<T> {
    let mut db = vec![T::zero(); d.cout];
    for n in 0..d.batch {
        for co in 0..d.cout {
            let plane = (n * d.cout + co) * d.ho * d.wo;
            for p in 0..d.ho * d.wo {
                db[co] += dy[plane + p];
            }
        }
    }
    db
}

#[inline]
pub(crate) fn matmul_row<T: Scalar>(
    a: &[T],
    b: &[T],
    out_row: &mut [T],
    bi: usize,
    i: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    let a_row = bi * m * k + i * k;
    let b_base = bi * k * n;
    for j in 0..n {
        let mut acc = T::zero();
        for p in 0..k {
            acc += a[a_row + p] * b[b_base + p * n + j];
        }
        out_row[j] = acc;
    }
}

pub fn matmul_forward<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        for i in 0..m {
            let row = (bi * m + i) * n;
            matmul_row(a, b, &mut out[row..row + n], bi, i, m, k, n);
        }
    }
    out
}

#[inline]
pub(crate) fn matmul_da_row<T: Scalar>(
    dy: &[T],
    b: &[T],
    da_row: &mut [T],
    bi: usize,
    i: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    // da[bi,i,p] = sum_j dy[bi,i,j] * b[bi,p,j]
    let dy_row = bi * m * n + i * n;
    let b_base = bi * k * n;
    for p in 0..k {
        let mut acc = T::zero();
        for j in 0..n {
            acc += dy[dy_row + j] * b[b_base + p * n + j];
        }
        da_row[p] = acc;
    }
}

pub fn matmul_backward_a<T: Scalar>(dy: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); batch * m * k];
    for bi in 0..batch {
        for i in 0..m {
            let row = (bi * m + i) * k;
            matmul_da_row(dy, b, &mut da[row..row + k], bi, i, m, k, n);
        }
    }
    da
}

#[inline]
pub(crate) fn matmul_db_row<T: Scalar>(
    dy: &[T],
    a: &[T],
    db_row: &mut [T],
    bi: usize,
    p: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    // db[bi,p,j] = sum_i a[bi,i,p] * dy[bi,i,j]
    let a_base = bi * m * k;
    let dy_base = bi * m * n;
    for j in 0..n {
        let mut acc = T::zero();
        for i in 0..m {
            acc += a[a_base + i * k + p] * dy[dy_base + i * n + j];
        }
        db_row[j] = acc;
    }
}

pub fn matmul_backward_b<T: Scalar>(dy: &[T], a: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::zero(); batch * k * n];
    for bi in 0..batch {
        for p in 0..k {
            let row = (bi * k + p) * n;
            matmul_db_row(dy, a, &mut db[row..row + n], bi, p, m, k, n);
        }
    }
    db
}
