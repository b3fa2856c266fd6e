//! Compute kernels for the heavy tensor ops.
//!
//! `seq` holds the reference implementations and is always compiled. With the
//! `parallel` feature, `par` provides rayon versions that split work over
//! disjoint output slabs; every output element keeps the exact reduction
//! order of the sequential kernel, so both paths produce bit-identical
//! results. Dispatchers below pick the parallel path only when the arithmetic
//! volume justifies the fork overhead.

use crate::scalar::Scalar;

pub mod seq;

#[cfg(feature = "parallel")]
pub mod par;

/// Geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn out_numel(&self) -> usize {
        self.batch * self.cout * self.ho * self.wo
    }

    fn flops(&self) -> usize {
        self.out_numel() * self.cin * self.kh * self.kw
    }
}

/// Below this many multiply-adds the fork/join cost dominates.
const PAR_MIN_FLOPS: usize = 1 << 16;

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], d: &ConvDims) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if d.flops() >= PAR_MIN_FLOPS {
        return par::conv2d_forward(x, w, b, d);
    }
    seq::conv2d_forward(x, w, b, d)
}

pub(crate) fn conv2d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if d.flops() >= PAR_MIN_FLOPS {
        return par::conv2d_backward_x(dy, w, d);
    }
    seq::conv2d_backward_x(dy, w, d)
}

pub(crate) fn conv2d_backward_w<T: Scalar>(dy: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if d.flops() >= PAR_MIN_FLOPS {
        return par::conv2d_backward_w(dy, x, d);
    }
    seq::conv2d_backward_w(dy, x, d)
}

pub(crate) fn conv2d_backward_b<T: Scalar>(dy: &[T], d: &ConvDims) -> Vec<T> {
    seq::conv2d_backward_b(dy, d)
}

pub(crate) fn matmul_forward<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if batch * m * n * k >= PAR_MIN_FLOPS {
        return par::matmul_forward(a, b, batch, m, k, n);
    }
    seq::matmul_forward(a, b, batch, m, k, n)
}

pub(crate) fn matmul_backward_a<T: Scalar>(
    dy: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if batch * m * n * k >= PAR_MIN_FLOPS {
        return par::matmul_backward_a(dy, b, batch, m, k, n);
    }
    seq::matmul_backward_a(dy, b, batch, m, k, n)
}

pub(crate) fn matmul_backward_b<T: Scalar>(
    dy: &[T],
    a: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if batch * m * n * k >= PAR_MIN_FLOPS {
        return par::matmul_backward_b(dy, a, batch, m, k, n);
    }
    seq::matmul_backward_b(dy, a, batch, m, k, n)
}
