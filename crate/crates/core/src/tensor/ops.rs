//! Forward op constructors. Each method validates shapes, computes the
//! output value and records the node with everything its backward rule needs.

use super::kernels::{self, ConvDims};
use super::tape::{broadcast_source_index, Op, Tape, Var};
use super::{broadcast_shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optional elementwise weight for [`reduce_weighted`]: the other factor of a
/// product rule, broadcast against the output shape.
pub(crate) enum Weight<'a, T: Scalar> {
    None,
    Some(&'a [T], &'a [usize]),
}

/// Sum `g` (optionally times a broadcast weight) down to `target_shape`.
/// This is the gradient of a broadcast add/mul with respect to one input.
pub(crate) fn reduce_weighted<T: Scalar>(
    g: &[T],
    out_shape: &[usize],
    weight: Weight<'_, T>,
    target_shape: &[usize],
) -> Vec<T> {
    let target_numel: usize = target_shape.iter().product();
    let mut acc = vec![T::zero(); target_numel];
    match weight {
        Weight::None => {
            if target_numel == g.len() && target_shape.len() == out_shape.len() {
                acc.copy_from_slice(g);
            } else {
                for (idx, &gi) in g.iter().enumerate() {
                    acc[broadcast_source_index(idx, out_shape, target_shape)] += gi;
                }
            }
        }
        Weight::Some(w, w_shape) => {
            for (idx, &gi) in g.iter().enumerate() {
                let wi = w[broadcast_source_index(idx, out_shape, w_shape)];
                acc[broadcast_source_index(idx, out_shape, target_shape)] += gi * wi;
            }
        }
    }
    acc
}

fn broadcast_apply<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    if a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice() {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            data.push(f(x, y));
        }
    } else {
        for idx in 0..numel {
            let x = a.data()[broadcast_source_index(idx, &out_shape, a.shape())];
            let y = b.data()[broadcast_source_index(idx, &out_shape, b.shape())];
            data.push(f(x, y));
        }
    }
    Tensor::from_vec(out_shape, data)
}

impl<T: Scalar> Tape<T> {
    fn derive(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let on_path = inputs.iter().any(|v| self.on_grad_path(*v));
        self.push_node(value, op, false, on_path)
    }

    /// Elementwise sum with broadcasting over leading/size-1 dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_apply(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.derive(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_apply(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.derive(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `mul * x + add` with scalar constants. When `add == 0` the kernel is a
    /// pure scale, so `affine(x, c, 0)` is bit-identical to multiplying by a
    /// constant tensor filled with `c`.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Var {
        let xv = self.value(x);
        let data: Vec<T> = if add == T::zero() {
            xv.data().iter().map(|&v| v * mul).collect()
        } else {
            xv.data().iter().map(|&v| v * mul + add).collect()
        };
        let value = Tensor::from_vec(xv.shape().to_vec(), data).expect("same shape");
        self.derive(value, Op::Affine { x, mul }, &[x])
    }

    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`.
    /// Leading batch dims must match exactly.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa.len() != sb.len() {
            return Err(Error::shape(format!(
                "matmul needs equal-rank operands of rank >= 2, got {:?} and {:?}",
                sa, sb
            )));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape(format!(
                "matmul dims do not agree: {:?} x {:?}",
                sa, sb
            )));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let data = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), batch, m, k, n);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.derive(value, Op::Matmul { a, b, batch, m, k, n }, &[a, b]))
    }

    /// Direct 2-D cross-correlation plus bias.
    /// `x: [N,Cin,H,W]`, `w: [Cout,Cin,kh,kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects 4-d input and weight, got {:?} and {:?}",
                sx, sw
            )));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {:?} vs weight {:?}",
                sx, sw
            )));
        }
        if sb != [sw[0]] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                sb, sw[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Value("conv2d stride must be >= 1".into()));
        }
        let (h, w_in, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
        if kh == 0 || kw == 0 {
            return Err(Error::Value("conv2d kernel dims must be >= 1".into()));
        }
        let span_h = h + 2 * padding;
        let span_w = w_in + 2 * padding;
        if span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
            return Err(Error::shape(format!(
                "conv2d output size is not integral for input {:?}, kernel {:?}, stride {}, padding {}",
                sx, sw, stride, padding
            )));
        }
        let dims = ConvDims {
            batch: sx[0],
            cin: sx[1],
            h,
            w: w_in,
            cout: sw[0],
            kh,
            kw,
            stride,
            padding,
            ho: (span_h - kh) / stride + 1,
            wo: (span_w - kw) / stride + 1,
        };
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let value = Tensor::from_vec(vec![dims.batch, dims.cout, dims.ho, dims.wo], data)?;
        Ok(self.derive(value, Op::Conv2d { x, w, b, dims }, &[x, w, b]))
    }

    /// Mean over the spatial dims: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool expects 4-d input, got {:?}", sx)));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let inv = T::one() / T::from_f64((h * w) as f64);
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let mut acc = T::zero();
            for p in 0..h * w {
                acc += xd[nc * h * w + p];
            }
            data.push(acc * inv);
        }
        let value = Tensor::from_vec(vec![n, c, 1, 1], data)?;
        Ok(self.derive(value, Op::GlobalAvgPool { x }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| {
                // Stable in both tails.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let value = Tensor::from_vec(xv.shape().to_vec(), data).expect("same shape");
        self.derive(value, Op::Sigmoid { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let value = Tensor::from_vec(xv.shape().to_vec(), data).expect("same shape");
        self.derive(value, Op::Relu { x }, &[x])
    }

    /// Layer normalization over the channel axis (dim 1) with learnable
    /// per-channel scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() < 2 {
            return Err(Error::shape(format!("layer_norm expects rank >= 2, got {:?}", sx)));
        }
        let c = sx[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(format!(
                    "layer_norm {} shape {:?} does not match {} channels",
                    name,
                    self.value(v).shape(),
                    c
                )));
            }
        }
        let inner: usize = sx[2..].iter().product();
        let outer = sx[0];
        let inv_c = T::one() / T::from_f64(c as f64);
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();

        let mut mean = vec![T::zero(); outer * inner];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut data = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for p in 0..inner {
                let mut mu = T::zero();
                for ch in 0..c {
                    mu += xd[(o * c + ch) * inner + p];
                }
                mu = mu * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = xd[(o * c + ch) * inner + p] - mu;
                    var += d * d;
                }
                var = var * inv_c;
                let r = T::one() / (var + eps).sqrt();
                mean[o * inner + p] = mu;
                rstd[o * inner + p] = r;
                for ch in 0..c {
                    let idx = (o * c + ch) * inner + p;
                    data[idx] = (xd[idx] - mu) * r * gd[ch] + bd[ch];
                }
            }
        }
        let value = Tensor::from_vec(sx, data)?;
        Ok(self.derive(value, Op::LayerNorm { x, gamma, beta, mean, rstd }, &[x, gamma, beta]))
    }

    /// Mean of `-log softmax(logits)[label]`, stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.value(logits).shape().to_vec();
        if sl.len() != 2 {
            return Err(Error::shape(format!("cross_entropy expects [N,K] logits, got {:?}", sl)));
        }
        let (n, k) = (sl[0], sl[1]);
        if labels.len() != n {
            return Err(Error::shape(format!(
                "cross_entropy got {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Value(format!(
                "label {} out of range for {} classes",
                bad, k
            )));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for row in 0..n {
            let slice = &ld[row * k..(row + 1) * k];
            let max = slice.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for j in 0..k {
                let e = (slice[j] - max).exp();
                probs[row * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                probs[row * k + j] = probs[row * k + j] / sum;
            }
            total += sum.ln() + max - slice[labels[row]];
        }
        let loss = total / T::from_f64(n as f64);
        let value = Tensor::scalar(loss);
        let labels = labels.to_vec();
        Ok(self.derive(value, Op::CrossEntropy { logits, labels, probs }, &[logits]))
    }

    /// Heaviside spike with rectangular surrogate: forward emits 1 where
    /// `v >= v_th`; backward passes `1/width` inside `|v - v_th| < width/2`
    /// and 0 outside. In [`SpikeMode::Smooth`](super::SpikeMode) the forward
    /// is the clipped ramp `clamp((v - v_th)/width + 1/2, 0, 1)` instead, so
    /// the backward window is its exact derivative.
    pub fn spike_surrogate(&mut self, v: Var, v_th: T, width: T) -> Var {
        let vv = self.value(v);
        let half = T::from_f64(0.5);
        let data: Vec<T> = match self.spike_mode() {
            super::SpikeMode::Hard => vv
                .data()
                .iter()
                .map(|&x| if x >= v_th { T::one() } else { T::zero() })
                .collect(),
            super::SpikeMode::Smooth => vv
                .data()
                .iter()
                .map(|&x| ((x - v_th) / width + half).max(T::zero()).min(T::one()))
                .collect(),
        };
        let value = Tensor::from_vec(vv.shape().to_vec(), data).expect("same shape");
        self.derive(value, Op::SpikeSurrogate { v, v_th, width }, &[v])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {:?}",
                self.value(x).shape(),
                shape
            )));
        }
        let value = Tensor::from_vec(shape, self.value(x).data().to_vec())?;
        Ok(self.derive(value, Op::Reshape { x }, &[x]))
    }

    /// Row `row` of a 2-d table; the gradient accumulates into that row only.
    pub fn row_select(&mut self, table: Var, row: usize) -> Result<Var> {
        let st = self.value(table).shape().to_vec();
        if st.len() != 2 {
            return Err(Error::shape(format!("row_select expects a 2-d table, got {:?}", st)));
        }
        if row >= st[0] {
            return Err(Error::Value(format!(
                "row index {} out of range for table with {} rows",
                row, st[0]
            )));
        }
        let cols = st[1];
        let data = self.value(table).data()[row * cols..(row + 1) * cols].to_vec();
        let value = Tensor::from_vec(vec![cols], data)?;
        Ok(self.derive(value, Op::RowSelect { x: table, row }, &[table]))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let value = Tensor::scalar(acc);
        self.derive(value, Op::SumAll { x }, &[x])
    }
}
