//! Spatio-temporal attention aggregator: the Global Context (GC), Position
//! Encoding (PE) and Step Attention (SA) blocks, and the composite STAA-LIF
//! update.
//!
//! The aggregation replaces the plain charge of a LIF neuron:
//!
//! ```text
//! X' = PE(X, t)                      per-(t, channel) learnable offset
//! U  = GC_in(X') (+) GC_state(H)     two untied global-context blocks
//! V  = SA(U)                         per-step channel gate
//! ```
//!
//! followed by the usual spike/reset. Identity configurations (zero value
//! branch, zero PE table, gate bypass) collapse the whole path to `X (+) H`.

use crate::error::{Error, Result};
use crate::neuron::{fire_and_reset, AdaptiveCoeffs, AdaptiveVars, LifParams, LifState};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;

/// Layer-norm epsilon used inside GC blocks.
pub const LN_EPS: f64 = 1e-5;

/// Weights of one convolution, used both for synaptic layers and for the
/// 1x1 projections inside the attention blocks.
#[derive(Debug, Clone)]
pub struct Conv2dParams<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

/// Tape handles for one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2dParams {
            w: Tensor::kaiming(&[cout, cin, kernel, kernel], fan_in, rng).with_grad(),
            b: Tensor::zeros(&[cout]).with_grad(),
            stride,
            padding,
        }
    }

    pub fn new_1x1(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(cin, cout, 1, 1, 0, rng)
    }

    /// All-zero weights and bias (identity value branch in tests).
    pub fn zeroed_1x1(cin: usize, cout: usize) -> Self {
        Conv2dParams {
            w: Tensor::zeros(&[cout, cin, 1, 1]).with_grad(),
            b: Tensor::zeros(&[cout]).with_grad(),
            stride: 1,
            padding: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.b.numel()
    }

    pub(crate) fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ConvVars {
        ConvVars {
            w: leaf(tape, &self.w, trainable),
            b: leaf(tape, &self.b, trainable),
        }
    }
}

pub(crate) fn leaf<T: Scalar>(tape: &mut Tape<T>, t: &Tensor<T>, trainable: bool) -> Var {
    if trainable {
        tape.leaf(t)
    } else {
        tape.leaf_frozen(t)
    }
}

/// Apply a registered convolution.
pub fn conv_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &ConvVars,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    tape.conv2d(x, vars.w, vars.b, stride, padding)
}

// ---------------------------------------------------------------------------
// Global Context block
// ---------------------------------------------------------------------------

/// Parameters of one GC block for channel width `C` and reduction ratio `r`:
/// a C->1 attention kernel, a C->C/r query projection, layer norm over the
/// C/r bottleneck and a C/r->C value projection.
#[derive(Debug, Clone)]
pub struct GcParams<T: Scalar> {
    pub conv_k: Conv2dParams<T>,
    pub conv_q: Conv2dParams<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
    pub conv_v: Conv2dParams<T>,
    pub channels: usize,
    pub ratio: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GcVars {
    pub conv_k: ConvVars,
    pub conv_q: ConvVars,
    pub ln_gamma: Var,
    pub ln_beta: Var,
    pub conv_v: ConvVars,
    pub ln_eps: f64,
}

impl<T: Scalar> GcParams<T> {
    pub fn new(channels: usize, ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Value(format!(
                "GC reduction ratio {} must divide the channel count {}",
                ratio, channels
            )));
        }
        let hidden = channels / ratio;
        Ok(GcParams {
            conv_k: Conv2dParams::new_1x1(channels, 1, rng),
            conv_q: Conv2dParams::new_1x1(channels, hidden, rng),
            ln_gamma: Tensor::ones(&[hidden]).with_grad(),
            ln_beta: Tensor::zeros(&[hidden]).with_grad(),
            conv_v: Conv2dParams::new_1x1(hidden, channels, rng),
            channels,
            ratio,
        })
    }

    /// Closed-form parameter count: the two bottleneck projections carry
    /// `2*C*C/r` weights; attention kernel, biases and layer norm add
    /// `2*C + 3*C/r + 1`.
    pub fn param_count_formula(channels: usize, ratio: usize) -> usize {
        let hidden = channels / ratio;
        2 * channels * hidden + 2 * channels + 3 * hidden + 1
    }

    /// Count from the actually allocated arrays.
    pub fn param_count(&self) -> usize {
        self.conv_k.param_count()
            + self.conv_q.param_count()
            + self.ln_gamma.numel()
            + self.ln_beta.numel()
            + self.conv_v.param_count()
    }

    pub(crate) fn register(&self, tape: &mut Tape<T>, trainable: bool) -> GcVars {
        GcVars {
            conv_k: self.conv_k.register(tape, trainable),
            conv_q: self.conv_q.register(tape, trainable),
            ln_gamma: leaf(tape, &self.ln_gamma, trainable),
            ln_beta: leaf(tape, &self.ln_beta, trainable),
            conv_v: self.conv_v.register(tape, trainable),
            ln_eps: LN_EPS,
        }
    }
}

/// GC forward: sigmoid-pooled context vector, bottleneck projection, and a
/// broadcast add back onto the input. Output shape equals input shape.
pub fn gc_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &GcVars) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(format!("gc_forward expects [N,C,H,W], got {:?}", shape)));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;

    // Spatial attention weights from the key kernel.
    let attn_logits = tape.conv2d(x, p.conv_k.w, p.conv_k.b, 1, 0)?; // [N,1,H,W]
    let attn = tape.sigmoid(attn_logits);
    let attn_col = tape.reshape(attn, vec![n, hw, 1])?;

    // Context pooling: [N,C,HW] x [N,HW,1] -> [N,C,1,1].
    let x_rows = tape.reshape(x, vec![n, c, hw])?;
    let ctx = tape.matmul(x_rows, attn_col)?;
    let ctx = tape.reshape(ctx, vec![n, c, 1, 1])?;

    let q = tape.conv2d(ctx, p.conv_q.w, p.conv_q.b, 1, 0)?;
    let qn = tape.layer_norm(q, p.ln_gamma, p.ln_beta, T::from_f64(p.ln_eps))?;
    let qa = tape.relu(qn);
    let v = tape.conv2d(qa, p.conv_v.w, p.conv_v.b, 1, 0)?; // [N,C,1,1]

    tape.add(x, v)
}

// ---------------------------------------------------------------------------
// Position Encoding
// ---------------------------------------------------------------------------

/// Learnable per-(timestep, channel) offsets, zero at initialization.
#[derive(Debug, Clone)]
pub struct PeTable<T: Scalar> {
    pub pos: Tensor<T>,
}

impl<T: Scalar> PeTable<T> {
    pub fn new(t_steps: usize, channels: usize) -> Self {
        PeTable { pos: Tensor::zeros(&[t_steps, channels]).with_grad() }
    }

    pub fn t_steps(&self) -> usize {
        self.pos.shape()[0]
    }
}

/// Add row `t` of the table to the input, broadcast over batch and space.
/// The gradient lands in row `t` only.
pub fn pe_apply<T: Scalar>(tape: &mut Tape<T>, x: Var, table: Var, t: usize) -> Result<Var> {
    let rows = tape.value(table).shape()[0];
    if t >= rows {
        return Err(Error::Value(format!(
            "timestep {} out of range for a {}-step position table",
            t, rows
        )));
    }
    let channels = tape.value(table).shape()[1];
    let row = tape.row_select(table, t)?;
    let row4 = tape.reshape(row, vec![1, channels, 1, 1])?;
    tape.add(x, row4)
}

// ---------------------------------------------------------------------------
// Step Attention
// ---------------------------------------------------------------------------

/// Squeeze-excite style per-step gate: two 1x1 convs over the pooled vector,
/// sigmoid output, input scaled by `alpha` before the bottleneck.
#[derive(Debug, Clone)]
pub struct SaParams<T: Scalar> {
    pub conv1: Conv2dParams<T>,
    pub conv2: Conv2dParams<T>,
    /// Pooled-branch scaling factor; defaults to 2.
    pub alpha: T,
    pub hidden_ratio: usize,
    /// Force the gate to 1 (used by identity-configuration tests).
    pub gate_bypass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SaVars<T: Scalar> {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
    pub alpha: T,
    pub gate_bypass: bool,
}

impl<T: Scalar> SaParams<T> {
    pub fn new(channels: usize, hidden_ratio: usize, alpha: T, rng: &mut impl Rng) -> Result<Self> {
        if hidden_ratio == 0 || channels % hidden_ratio != 0 {
            return Err(Error::Value(format!(
                "SA hidden ratio {} must divide the channel count {}",
                hidden_ratio, channels
            )));
        }
        if alpha <= T::zero() {
            return Err(Error::Value("SA alpha must be > 0".into()));
        }
        let hidden = channels / hidden_ratio;
        Ok(SaParams {
            conv1: Conv2dParams::new_1x1(channels, hidden, rng),
            conv2: Conv2dParams::new_1x1(hidden, channels, rng),
            alpha,
            hidden_ratio,
            gate_bypass: false,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    pub(crate) fn register(&self, tape: &mut Tape<T>, trainable: bool) -> SaVars<T> {
        SaVars {
            conv1: self.conv1.register(tape, trainable),
            conv2: self.conv2.register(tape, trainable),
            alpha: self.alpha,
            gate_bypass: self.gate_bypass,
        }
    }
}

/// The sigmoid gate `[N,C,1,1]` of the step-attention block.
pub fn sa_gate<T: Scalar>(tape: &mut Tape<T>, u: Var, p: &SaVars<T>) -> Result<Var> {
    let pooled = tape.global_avg_pool(u)?;
    let scaled = tape.affine(pooled, p.alpha, T::zero());
    let h1 = tape.conv2d(scaled, p.conv1.w, p.conv1.b, 1, 0)?;
    let h1 = tape.relu(h1);
    let logits = tape.conv2d(h1, p.conv2.w, p.conv2.b, 1, 0)?;
    Ok(tape.sigmoid(logits))
}

/// SA forward: gate the input per channel; shape preserved.
pub fn sa_forward<T: Scalar>(tape: &mut Tape<T>, u: Var, p: &SaVars<T>) -> Result<Var> {
    if p.gate_bypass {
        return Ok(u);
    }
    let gate = sa_gate(tape, u, p)?;
    tape.mul(u, gate)
}

// ---------------------------------------------------------------------------
// Composite STAA-LIF step
// ---------------------------------------------------------------------------

/// All learnable pieces of one STAA-LIF layer. The adaptive charge
/// coefficients are carried here so a layer can also run in the plain
/// adaptive-LIF aggregation mode; the full attention path does not use them.
#[derive(Debug, Clone)]
pub struct StaaParams<T: Scalar> {
    pub gc_input: GcParams<T>,
    pub gc_state: GcParams<T>,
    pub pe: PeTable<T>,
    pub sa: SaParams<T>,
    pub coeffs: AdaptiveCoeffs<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct StaaVars<T: Scalar> {
    pub gc_input: GcVars,
    pub gc_state: GcVars,
    pub pe: Var,
    pub sa: SaVars<T>,
    pub coeffs: AdaptiveVars,
}

impl<T: Scalar> StaaParams<T> {
    pub fn new(
        channels: usize,
        t_steps: usize,
        gc_ratio: usize,
        sa_ratio: usize,
        alpha: T,
        tau: T,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(StaaParams {
            gc_input: GcParams::new(channels, gc_ratio, rng)?,
            gc_state: GcParams::new(channels, gc_ratio, rng)?,
            pe: PeTable::new(t_steps, channels),
            sa: SaParams::new(channels, sa_ratio, alpha, rng)?,
            coeffs: AdaptiveCoeffs::lif_equivalent(channels, tau),
        })
    }

    pub(crate) fn register(&self, tape: &mut Tape<T>, trainable: bool) -> StaaVars<T> {
        StaaVars {
            gc_input: self.gc_input.register(tape, trainable),
            gc_state: self.gc_state.register(tape, trainable),
            pe: leaf(tape, &self.pe.pos, trainable),
            sa: self.sa.register(tape, trainable),
            coeffs: AdaptiveVars {
                m: leaf(tape, &self.coeffs.m, trainable),
                n: leaf(tape, &self.coeffs.n, trainable),
            },
        }
    }
}

/// Full attention aggregation producing the pre-spike membrane.
pub fn staa_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h_prev: Var,
    p: &StaaVars<T>,
    t: usize,
) -> Result<Var> {
    let x_pe = pe_apply(tape, x, p.pe, t)?;
    let gx = gc_forward(tape, x_pe, &p.gc_input)?;
    let gh = gc_forward(tape, h_prev, &p.gc_state)?;
    let u = tape.add(gx, gh)?;
    sa_forward(tape, u, &p.sa)
}

/// One STAA-LIF timestep. `bypass` is the TSRD mask bit for this step: when
/// set, aggregation falls back to plain element-wise addition.
pub fn staa_lif_step<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    state: &LifState,
    p: &StaaVars<T>,
    lif: &LifParams<T>,
    t: usize,
    bypass: bool,
) -> Result<(Var, LifState)> {
    let v = crate::tsrd::aggregate(tape, x, state.h, p, t, bypass)?;
    fire_and_reset(tape, v, lif)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gc_with_zero_value_branch_is_identity() {
        let mut r = rng(1);
        let mut gc = GcParams::<f64>::new(8, 4, &mut r).unwrap();
        gc.conv_v = Conv2dParams::zeroed_1x1(2, 8);
        let x = Tensor::randn(&[2, 8, 5, 5], 1.0, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = gc.register(&mut tape, true);
        let out = gc_forward(&mut tape, xv, &vars).unwrap();
        assert_eq!(tape.value(out).shape(), x.shape());
        assert_eq!(tape.value(out).data(), x.data());
    }

    #[test]
    fn gc_scalar_chain_hand_evaluation() {
        // H=W=1, C=1, r=1, all weights 1, biases 0, gamma 1, beta 0.
        // W_k = x * sigmoid(x); LN over one channel zeroes it; ReLU(0) = 0;
        // conv_v gives 0; output = x.
        let ones_1x1 = |cin: usize, cout: usize| Conv2dParams::<f64> {
            w: Tensor::ones(&[cout, cin, 1, 1]).with_grad(),
            b: Tensor::zeros(&[cout]).with_grad(),
            stride: 1,
            padding: 0,
        };
        let gc = GcParams {
            conv_k: ones_1x1(1, 1),
            conv_q: ones_1x1(1, 1),
            ln_gamma: Tensor::ones(&[1]).with_grad(),
            ln_beta: Tensor::zeros(&[1]).with_grad(),
            conv_v: ones_1x1(1, 1),
            channels: 1,
            ratio: 1,
        };
        for x_val in [0.37, -1.4, 2.0] {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![x_val]).unwrap());
            let vars = gc.register(&mut tape, false);
            let out = gc_forward(&mut tape, x, &vars).unwrap();
            assert!((tape.value(out).data()[0] - x_val).abs() < 1e-10);
        }
    }

    #[test]
    fn gc_preserves_shape() {
        let mut r = rng(2);
        let gc = GcParams::<f64>::new(4, 2, &mut r).unwrap();
        let x = Tensor::randn(&[3, 4, 6, 7], 1.0, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = gc.register(&mut tape, false);
        let out = gc_forward(&mut tape, xv, &vars).unwrap();
        assert_eq!(tape.value(out).shape(), x.shape());
    }

    #[test]
    fn gc_rejects_indivisible_channels() {
        let mut r = rng(3);
        assert!(GcParams::<f64>::new(6, 4, &mut r).is_err());
        assert!(SaParams::<f64>::new(6, 4, 2.0, &mut r).is_err());
    }

    #[test]
    fn gc_param_count_matches_formula() {
        let mut r = rng(4);
        for (c, ratio) in [(64, 4), (8, 2), (16, 16), (4, 1)] {
            let gc = GcParams::<f64>::new(c, ratio, &mut r).unwrap();
            assert_eq!(gc.param_count(), GcParams::<f64>::param_count_formula(c, ratio));
        }
        // 2*C*C/r dominates the count, matching the bottleneck's purpose.
        assert_eq!(GcParams::<f64>::param_count_formula(64, 4), 2 * 64 * 16 + 2 * 64 + 3 * 16 + 1);
    }

    #[test]
    fn pe_zero_table_is_identity_and_delta_shifts_one_channel() {
        let mut r = rng(5);
        let x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
        let pe = PeTable::<f64>::new(4, 3);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let table = tape.leaf(&pe.pos);
        let out = pe_apply(&mut tape, xv, table, 2).unwrap();
        assert_eq!(tape.value(out).data(), x.data());

        let mut pe2 = PeTable::<f64>::new(4, 3);
        pe2.pos.data_mut()[2 * 3 + 1] = 0.25; // row t=2, channel 1
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let table = tape.leaf(&pe2.pos);
        let out = pe_apply(&mut tape, xv, table, 2).unwrap();
        let out_t = tape.value(out);
        for n in 0..2 {
            for c in 0..3 {
                for hpos in 0..4 {
                    for wpos in 0..4 {
                        let want = x.at(&[n, c, hpos, wpos]) + if c == 1 { 0.25 } else { 0.0 };
                        assert_eq!(out_t.at(&[n, c, hpos, wpos]), want);
                    }
                }
            }
        }
    }

    #[test]
    fn pe_gradient_touches_only_the_selected_row() {
        let mut r = rng(6);
        let x = Tensor::randn(&[2, 3, 2, 2], 1.0, &mut r);
        let pe = PeTable::<f64>::new(5, 3);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let table = tape.leaf(&pe.pos);
        let out = pe_apply(&mut tape, xv, table, 3).unwrap();
        let loss = tape.sum_all(out);
        tape.backward(loss).unwrap();
        let g = tape.grad(table).unwrap();
        for t in 0..5 {
            for c in 0..3 {
                let expect = if t == 3 { 2.0 * 2.0 * 2.0 } else { 0.0 }; // N*H*W
                assert_eq!(g[t * 3 + c], expect, "row {} channel {}", t, c);
            }
        }
    }

    #[test]
    fn pe_rejects_out_of_range_timestep() {
        let pe = PeTable::<f64>::new(2, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let table = tape.leaf(&pe.pos);
        assert!(pe_apply(&mut tape, x, table, 2).is_err());
    }

    #[test]
    fn sa_zero_output_conv_halves_the_input() {
        let mut r = rng(7);
        let mut sa = SaParams::<f64>::new(4, 2, 2.0, &mut r).unwrap();
        sa.conv2 = Conv2dParams::zeroed_1x1(2, 4);
        let u = Tensor::randn(&[2, 4, 3, 3], 1.0, &mut r);
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let vars = sa.register(&mut tape, false);
        let out = sa_forward(&mut tape, uv, &vars).unwrap();
        for (o, i) in tape.value(out).data().iter().zip(u.data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn sa_alpha_two_equals_prescaled_input_gate() {
        // Pooling is linear and scaling by 2 is exact, so the gate computed
        // with alpha=2 equals the alpha=1 gate of an input pre-scaled by 2.
        let mut r = rng(8);
        let sa2 = SaParams::<f64>::new(4, 2, 2.0, &mut r).unwrap();
        let mut sa1 = sa2.clone();
        sa1.alpha = 1.0;
        let u = Tensor::randn(&[2, 4, 3, 3], 1.0, &mut r);
        let u_scaled = Tensor::from_vec(
            u.shape().to_vec(),
            u.data().iter().map(|&v| 2.0 * v).collect(),
        )
        .unwrap();

        let mut tape_a = Tape::new();
        let ua = tape_a.constant(u.clone());
        let vars_a = sa2.register(&mut tape_a, false);
        let gate_a = sa_gate(&mut tape_a, ua, &vars_a).unwrap();

        let mut tape_b = Tape::new();
        let ub = tape_b.constant(u_scaled);
        let vars_b = sa1.register(&mut tape_b, false);
        let gate_b = sa_gate(&mut tape_b, ub, &vars_b).unwrap();

        assert_eq!(tape_a.value(gate_a).data(), tape_b.value(gate_b).data());
    }

    #[test]
    fn sa_gate_strictly_inside_unit_interval() {
        let mut r = rng(9);
        let sa = SaParams::<f64>::new(8, 4, 2.0, &mut r).unwrap();
        let u = Tensor::randn(&[2, 8, 4, 4], 3.0, &mut r);
        let mut tape = Tape::new();
        let uv = tape.constant(u);
        let vars = sa.register(&mut tape, false);
        let gate = sa_gate(&mut tape, uv, &vars).unwrap();
        for &g in tape.value(gate).data() {
            assert!(g > 0.0 && g < 1.0);
        }
    }

    #[test]
    fn identity_configured_step_reduces_to_plain_aggregation() {
        let mut r = rng(10);
        let mut staa = StaaParams::<f64>::new(4, 3, 2, 2, 2.0, 2.0, &mut r).unwrap();
        staa.gc_input.conv_v = Conv2dParams::zeroed_1x1(2, 4);
        staa.gc_state.conv_v = Conv2dParams::zeroed_1x1(2, 4);
        staa.sa.gate_bypass = true;
        let lif = LifParams::default();

        let x_t = Tensor::randn(&[2, 4, 3, 3], 0.5, &mut r);
        let h_t = Tensor::randn(&[2, 4, 3, 3], 0.5, &mut r);

        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let h = tape.constant(h_t.clone());
        let v0 = tape.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let vars = staa.register(&mut tape, false);
        let state = LifState { h, v: v0 };
        let (spikes, next) = staa_lif_step(&mut tape, x, &state, &vars, &lif, 1, false).unwrap();

        let plain: Vec<f64> = x_t.data().iter().zip(h_t.data()).map(|(a, b)| a + b).collect();
        assert_eq!(tape.value(next.v).data(), plain.as_slice());
        let s = tape.value(spikes);
        assert_eq!(s.shape(), x_t.shape());
        assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn full_step_emits_binary_spikes_of_input_shape() {
        let mut r = rng(11);
        let staa = StaaParams::<f64>::new(4, 2, 2, 2, 2.0, 2.0, &mut r).unwrap();
        let lif = LifParams::default();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[2, 4, 4, 4], 1.0, &mut r));
        let vars = staa.register(&mut tape, false);
        let state = neuron::init_state(&mut tape, &[2, 4, 4, 4], &lif);
        let (spikes, _) = staa_lif_step(&mut tape, x, &state, &vars, &lif, 0, false).unwrap();
        let s = tape.value(spikes);
        assert_eq!(s.shape(), &[2, 4, 4, 4]);
        assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
