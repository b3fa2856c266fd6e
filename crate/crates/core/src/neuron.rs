//! LIF and adaptive-LIF cell dynamics with a rectangular surrogate gradient.
//!
//! The discrete update is
//!
//! ```text
//! V_t = (1 - 1/tau) * H_{t-1} + (1/tau) * I_t + v_reset/tau     (vanilla)
//! V_t = M (.) H_{t-1} + N (.) I_t                               (adaptive)
//! S_t = step(V_t - v_th)
//! H_t = v_reset * S_t + V_t (.) (1 - S_t)
//! ```
//!
//! Both charge rules go through the same multiply-then-add kernels, so the
//! vanilla step is bit-identical to the adaptive one with constant
//! coefficients M = 1 - 1/tau, N = 1/tau (at v_reset = 0).

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Membrane constants shared by a layer's neurons.
#[derive(Debug, Clone, Copy)]
pub struct LifParams<T: Scalar> {
    /// Membrane time constant, > 0.
    pub tau: T,
    /// Reset potential.
    pub v_reset: T,
    /// Firing threshold.
    pub v_th: T,
    /// Rectangular surrogate width `a`, > 0.
    pub surrogate_width: T,
}

impl<T: Scalar> Default for LifParams<T> {
    fn default() -> Self {
        LifParams {
            tau: T::from_f64(2.0),
            v_reset: T::zero(),
            v_th: T::one(),
            surrogate_width: T::one(),
        }
    }
}

impl<T: Scalar> LifParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= T::zero() {
            return Err(crate::Error::Value("tau must be > 0".into()));
        }
        if self.surrogate_width <= T::zero() {
            return Err(crate::Error::Value("surrogate width must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-layer membrane state across a minibatch.
///
/// `h` is the post-spike potential carried between timesteps, `v` the
/// pre-spike potential of the step that produced this state. Both start at
/// `v_reset`.
#[derive(Debug, Clone, Copy)]
pub struct LifState {
    pub h: Var,
    pub v: Var,
}

/// Learnable per-channel charge coefficients of the adaptive rule.
#[derive(Debug, Clone)]
pub struct AdaptiveCoeffs<T: Scalar> {
    /// Coefficient on the carried membrane H, shape `[C]`.
    pub m: Tensor<T>,
    /// Coefficient on the input current I, shape `[C]`.
    pub n: Tensor<T>,
}

impl<T: Scalar> AdaptiveCoeffs<T> {
    /// Initialize at the vanilla-LIF operating point M = 1 - 1/tau, N = 1/tau.
    pub fn lif_equivalent(channels: usize, tau: T) -> Self {
        let n = T::one() / tau;
        let m = T::one() - n;
        AdaptiveCoeffs {
            m: Tensor::full(&[channels], m).with_grad(),
            n: Tensor::full(&[channels], n).with_grad(),
        }
    }
}

/// Tape handles for one layer's adaptive coefficients.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveVars {
    pub m: Var,
    pub n: Var,
}

/// Fresh state with membranes at `v_reset`.
pub fn init_state<T: Scalar>(tape: &mut Tape<T>, shape: &[usize], p: &LifParams<T>) -> LifState {
    let h = tape.constant(Tensor::full(shape, p.v_reset));
    let v = tape.constant(Tensor::full(shape, p.v_reset));
    LifState { h, v }
}

/// Binary spikes from a membrane tensor: 1 where `v >= v_th`, else 0.
/// The backward rule is the rectangular window of Eq-style surrogate
/// gradients: `1/a` inside `|v - v_th| < a/2`, zero outside.
pub fn heaviside_surrogate<T: Scalar>(tape: &mut Tape<T>, v: Var, p: &LifParams<T>) -> Var {
    tape.spike_surrogate(v, p.v_th, p.surrogate_width)
}

/// Threshold, emit spikes and apply the reset, returning the new state.
pub(crate) fn fire_and_reset<T: Scalar>(
    tape: &mut Tape<T>,
    v: Var,
    p: &LifParams<T>,
) -> Result<(Var, LifState)> {
    let spikes = heaviside_surrogate(tape, v, p);
    let keep_mask = tape.affine(spikes, -T::one(), T::one()); // 1 - S
    let kept = tape.mul(v, keep_mask)?;
    let h_new = if p.v_reset == T::zero() {
        kept
    } else {
        let reset_part = tape.affine(spikes, p.v_reset, T::zero());
        tape.add(reset_part, kept)?
    };
    Ok((spikes, LifState { h: h_new, v }))
}

/// One vanilla LIF step.
pub fn lif_step<T: Scalar>(
    tape: &mut Tape<T>,
    state: &LifState,
    input_current: Var,
    p: &LifParams<T>,
) -> Result<(Var, LifState)> {
    let n = T::one() / p.tau;
    let m = T::one() - n;
    let mh = tape.affine(state.h, m, T::zero());
    let ni = tape.affine(input_current, n, T::zero());
    let charged = tape.add(mh, ni)?;
    let v = if p.v_reset == T::zero() {
        charged
    } else {
        tape.affine(charged, T::one(), p.v_reset * n)
    };
    fire_and_reset(tape, v, p)
}

/// One adaptive LIF step: `V = M (.) H + N (.) I`, spike and reset unchanged.
/// Gradients flow into both coefficient vectors.
pub fn adaptive_lif_step<T: Scalar>(
    tape: &mut Tape<T>,
    state: &LifState,
    aggregated_input: Var,
    coeffs: &AdaptiveVars,
    p: &LifParams<T>,
) -> Result<(Var, LifState)> {
    let channels = tape.value(state.h).shape()[1];
    let m4 = tape.reshape(coeffs.m, vec![1, channels, 1, 1])?;
    let n4 = tape.reshape(coeffs.n, vec![1, channels, 1, 1])?;
    let mh = tape.mul(m4, state.h)?;
    let ni = tape.mul(n4, aggregated_input)?;
    let v = tape.add(mh, ni)?;
    fire_and_reset(tape, v, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> LifParams<f64> {
        LifParams::default()
    }

    fn tensor4(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(vec![n, c, h, w], data).unwrap()
    }

    #[test]
    fn lif_scalar_hand_evaluation() {
        // tau=2, H=0.4, I=1.0, v_reset=0 -> V=0.7, S=0, H_new=0.7
        let mut tape = Tape::new();
        let h0 = tape.constant(tensor4(1, 1, 1, 1, vec![0.4]));
        let v0 = tape.constant(tensor4(1, 1, 1, 1, vec![0.0]));
        let input = tape.constant(tensor4(1, 1, 1, 1, vec![1.0]));
        let state = LifState { h: h0, v: v0 };
        let (spikes, next) = lif_step(&mut tape, &state, input, &params()).unwrap();
        assert_eq!(tape.value(next.v).data(), &[0.7]);
        assert_eq!(tape.value(spikes).data(), &[0.0]);
        assert_eq!(tape.value(next.h).data(), &[0.7]);
    }

    #[test]
    fn spiking_entries_reset_exactly() {
        let mut tape = Tape::new();
        let h0 = tape.constant(tensor4(1, 1, 1, 4, vec![0.9, 0.1, 2.5, 0.0]));
        let v0 = tape.constant(tensor4(1, 1, 1, 4, vec![0.0; 4]));
        let input = tape.constant(tensor4(1, 1, 1, 4, vec![2.0, 0.0, 2.0, 0.5]));
        let (spikes, next) = lif_step(&mut tape, &LifState { h: h0, v: v0 }, input, &params()).unwrap();
        let s = tape.value(spikes).data();
        let h = tape.value(next.h).data();
        // V = 0.5*H + 0.5*I = [1.45, 0.05, 2.25, 0.25]
        assert_eq!(s, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(h[0], 0.0);
        assert_eq!(h[2], 0.0);
        assert_eq!(h[1], 0.05);
        assert!(s.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn zero_input_at_reset_is_a_fixed_point() {
        let mut tape = Tape::new();
        let state = init_state(&mut tape, &[1, 1, 2, 2], &params());
        let input = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let (spikes, next) = lif_step(&mut tape, &state, input, &params()).unwrap();
        assert!(tape.value(spikes).data().iter().all(|&s| s == 0.0));
        assert_eq!(tape.value(next.h).data(), tape.value(state.h).data());
    }

    #[test]
    fn surrogate_forward_thresholding() {
        let p = params();
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(tensor4(1, 1, 1, 2, vec![1.2, 0.3]));
        let s = heaviside_surrogate(&mut tape, v, &p);
        assert_eq!(tape.value(s).data(), &[1.0, 0.0]);
    }

    #[test]
    fn surrogate_gradient_window() {
        // Factor 1/a inside |v - v_th| < a/2, zero outside, both boundary sides.
        let p = params();
        let eps = 1e-9;
        let cases = [
            (1.3, 1.0),          // inside, above threshold
            (0.3, 0.0),          // outside, below
            (1.5 - eps, 1.0),    // just inside upper boundary
            (1.5, 0.0),          // exactly on upper boundary
            (0.5 + eps, 1.0),    // just inside lower boundary
            (0.5, 0.0),          // exactly on lower boundary
            (0.5 - eps, 0.0),    // just outside lower boundary
        ];
        for (v_val, want) in cases {
            let mut tape = Tape::new();
            let mut vt = tensor4(1, 1, 1, 1, vec![v_val]);
            vt.set_requires_grad(true);
            let v = tape.leaf(&vt);
            let s = heaviside_surrogate(&mut tape, v, &p);
            let loss = tape.sum_all(s);
            tape.backward(loss).unwrap();
            assert_eq!(tape.grad(v).unwrap(), &[want], "v = {}", v_val);
        }
    }

    #[test]
    fn adaptive_with_zero_m_is_memoryless() {
        let mut tape = Tape::new();
        let coeffs = AdaptiveCoeffs::<f64> {
            m: Tensor::zeros(&[2]),
            n: Tensor::ones(&[2]),
        };
        let m = tape.leaf(&coeffs.m);
        let n = tape.leaf(&coeffs.n);
        let h0 = tape.constant(tensor4(1, 2, 1, 1, vec![5.0, -3.0]));
        let v0 = tape.constant(tensor4(1, 2, 1, 1, vec![0.0, 0.0]));
        let input = tape.constant(tensor4(1, 2, 1, 1, vec![0.25, 0.5]));
        let (_, next) = adaptive_lif_step(
            &mut tape,
            &LifState { h: h0, v: v0 },
            input,
            &AdaptiveVars { m, n },
            &params(),
        )
        .unwrap();
        assert_eq!(tape.value(next.v).data(), &[0.25, 0.5]);
    }

    #[test]
    fn adaptive_matches_vanilla_bit_for_bit() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h_t = Tensor::randn(&[2, 3, 4, 4], 0.8, &mut rng);
        let i_t = Tensor::randn(&[2, 3, 4, 4], 0.8, &mut rng);

        let mut tape_a = Tape::new();
        let h = tape_a.constant(h_t.clone());
        let v = tape_a.constant(Tensor::zeros(&[2, 3, 4, 4]));
        let input = tape_a.constant(i_t.clone());
        let (s_a, st_a) = lif_step(&mut tape_a, &LifState { h, v }, input, &p).unwrap();

        let mut tape_b = Tape::new();
        let coeffs = AdaptiveCoeffs::lif_equivalent(3, p.tau);
        let m = tape_b.leaf(&coeffs.m);
        let n = tape_b.leaf(&coeffs.n);
        let h = tape_b.constant(h_t);
        let v = tape_b.constant(Tensor::zeros(&[2, 3, 4, 4]));
        let input = tape_b.constant(i_t);
        let (s_b, st_b) =
            adaptive_lif_step(&mut tape_b, &LifState { h, v }, input, &AdaptiveVars { m, n }, &p)
                .unwrap();

        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(tape_a.value(s_a).data()), bits(tape_b.value(s_b).data()));
        assert_eq!(bits(tape_a.value(st_a.h).data()), bits(tape_b.value(st_b.h).data()));
        assert_eq!(bits(tape_a.value(st_a.v).data()), bits(tape_b.value(st_b.v).data()));
    }

    #[test]
    fn adaptive_coefficient_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h_t = Tensor::randn(&[2, 2, 3, 3], 0.6, &mut rng);
        let i_t = Tensor::randn(&[2, 2, 3, 3], 0.6, &mut rng);
        let base = AdaptiveCoeffs::<f64>::lif_equivalent(2, 2.0);

        // Sum of the next membrane as a scalar objective, evaluated in the
        // surrogate-smoothed spike mode so finite differences are defined.
        let eval = |mv: &Tensor<f64>, nv: &Tensor<f64>, grad: bool| -> (f64, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            tape.set_spike_mode(crate::tensor::SpikeMode::Smooth);
            let m = tape.leaf(mv);
            let n = tape.leaf(nv);
            let h = tape.constant(h_t.clone());
            let v = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
            let input = tape.constant(i_t.clone());
            let (_, next) = adaptive_lif_step(
                &mut tape,
                &LifState { h, v },
                input,
                &AdaptiveVars { m, n },
                &params(),
            )
            .unwrap();
            let loss = tape.sum_all(next.h);
            let out = tape.value(loss).data()[0];
            if grad {
                tape.backward(loss).unwrap();
                (out, tape.grad(m).unwrap().to_vec(), tape.grad(n).unwrap().to_vec())
            } else {
                (out, vec![], vec![])
            }
        };

        let (_, gm, gn) = eval(&base.m, &base.n, true);
        let h_step = 1e-5;
        for idx in 0..2 {
            for (which, autodiff) in [(0, gm[idx]), (1, gn[idx])] {
                let mut plus = base.clone();
                let mut minus = base.clone();
                let (tp, tm) = if which == 0 {
                    (&mut plus.m, &mut minus.m)
                } else {
                    (&mut plus.n, &mut minus.n)
                };
                tp.data_mut()[idx] += h_step;
                tm.data_mut()[idx] -= h_step;
                let fd = (eval(&plus.m, &plus.n, false).0 - eval(&minus.m, &minus.n, false).0)
                    / (2.0 * h_step);
                let rel = (autodiff - fd).abs() / fd.abs().max(autodiff.abs()).max(1e-8);
                assert!(rel <= 1e-4, "coeff {} idx {}: {} vs {}", which, idx, autodiff, fd);
            }
        }
    }
}
