//! Time-Step Random Dropout: during training, each (layer, timestep) may
//! bypass the attention aggregation with probability `beta`, falling back to
//! plain element-wise addition of input and carried membrane. The fallback is
//! a different aggregation function, not a zeroed branch, so no activation
//! rescaling applies. Evaluation uses the full path unless explicitly
//! enabled.

use crate::error::Result;
use crate::rng;
use crate::scalar::Scalar;
use crate::staa::{staa_aggregate, StaaVars};
use crate::tensor::{Tape, Var};
use serde::{Deserialize, Serialize};

/// Dropout configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TsrdConfig {
    /// Bypass probability per timestep, in [0, 1].
    pub beta: f64,
    pub seed: u64,
    /// Apply dropout during evaluation too (ablation toggle).
    pub enabled_in_eval: bool,
}

impl Default for TsrdConfig {
    fn default() -> Self {
        TsrdConfig { beta: 0.1, seed: 0, enabled_in_eval: false }
    }
}

impl TsrdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(crate::Error::Value(format!(
                "dropout probability beta must be in [0,1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Structural coordinates of one mask draw. Masks are resampled per forward
/// pass, so the batch counter participates alongside epoch and layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaskKey {
    pub epoch: u64,
    pub batch: u64,
    pub layer: u64,
}

const MASK_SALT: u64 = 0x7352_6400;

/// Independent Bernoulli(beta) bypass bits for `t_steps` timesteps,
/// deterministic in `(seed, epoch, batch, layer)`.
pub fn sample_mask(cfg: &TsrdConfig, t_steps: usize, key: MaskKey) -> Vec<bool> {
    (0..t_steps)
        .map(|t| {
            let word = rng::mix(cfg.seed, &[MASK_SALT, key.epoch, key.batch, key.layer, t as u64]);
            rng::unit_f64(word) < cfg.beta
        })
        .collect()
}

/// Aggregate input and carried membrane into the pre-spike potential:
/// plain `x (+) h_prev` when the bypass bit is set, the full attention path
/// otherwise. Gradients reach the attention parameters only through
/// non-bypassed timesteps.
pub fn aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h_prev: Var,
    params: &StaaVars<T>,
    t: usize,
    bypass: bool,
) -> Result<Var> {
    if bypass {
        tape.add(x, h_prev)
    } else {
        staa_aggregate(tape, x, h_prev, params, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staa::StaaParams;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_zero_and_one_are_degenerate() {
        let key = MaskKey { epoch: 3, batch: 5, layer: 1 };
        let all_off = sample_mask(&TsrdConfig { beta: 0.0, ..Default::default() }, 64, key);
        assert!(all_off.iter().all(|&b| !b));
        let all_on = sample_mask(&TsrdConfig { beta: 1.0, ..Default::default() }, 64, key);
        assert!(all_on.iter().all(|&b| b));
    }

    #[test]
    fn empirical_rate_close_to_beta() {
        let cfg = TsrdConfig { beta: 0.1, seed: 99, enabled_in_eval: false };
        let mut hits = 0usize;
        let mut total = 0usize;
        for batch in 0..12_500u64 {
            let mask = sample_mask(&cfg, 8, MaskKey { epoch: 0, batch, layer: 0 });
            hits += mask.iter().filter(|&&b| b).count();
            total += mask.len();
        }
        assert_eq!(total, 100_000);
        let rate = hits as f64 / total as f64;
        assert!((0.095..=0.105).contains(&rate), "rate {}", rate);
    }

    #[test]
    fn mask_is_deterministic_in_its_key() {
        let cfg = TsrdConfig { beta: 0.5, seed: 7, enabled_in_eval: false };
        let key = MaskKey { epoch: 2, batch: 9, layer: 4 };
        assert_eq!(sample_mask(&cfg, 16, key), sample_mask(&cfg, 16, key));
        let other = MaskKey { epoch: 2, batch: 9, layer: 5 };
        assert_ne!(sample_mask(&cfg, 64, key), sample_mask(&cfg, 64, other));
    }

    #[test]
    fn validate_rejects_bad_beta() {
        assert!(TsrdConfig { beta: 1.2, ..Default::default() }.validate().is_err());
        assert!(TsrdConfig { beta: -0.1, ..Default::default() }.validate().is_err());
        assert!(TsrdConfig::default().validate().is_ok());
    }

    #[test]
    fn bypass_ignores_attention_parameters() {
        let mut r = ChaCha8Rng::seed_from_u64(20);
        let staa = StaaParams::<f64>::new(4, 2, 2, 2, 2.0, 2.0, &mut r).unwrap();
        let x_t = Tensor::randn(&[1, 4, 3, 3], 1.0, &mut r);
        let h_t = Tensor::randn(&[1, 4, 3, 3], 1.0, &mut r);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let h = tape.constant(h_t.clone());
        let vars = staa.register(&mut tape, true);
        let u = aggregate(&mut tape, x, h, &vars, 0, true).unwrap();
        let want: Vec<f64> = x_t.data().iter().zip(h_t.data()).map(|(a, b)| a + b).collect();
        assert_eq!(tape.value(u).data(), want.as_slice());
    }

    #[test]
    fn bypassed_steps_leave_attention_gradients_at_zero() {
        // Unroll 4 steps with mask 0101; only rows 0 and 2 of the position
        // table can receive gradient, and with mask 1111 no attention
        // parameter receives any.
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let staa = StaaParams::<f64>::new(4, 4, 2, 2, 2.0, 2.0, &mut r).unwrap();
        let lif = crate::neuron::LifParams::default();
        let inputs: Vec<Tensor<f64>> =
            (0..4).map(|_| Tensor::randn(&[1, 4, 3, 3], 1.0, &mut r)).collect();

        let run = |mask: [bool; 4]| {
            let mut tape = Tape::new();
            let vars = staa.register(&mut tape, true);
            let mut state = crate::neuron::init_state(&mut tape, &[1, 4, 3, 3], &lif);
            let mut spike_sum = None;
            for (t, bypass) in mask.iter().enumerate() {
                let x = tape.constant(inputs[t].clone());
                let (s, next) =
                    crate::staa::staa_lif_step(&mut tape, x, &state, &vars, &lif, t, *bypass)
                        .unwrap();
                state = next;
                let s_sum = tape.sum_all(s);
                spike_sum = Some(match spike_sum {
                    None => s_sum,
                    Some(acc) => tape.add(acc, s_sum).unwrap(),
                });
            }
            let h_sum = tape.sum_all(state.h);
            let loss = tape.add(spike_sum.unwrap(), h_sum).unwrap();
            tape.backward(loss).unwrap();
            let pe_grad = tape.grad(vars.pe).unwrap().to_vec();
            let conv_v_grad = tape.grad(vars.gc_input.conv_v.w).unwrap().to_vec();
            (pe_grad, conv_v_grad)
        };

        let (pe_grad, _) = run([false, true, false, true]);
        for t in [1usize, 3] {
            assert!(pe_grad[t * 4..(t + 1) * 4].iter().all(|&g| g == 0.0), "row {}", t);
        }
        assert!(pe_grad[0..4].iter().any(|&g| g != 0.0));

        let (pe_all, conv_v_all) = run([true; 4]);
        assert!(pe_all.iter().all(|&g| g == 0.0));
        assert!(conv_v_all.iter().all(|&g| g == 0.0));
    }
}
