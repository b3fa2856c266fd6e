//! Network assembly: a stack of convolutional spiking layers (plain LIF,
//! adaptive LIF, or STAA-LIF) unrolled over timesteps, with a non-spiking
//! linear readout averaged over time.

use crate::error::{Error, Result};
use crate::neuron::{self, AdaptiveCoeffs, AdaptiveVars, LifParams, LifState};
use crate::scalar::Scalar;
use crate::staa::{conv_forward, Conv2dParams, ConvVars, StaaParams, StaaVars};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Neuron flavor of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Lif,
    Adaptive,
    Staa,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub neuron: NeuronKind,
}

/// Static description of the whole network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_hw: (usize, usize),
    pub classes: usize,
    pub t_steps: usize,
    pub layers: Vec<LayerConfig>,
    /// GC bottleneck reduction ratio r.
    pub gc_ratio: usize,
    /// SA hidden reduction ratio s.
    pub sa_ratio: usize,
    /// SA pooled-branch scaling factor.
    pub alpha: f64,
    pub tau: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub surrogate_width: f64,
}

impl NetworkConfig {
    pub fn lif_params<T: Scalar>(&self) -> LifParams<T> {
        LifParams {
            tau: T::from_f64(self.tau),
            v_reset: T::from_f64(self.v_reset),
            v_th: T::from_f64(self.v_th),
            surrogate_width: T::from_f64(self.surrogate_width),
        }
    }
}

enum NeuronParams<T: Scalar> {
    Lif,
    Adaptive(AdaptiveCoeffs<T>),
    Staa(StaaParams<T>),
}

struct Layer<T: Scalar> {
    conv: Conv2dParams<T>,
    neuron: NeuronParams<T>,
    /// Spatial size of this layer's output.
    out_hw: (usize, usize),
    out_channels: usize,
}

/// A built network with concrete parameters.
pub struct Network<T: Scalar> {
    cfg: NetworkConfig,
    lif: LifParams<T>,
    layers: Vec<Layer<T>>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
    features: usize,
}

pub enum LayerNeuronVars<T: Scalar> {
    Lif,
    Adaptive(AdaptiveVars),
    Staa(StaaVars<T>),
}

pub struct LayerVars<T: Scalar> {
    pub conv: ConvVars,
    pub neuron: LayerNeuronVars<T>,
}

/// Tape handles for all parameters, in registration order.
pub struct NetworkVars<T: Scalar> {
    pub layers: Vec<LayerVars<T>>,
    pub head_w: Var,
    pub head_b: Var,
    /// (name, var) pairs matching [`Network::named_params`] order.
    pub named: Vec<(String, Var)>,
}

/// Everything a caller needs from one unrolled forward pass.
pub struct ForwardRecord {
    pub logits: Var,
    /// Spike tensors per layer per timestep.
    pub spikes: Vec<Vec<Var>>,
    /// Fraction of active entries per layer, over batch and timesteps.
    pub activity: Vec<f64>,
}

fn conv_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = extent + 2 * padding;
    if span < kernel || (span - kernel) % stride != 0 {
        return Err(Error::shape(format!(
            "conv output not integral: extent {}, kernel {}, stride {}, padding {}",
            extent, kernel, stride, padding
        )));
    }
    Ok((span - kernel) / stride + 1)
}

impl<T: Scalar> Network<T> {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        if cfg.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if cfg.t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        let mut rng = crate::rng::derived_rng(seed, &[0x1017]);
        let mut layers = Vec::with_capacity(cfg.layers.len());
        let mut channels = cfg.input_channels;
        let (mut h, mut w) = cfg.input_hw;
        for lc in &cfg.layers {
            h = conv_out(h, lc.kernel, lc.stride, lc.padding)?;
            w = conv_out(w, lc.kernel, lc.stride, lc.padding)?;
            let conv = Conv2dParams::new(channels, lc.out_channels, lc.kernel, lc.stride, lc.padding, &mut rng);
            let neuron = match lc.neuron {
                NeuronKind::Lif => NeuronParams::Lif,
                NeuronKind::Adaptive => NeuronParams::Adaptive(AdaptiveCoeffs::lif_equivalent(
                    lc.out_channels,
                    T::from_f64(cfg.tau),
                )),
                NeuronKind::Staa => NeuronParams::Staa(StaaParams::new(
                    lc.out_channels,
                    cfg.t_steps,
                    cfg.gc_ratio,
                    cfg.sa_ratio,
                    T::from_f64(cfg.alpha),
                    T::from_f64(cfg.tau),
                    &mut rng,
                )?),
            };
            layers.push(Layer { conv, neuron, out_hw: (h, w), out_channels: lc.out_channels });
            channels = lc.out_channels;
        }
        let features = channels * h * w;
        let head_w = Tensor::randn(&[features, cfg.classes], (1.0 / features as f64).sqrt(), &mut rng)
            .with_grad();
        let head_b = Tensor::zeros(&[cfg.classes]).with_grad();
        let lif = cfg.lif_params();
        lif.validate()?;
        Ok(Network { cfg, lif, layers, head_w, head_b, features })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn lif(&self) -> &LifParams<T> {
        &self.lif
    }

    pub fn t_steps(&self) -> usize {
        self.cfg.t_steps
    }

    pub fn spiking_layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Put every parameter on the tape. `trainable` toggles gradient
    /// accumulation (evaluation registers frozen leaves).
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> NetworkVars<T> {
        let lf = |tape: &mut Tape<T>, t: &Tensor<T>| -> Var {
            if trainable {
                tape.leaf(t)
            } else {
                tape.leaf_frozen(t)
            }
        };
        let mut named = Vec::new();
        let mut layer_vars = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prefix = format!("layers.{}", l);
            let conv = ConvVars {
                w: lf(tape, &layer.conv.w),
                b: lf(tape, &layer.conv.b),
            };
            named.push((format!("{}.conv.w", prefix), conv.w));
            named.push((format!("{}.conv.b", prefix), conv.b));
            let neuron = match &layer.neuron {
                NeuronParams::Lif => LayerNeuronVars::Lif,
                NeuronParams::Adaptive(c) => {
                    let vars = AdaptiveVars { m: lf(tape, &c.m), n: lf(tape, &c.n) };
                    named.push((format!("{}.coeffs.m", prefix), vars.m));
                    named.push((format!("{}.coeffs.n", prefix), vars.n));
                    LayerNeuronVars::Adaptive(vars)
                }
                NeuronParams::Staa(s) => {
                    let mut gc = |tape: &mut Tape<T>, g: &crate::staa::GcParams<T>, tag: &str| {
                        let vars = crate::staa::GcVars {
                            conv_k: ConvVars { w: lf(tape, &g.conv_k.w), b: lf(tape, &g.conv_k.b) },
                            conv_q: ConvVars { w: lf(tape, &g.conv_q.w), b: lf(tape, &g.conv_q.b) },
                            ln_gamma: lf(tape, &g.ln_gamma),
                            ln_beta: lf(tape, &g.ln_beta),
                            conv_v: ConvVars { w: lf(tape, &g.conv_v.w), b: lf(tape, &g.conv_v.b) },
                            ln_eps: crate::staa::LN_EPS,
                        };
                        named.push((format!("{}.{}.k.w", prefix, tag), vars.conv_k.w));
                        named.push((format!("{}.{}.k.b", prefix, tag), vars.conv_k.b));
                        named.push((format!("{}.{}.q.w", prefix, tag), vars.conv_q.w));
                        named.push((format!("{}.{}.q.b", prefix, tag), vars.conv_q.b));
                        named.push((format!("{}.{}.ln.gamma", prefix, tag), vars.ln_gamma));
                        named.push((format!("{}.{}.ln.beta", prefix, tag), vars.ln_beta));
                        named.push((format!("{}.{}.v.w", prefix, tag), vars.conv_v.w));
                        named.push((format!("{}.{}.v.b", prefix, tag), vars.conv_v.b));
                        vars
                    };
                    let gc_input = gc(tape, &s.gc_input, "gc_in");
                    let gc_state = gc(tape, &s.gc_state, "gc_state");
                    let pe = lf(tape, &s.pe.pos);
                    named.push((format!("{}.pe", prefix), pe));
                    let sa = crate::staa::SaVars {
                        conv1: ConvVars { w: lf(tape, &s.sa.conv1.w), b: lf(tape, &s.sa.conv1.b) },
                        conv2: ConvVars { w: lf(tape, &s.sa.conv2.w), b: lf(tape, &s.sa.conv2.b) },
                        alpha: s.sa.alpha,
                        gate_bypass: s.sa.gate_bypass,
                    };
                    named.push((format!("{}.sa.1.w", prefix), sa.conv1.w));
                    named.push((format!("{}.sa.1.b", prefix), sa.conv1.b));
                    named.push((format!("{}.sa.2.w", prefix), sa.conv2.w));
                    named.push((format!("{}.sa.2.b", prefix), sa.conv2.b));
                    let coeffs = AdaptiveVars { m: lf(tape, &s.coeffs.m), n: lf(tape, &s.coeffs.n) };
                    named.push((format!("{}.coeffs.m", prefix), coeffs.m));
                    named.push((format!("{}.coeffs.n", prefix), coeffs.n));
                    LayerNeuronVars::Staa(StaaVars { gc_input, gc_state, pe, sa, coeffs })
                }
            };
            layer_vars.push(LayerVars { conv, neuron });
        }
        let head_w = lf(tape, &self.head_w);
        let head_b = lf(tape, &self.head_b);
        named.push(("head.w".into(), head_w));
        named.push(("head.b".into(), head_b));
        NetworkVars { layers: layer_vars, head_w, head_b, named }
    }

    /// Parameters in the same order as [`register`](Self::register).
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let prefix = format!("layers.{}", l);
            out.push((format!("{}.conv.w", prefix), &layer.conv.w));
            out.push((format!("{}.conv.b", prefix), &layer.conv.b));
            match &layer.neuron {
                NeuronParams::Lif => {}
                NeuronParams::Adaptive(c) => {
                    out.push((format!("{}.coeffs.m", prefix), &c.m));
                    out.push((format!("{}.coeffs.n", prefix), &c.n));
                }
                NeuronParams::Staa(s) => {
                    for (tag, g) in [("gc_in", &s.gc_input), ("gc_state", &s.gc_state)] {
                        out.push((format!("{}.{}.k.w", prefix, tag), &g.conv_k.w));
                        out.push((format!("{}.{}.k.b", prefix, tag), &g.conv_k.b));
                        out.push((format!("{}.{}.q.w", prefix, tag), &g.conv_q.w));
                        out.push((format!("{}.{}.q.b", prefix, tag), &g.conv_q.b));
                        out.push((format!("{}.{}.ln.gamma", prefix, tag), &g.ln_gamma));
                        out.push((format!("{}.{}.ln.beta", prefix, tag), &g.ln_beta));
                        out.push((format!("{}.{}.v.w", prefix, tag), &g.conv_v.w));
                        out.push((format!("{}.{}.v.b", prefix, tag), &g.conv_v.b));
                    }
                    out.push((format!("{}.pe", prefix), &s.pe.pos));
                    out.push((format!("{}.sa.1.w", prefix), &s.sa.conv1.w));
                    out.push((format!("{}.sa.1.b", prefix), &s.sa.conv1.b));
                    out.push((format!("{}.sa.2.w", prefix), &s.sa.conv2.w));
                    out.push((format!("{}.sa.2.b", prefix), &s.sa.conv2.b));
                    out.push((format!("{}.coeffs.m", prefix), &s.coeffs.m));
                    out.push((format!("{}.coeffs.n", prefix), &s.coeffs.n));
                }
            }
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let prefix = format!("layers.{}", l);
            out.push((format!("{}.conv.w", prefix), &mut layer.conv.w));
            out.push((format!("{}.conv.b", prefix), &mut layer.conv.b));
            match &mut layer.neuron {
                NeuronParams::Lif => {}
                NeuronParams::Adaptive(c) => {
                    out.push((format!("{}.coeffs.m", prefix), &mut c.m));
                    out.push((format!("{}.coeffs.n", prefix), &mut c.n));
                }
                NeuronParams::Staa(s) => {
                    for (tag, g) in [("gc_in", &mut s.gc_input), ("gc_state", &mut s.gc_state)] {
                        out.push((format!("{}.{}.k.w", prefix, tag), &mut g.conv_k.w));
                        out.push((format!("{}.{}.k.b", prefix, tag), &mut g.conv_k.b));
                        out.push((format!("{}.{}.q.w", prefix, tag), &mut g.conv_q.w));
                        out.push((format!("{}.{}.q.b", prefix, tag), &mut g.conv_q.b));
                        out.push((format!("{}.{}.ln.gamma", prefix, tag), &mut g.ln_gamma));
                        out.push((format!("{}.{}.ln.beta", prefix, tag), &mut g.ln_beta));
                        out.push((format!("{}.{}.v.w", prefix, tag), &mut g.conv_v.w));
                        out.push((format!("{}.{}.v.b", prefix, tag), &mut g.conv_v.b));
                    }
                    out.push((format!("{}.pe", prefix), &mut s.pe.pos));
                    out.push((format!("{}.sa.1.w", prefix), &mut s.sa.conv1.w));
                    out.push((format!("{}.sa.1.b", prefix), &mut s.sa.conv1.b));
                    out.push((format!("{}.sa.2.w", prefix), &mut s.sa.conv2.w));
                    out.push((format!("{}.sa.2.b", prefix), &mut s.sa.conv2.b));
                    out.push((format!("{}.coeffs.m", prefix), &mut s.coeffs.m));
                    out.push((format!("{}.coeffs.n", prefix), &mut s.coeffs.n));
                }
            }
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Unroll the network over `t_steps` inputs. `masks[l][t]` set means the
    /// attention path of STAA layer `l` is bypassed at step `t`; `None` runs
    /// the full path everywhere. Logits are the time-average of the readout.
    pub fn forward_t(
        &self,
        tape: &mut Tape<T>,
        step_inputs: &[Var],
        vars: &NetworkVars<T>,
        masks: Option<&[Vec<bool>]>,
    ) -> Result<ForwardRecord> {
        if step_inputs.len() != self.cfg.t_steps {
            return Err(Error::Value(format!(
                "expected {} step inputs, got {}",
                self.cfg.t_steps,
                step_inputs.len()
            )));
        }
        if let Some(m) = masks {
            if m.len() != self.layers.len() || m.iter().any(|row| row.len() != self.cfg.t_steps) {
                return Err(Error::Value("TSRD mask shape does not match layers x timesteps".into()));
            }
        }
        let batch = tape.value(step_inputs[0]).shape()[0];

        let mut states: Vec<LifState> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let shape = [batch, layer.out_channels, layer.out_hw.0, layer.out_hw.1];
            states.push(neuron::init_state(tape, &shape, &self.lif));
        }

        let mut spikes: Vec<Vec<Var>> = vec![Vec::with_capacity(self.cfg.t_steps); self.layers.len()];
        let mut ones = vec![0.0f64; self.layers.len()];
        let mut totals = vec![0u64; self.layers.len()];
        let mut logit_acc: Option<Var> = None;

        for t in 0..self.cfg.t_steps {
            let mut cur = step_inputs[t];
            for (l, layer) in self.layers.iter().enumerate() {
                let current = conv_forward(tape, cur, &vars.layers[l].conv, layer.conv.stride, layer.conv.padding)?;
                let (s, next) = match (&layer.neuron, &vars.layers[l].neuron) {
                    (NeuronParams::Lif, LayerNeuronVars::Lif) => {
                        neuron::lif_step(tape, &states[l], current, &self.lif)?
                    }
                    (NeuronParams::Adaptive(_), LayerNeuronVars::Adaptive(av)) => {
                        neuron::adaptive_lif_step(tape, &states[l], current, av, &self.lif)?
                    }
                    (NeuronParams::Staa(_), LayerNeuronVars::Staa(sv)) => {
                        let bypass = masks.map(|m| m[l][t]).unwrap_or(false);
                        crate::staa::staa_lif_step(tape, current, &states[l], sv, &self.lif, t, bypass)?
                    }
                    _ => return Err(Error::Value("registered vars do not match the model".into())),
                };
                states[l] = next;
                let sv = tape.value(s);
                ones[l] += sv.data().iter().map(|&v| v.to_f64()).sum::<f64>();
                totals[l] += sv.numel() as u64;
                spikes[l].push(s);
                cur = s;
            }
            let flat = tape.reshape(cur, vec![batch, self.features])?;
            let z = tape.matmul(flat, vars.head_w)?;
            let z = tape.add(z, vars.head_b)?;
            logit_acc = Some(match logit_acc {
                None => z,
                Some(acc) => tape.add(acc, z)?,
            });
        }

        let logits = tape.affine(
            logit_acc.expect("t_steps >= 1"),
            T::one() / T::from_f64(self.cfg.t_steps as f64),
            T::zero(),
        );
        let activity = ones
            .iter()
            .zip(&totals)
            .map(|(&o, &n)| o / n as f64)
            .collect();
        Ok(ForwardRecord { logits, spikes, activity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(neuron: NeuronKind) -> NetworkConfig {
        NetworkConfig {
            input_channels: 2,
            input_hw: (8, 8),
            classes: 2,
            t_steps: 3,
            layers: vec![
                LayerConfig { out_channels: 4, kernel: 3, stride: 2, padding: 1, neuron },
                LayerConfig { out_channels: 4, kernel: 3, stride: 1, padding: 1, neuron },
            ],
            gc_ratio: 2,
            sa_ratio: 2,
            alpha: 2.0,
            tau: 2.0,
            v_th: 1.0,
            v_reset: 0.0,
            surrogate_width: 1.0,
        }
    }

    fn step_inputs(tape: &mut Tape<f64>, cfg: &NetworkConfig, batch: usize, seed: u64) -> Vec<Var> {
        let mut rng = crate::rng::derived_rng(seed, &[7]);
        (0..cfg.t_steps)
            .map(|_| {
                tape.constant(Tensor::randn(
                    &[batch, cfg.input_channels, cfg.input_hw.0, cfg.input_hw.1],
                    1.0,
                    &mut rng,
                ))
            })
            .collect()
    }

    #[test]
    fn registration_and_param_listing_agree() {
        for kind in [NeuronKind::Lif, NeuronKind::Adaptive, NeuronKind::Staa] {
            let net = Network::<f64>::new(tiny_config(kind), 1).unwrap();
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let params = net.named_params();
            assert_eq!(params.len(), vars.named.len());
            for ((pn, pt), (vn, vv)) in params.iter().zip(&vars.named) {
                assert_eq!(pn, vn);
                assert_eq!(pt.shape(), tape.value(*vv).shape());
            }
            let mut net2 = Network::<f64>::new(tiny_config(kind), 1).unwrap();
            let names_mut: Vec<String> =
                net2.named_params_mut().into_iter().map(|(n, _)| n).collect();
            let names: Vec<String> = params.into_iter().map(|(n, _)| n).collect();
            assert_eq!(names, names_mut);
        }
    }

    #[test]
    fn forward_shapes_and_binary_spikes() {
        let net = Network::<f64>::new(tiny_config(NeuronKind::Staa), 2).unwrap();
        let mut tape = Tape::new();
        let inputs = step_inputs(&mut tape, net.config(), 2, 3);
        let vars = net.register(&mut tape, false);
        let rec = net.forward_t(&mut tape, &inputs, &vars, None).unwrap();
        assert_eq!(tape.value(rec.logits).shape(), &[2, 2]);
        assert_eq!(rec.activity.len(), 2);
        for (l, layer_spikes) in rec.spikes.iter().enumerate() {
            assert_eq!(layer_spikes.len(), 3);
            for &s in layer_spikes {
                assert!(tape.value(s).data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
            assert!((0.0..=1.0).contains(&rec.activity[l]));
        }
    }

    #[test]
    fn t1_equals_single_step_readout() {
        let mut cfg = tiny_config(NeuronKind::Lif);
        cfg.t_steps = 1;
        let net = Network::<f64>::new(cfg, 4).unwrap();
        let mut tape = Tape::new();
        let inputs = step_inputs(&mut tape, net.config(), 2, 5);
        let vars = net.register(&mut tape, false);
        let rec = net.forward_t(&mut tape, &inputs, &vars, None).unwrap();
        // With T=1 the time average is the single step's readout.
        let logits = tape.value(rec.logits).data().to_vec();
        assert_eq!(logits.len(), 4);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn replayed_spike_counts_match_recorded_activity() {
        let net = Network::<f64>::new(tiny_config(NeuronKind::Staa), 6).unwrap();
        let mut tape = Tape::new();
        let inputs = step_inputs(&mut tape, net.config(), 2, 8);
        let vars = net.register(&mut tape, false);
        let rec = net.forward_t(&mut tape, &inputs, &vars, None).unwrap();
        for (l, layer_spikes) in rec.spikes.iter().enumerate() {
            let mut ones = 0.0;
            let mut total = 0u64;
            for &s in layer_spikes {
                ones += tape.value(s).data().iter().sum::<f64>();
                total += tape.value(s).numel() as u64;
            }
            assert_eq!(rec.activity[l], ones / total as f64);
        }
    }
}
