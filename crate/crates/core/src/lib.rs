//! Spiking neural network library built around a spatio-temporal attention
//! aggregator (STAA) for leaky integrate-and-fire neurons.
//!
//! The crate is organized as a small stack:
//!
//! * [`tensor`] — dense row-major tensors with a define-by-run tape for
//!   reverse-mode autodiff, covering exactly the operation set the network
//!   forward pass needs.
//! * [`neuron`] — LIF and adaptive-LIF cell dynamics with a rectangular
//!   surrogate gradient for the spike nonlinearity.
//! * [`staa`] — the Global Context, Position Encoding and Step Attention
//!   blocks, plus the composite STAA-LIF update.
//! * [`tsrd`] — time-step random dropout: per-timestep stochastic bypass of
//!   the attention path during training.
//! * [`model`] / [`train`] — network assembly, BPTT training loop, SGD with
//!   momentum and cosine annealing, metrics and checkpointing.
//! * [`data`] — synthetic desk-scale datasets, event-stream binning and the
//!   augmentation suite.
//! * [`profiler`] — operation counting (ACs/MACs) and energy estimation for
//!   spiking versus dense inference.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod neuron;
pub mod profiler;
pub mod rng;
pub mod scalar;
pub mod staa;
pub mod tensor;
pub mod train;
pub mod tsrd;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::{SpikeMode, Tape, Tensor, Var};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
