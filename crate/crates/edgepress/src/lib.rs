//! Weight-level mechanisms for deep learning on edge devices, exercised
//! end-to-end on a small manually-differentiated MLP:
//!
//! - [`mbq`]/[`alq`] — multi-bit quantization: weights as sums of scaled
//!   binary (±1) bases, with adaptive per-group bitwidth searched by
//!   loss-aware pruning and projection updates.
//! - [`dress`] — nested sparse subnets sampled row-wise from one backbone,
//!   trained in parallel with weighted losses and stored in a prefix-ordered
//!   CSR format.
//! - [`dpu`] — communication-efficient partial weight updating across
//!   retraining rounds, with contribution-based weight selection and a
//!   bit-exact update payload codec.
//! - [`bitexec`] — xnor/popcount kernels proving the quantized models run
//!   with bitwise arithmetic only.
//!
//! The [`io`] module has the binary model formats and experiment plumbing;
//! the `edgepress` CLI crate wires everything into runnable experiments.

pub mod alq;
pub mod bitexec;
pub mod dpu;
pub mod dress;
pub mod error;
pub mod exec;
pub mod io;
pub mod mbq;
pub mod model;
pub mod numerics;
pub mod report;

pub use error::{Error, Result};
