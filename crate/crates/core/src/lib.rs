//! Train one small CNN under five learning conditions and score how its
//! layer-wise representations line up with brain RDMs.
//!
//! - [`tensor`]: dense tensors and layer primitives with hand-written backward passes
//! - [`network`]: the fixed three-conv, two-FC architecture, taps and checkpoints
//! - [`rules`]: random, backpropagation, feedback alignment, predictive coding, STDP
//! - [`ingest`]: CIFAR-10 binary, PPM stimuli, RDM CSV files, synthetic data
//! - [`rdm`]: correlation-distance RDMs
//! - [`stats`]: Spearman RSA, bootstrap, permutation tests, FDR, partial RSA, noise ceiling
//! - [`filters`]: Conv1 spectral peakedness
//! - [`pipeline`]: config-driven experiment runner and reports

pub mod error;
pub mod filters;
pub mod ingest;
pub mod network;
pub mod pipeline;
pub mod rdm;
pub mod rng;
pub mod rules;
pub mod stats;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;
