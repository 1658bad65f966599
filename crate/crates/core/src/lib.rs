//! Recovery of low-rank K-way tensors from multi-level quantized, noisy and
//! partially observed measurements.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the dense tensor
//! primitives, the noise/quantization model, the penalized likelihood with its
//! analytic gradients, the alternating proximal gradient solver (TAPGD) and the
//! pure parts of the synthetic experiment pipeline. File formats, sweeps and
//! the command line live in the `qtensor` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cp;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod quantization;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use cp::{cp_als_init, cp_reconstruct, gram_spectral_norm, khatri_rao, FactorSet};
pub use error::{Error, Result};
pub use likelihood::{ObjectiveContext, Target};
pub use linalg::Matrix;
pub use quantization::{Boundaries, NoiseKind, NoiseModel, QuantizedObservations};
pub use solver::{SolveResult, SolverConfig, SolverState};
pub use synth::SynthSpec;
pub use tensor::{DenseTensor, ObservationSet};

/// Floor applied to bin probabilities before any logarithm or division.
pub const PROB_FLOOR: f64 = 1e-12;
