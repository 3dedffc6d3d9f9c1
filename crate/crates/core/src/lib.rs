//! Low-rank Hankel completion for spectrally sparse signals.
//!
//! A signal sampled on a `d`-dimensional grid is lifted to a (multi-level)
//! Hankel matrix, factored as `Z_U Z_V^*`, and recovered from a subset of its
//! entries by projected gradient descent on the factors.

pub mod dense;
pub mod error;
pub mod factor;
pub mod hankel;
pub mod harness;
pub mod objective;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod sampling;
pub mod signal;
pub mod solver;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use factor::{FactorPair, LanczosOptions, PartialSvd};
pub use hankel::HankelShape;
pub use objective::ObjectiveContext;
pub use sampling::{SampleMode, SampleSet};
pub use signal::SpectralModel;
pub use solver::{solve, PgdConfig, SolveResult, Termination};
