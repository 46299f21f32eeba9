//! Function-approximation substrate: dense matrices, reverse-mode autodiff,
//! multilayer perceptrons with Gaussian heads, flat named parameter vectors with
//! bit-exact binary checkpoints, the Adam optimizer, and a central-difference
//! gradient oracle used throughout the test suites.
//!
//! Everything is `f64` and single-threaded; identical inputs produce bitwise
//! identical outputs on every run.

mod fd;
mod graph;
mod mlp;
mod opt;
mod params;

pub use fd::{central_difference, max_rel_error};
pub use graph::{Gradients, Graph, Mat, NodeId};
pub(crate) use graph::softplus;
pub use mlp::{GaussianHead, MlpBinding, MlpSpec, LOG_STD_MAX, LOG_STD_MIN};
pub use opt::Adam;
pub use params::{Checkpoint, Layout, ParamVector, SliceDef};

use rand::Rng;
use thiserror::Error;

/// One standard-normal draw via Box–Muller. Always consumes exactly two
/// uniform draws from `rng`, which keeps seeded sample streams predictable
/// regardless of the value drawn (unlike rejection samplers).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]: keeps ln away from 0
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Errors surfaced by the approximation layer.
#[derive(Debug, Error)]
pub enum ApproxError {
    /// An input matrix or parameter vector had a shape incompatible with the
    /// operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    /// A non-finite value (NaN or infinity) was found where finite data is
    /// required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    /// A named parameter slice was requested but is absent from the layout.
    #[error("unknown parameter slice `{name}`")]
    UnknownSlice { name: String },
    /// Checkpoint bytes could not be decoded.
    #[error("malformed checkpoint: {reason}")]
    MalformedCheckpoint { reason: String },
    /// An I/O failure while reading or writing a checkpoint file.
    #[error("checkpoint I/O failure: {0}")]
    Io(#[from] std::io::Error),
}
