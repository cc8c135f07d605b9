//! Memory-bank conditioned flow matching at desk scale.
//!
//! The crate is `no_std` (with `alloc`). It holds all of the numerical
//! machinery: dense linear algebra, the synthetic data distribution and toy
//! encoder, the external memory bank with its low-rank factorization,
//! stochastic-interpolant schedules with closed-form mixture oracles, the
//! snippet-conditioned MLP velocity field with hand-written backpropagation,
//! the training step, ODE/SDE samplers and evaluation metrics.
//!
//! File formats, the training runner and the CLI live in the `gmem` crate.
//! Enabling the `parallel` feature shards batch gradients and kernel sums
//! across threads with a fixed reduction order, so results are bitwise
//! identical with and without it.

#![no_std]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod bank;
pub mod data;
pub mod error;
pub mod eval;
pub mod interpolant;
pub mod linalg;
pub mod net;
mod par;
pub mod rng;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::Rng;
