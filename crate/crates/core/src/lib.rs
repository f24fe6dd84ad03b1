//! Asynchronous parallel SVRG on shared memory.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: logistic + L2 objective, gradients, variance-reduced direction.
//! * [`data`]: LibSVM parsing and seeded synthetic problems.
//! * [`engine`]: the multi-threaded solver with consistent-lock,
//!   inconsistent-lock and lock-free access to the shared iterate.
//! * [`baselines`]: sequential SVRG and Hogwild!.
//! * [`theory`]: convergence certificates (ρ, c₁, c₂, rate factors, certified step).
//! * [`sim`]: a single-threaded simulator that replays explicit interleavings
//!   with a bounded delay and mixed-age reads.
//! * [`metrics`], [`reference`], [`cli`]: the benchmark harness.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod reference;
pub mod rng;
pub mod sim;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{Dataset, Label, LossConstants, ParamVector, SparseExample};
