//! Link-level simulation core for a multi-RIS mmWave downlink.
//!
//! The crate covers the two halves of the workbench:
//!
//! * panel-state acquisition: superimposed Zadoff-Chu pilots, one cyclic
//!   shift per reflecting panel, energy detection against a Neyman-Pearson
//!   threshold to estimate which panels still serve each user;
//! * link adaptation: weighted sum-rate maximization over the transmit
//!   precoder and the per-panel reflection phases, run as a block-coordinate
//!   scheme (MMSE receivers / MSE weights / precoder / phase alignment).
//!
//! Everything here is deterministic given an RNG seed and free of IO; the
//! companion `risbench` crate carries the CLI, config files and CSV output.
//! The crate is `no_std`-compatible (with `alloc`) when built without the
//! default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod channel;
pub mod crpa;
pub mod eval;
pub mod sync;

mod error;

// Re-exported so downstream crates and tests build against the same
// linear-algebra and RNG versions as the core.
pub use nalgebra;
pub use num_complex;
pub use rand;
pub use rand_chacha;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
