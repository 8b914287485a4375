//! Core algorithms for next-day stock movement classification on dynamic
//! stock graphs.
//!
//! The pipeline is:
//!
//! 1. [`market`]: per-ticker indicator histories, lookback windows, labels,
//!    date splits and a synthetic lead-lag market generator.
//! 2. [`graph`]: per-day weighted directed adjacency from signal energy and
//!    histogram entropy.
//! 3. [`model`]: layers combining a learnable graph-diffusion branch with a
//!    concatenation-attention branch, then a three-layer classifier head.
//! 4. [`training`]: the composite objective, AdamW, early stopping and
//!    ablations.
//! 5. [`evaluation`]: ACC / MCC / F1.
//!
//! Everything numerical runs on [`numerics`], a small dense `f64` matrix
//! type plus a reverse-mode tape.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the CLI live in
//! the `dgdnn` companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod market;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};

/// 64-bit FNV-1a. Used for manifest hashes and config fingerprints, where a
/// stable, dependency-free digest is all that is needed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
