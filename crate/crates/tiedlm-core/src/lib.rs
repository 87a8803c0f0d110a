//! Word-level LSTM language modeling with tied input/output embeddings and
//! an augmented training loss that pulls the output distribution toward an
//! embedding-derived target distribution.
//!
//! The crate is `no_std` + `alloc`: all numerics are plain `f64` on
//! hand-rolled dense matrices, with `libm` supplying the transcendentals.
//! File formats, corpus loading and the CLI live in the companion `tiedlm`
//! crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;

pub mod corpus;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod rng;
pub mod subspace;
pub mod trainer;

pub use error::{Error, Result};
