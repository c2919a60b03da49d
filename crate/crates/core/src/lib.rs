//! Sequential consumer search where firms choose both a price and how much
//! product information to reveal.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dist;
pub mod equilibrium;
pub mod error;
pub mod market;
pub mod persuade;
pub mod repro;
pub mod rng;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
