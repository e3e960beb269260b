#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod cli;
pub mod data;
pub mod emission;
pub mod error;
pub mod hmm;
pub mod special;
pub mod synth;
pub mod text;
pub mod vmf;

pub use error::{Error, Result};
