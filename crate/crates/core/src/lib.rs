#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod argmin;
pub mod bench;
pub mod chebyshev;
pub mod dp;
pub mod engine;
pub mod error;
pub mod packed;
pub mod protocol;

pub use error::{Error, Result};
