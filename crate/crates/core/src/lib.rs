#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod detect;
pub mod model;
pub mod witness;
pub mod fit;
pub mod cli;

pub use error::{Error, Result};
