// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curved;
pub mod diagnostics;
pub mod el;
pub mod error;
pub mod expfam;
pub mod linalg;
pub mod local;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
