// `!(x <= limit)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fmap;
pub mod linalg;
pub mod lti;
pub mod optimality;
pub mod reduce;
pub mod synthetic;

pub use error::{MorError, Result};
