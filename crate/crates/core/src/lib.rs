#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detection;
pub mod error;
pub mod experiments;
pub mod huber_path;
pub mod huberized_lasso;
pub mod inference;
pub mod lad_path;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
