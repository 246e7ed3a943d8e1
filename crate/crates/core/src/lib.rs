// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geom;
pub mod gpr;
pub mod magmap;
pub mod sim;
pub mod window;
pub mod estimator;
pub mod eval;
pub mod scenario;

pub use error::{Error, Result};
