// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernel;
pub mod quad;

pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub mod dynamics;
pub mod particles;
pub mod reduce;
pub mod meanfield;
pub mod modenergy;
pub mod harness;
