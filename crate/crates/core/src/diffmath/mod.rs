//! Reverse-mode differentiation over dense `f64` arrays, an Adam optimizer,
//! a central-difference gradient oracle and the checkpoint format.

mod adam;
mod array;
pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::NumArray;
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value produced by {op} (tape node {node})")]
    NonFinite { op: &'static str, node: usize },
}
