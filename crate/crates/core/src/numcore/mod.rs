//! Dense `f64` arrays, a reverse-mode tape, parameters and the optimizer.

mod array;
mod gradcheck;
pub mod ops;
mod optim;
mod param;
mod tape;

pub use array::Array;
pub use gradcheck::{check_parameter_gradients, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use param::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{median, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("axis {axis} out of bounds for a {ndim}-d array")]
    Axis { axis: usize, ndim: usize },
    #[error("index {index} out of range for axis of length {len}")]
    Index { index: usize, len: usize },
    #[error("backward called before any forward computation was recorded")]
    NothingRecorded,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}
