//! Dense tensors, a define-by-run reverse-mode tape, Adam, and gradient checks.

mod adam;
mod gradcheck;
pub mod norm;
mod tape;
mod tensor;

pub use adam::{cosine_lr, AdamConfig, AdamState, DecayMode};
pub use gradcheck::{grad_check, relative_error, CoordCheck, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{sigmoid, EdgeIndex, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("diverged: {0}")]
    Diverged(String),
}
