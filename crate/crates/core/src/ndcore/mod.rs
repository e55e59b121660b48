//! Dense arithmetic, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod linalg;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use linalg::{cholesky, cholesky_with_jitter, Mat, JITTER_LADDER};
pub use tape::{cb_log_norm, cb_log_norm_grad, Gradients, Graph, Var};
pub use tensor::Tensor;
