//! Dense tensors and a reverse-mode gradient tape with the handful of
//! operations the matching network needs.

mod gemm;
mod gradcheck;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
