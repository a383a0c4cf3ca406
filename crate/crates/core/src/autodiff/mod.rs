//! Dense/sparse matrices and a reverse-mode gradient tape.

mod gradcheck;
mod matrix;
mod segment;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use matrix::Matrix;
pub use segment::SegmentIndex;
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var, COSINE_EPS};
