//! Dense numerical core: row-major matrices, a seeded generator, and a
//! Jacobi eigensolver for symmetric matrices.

mod alloc;
mod eigen;
mod mat;
mod rng;

pub use alloc::retain_freed_memory;
pub use eigen::{sym_eigen, SymEigen};
pub use mat::{matmul, relu, softmax_rows, Mat};
pub use rng::Rng;
