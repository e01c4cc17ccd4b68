//! Dense tensor and matrix kernels.

mod eig;
mod matrix;
mod rng;
mod tensor;

pub use eig::{sym_eig, SymEig};
pub use matrix::{frobenius_norm, gemm, matmul, matmul_nt, matmul_ref, matmul_tn, MatRef, Matrix};
pub use rng::SeededRng;
pub use tensor::Tensor;
