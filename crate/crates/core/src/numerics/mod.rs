//! Numeric foundations: dense tensors, seeded RNG, small-matrix SVD, and
//! finite-difference gradient probes.

pub mod gradcheck;
pub mod rng;
pub mod svd;
pub mod tensor;

pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use rng::SeededRng;
pub use svd::{orthogonal_project, orthogonality_error, svd_square, Svd};
pub use tensor::{concat0, matmul, transpose, Tensor};
