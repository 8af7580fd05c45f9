//! Dense-matrix primitives, seeded randomness and spectral utilities.

mod matrix;
pub mod rng;
pub mod spectral;
pub mod vector;

pub use matrix::Matrix;
pub use rng::{gaussian_matrix, streams, RngStream};
pub use spectral::{
    effective_rank, frobenius_distance, inverse, numerical_rank, orthogonal_complement_sample,
    solve, svd, symmetric_eigen, SvdResult,
};
