//! Matrix Lie groups, their algebras and the basic kernels on them.

mod algebra;
mod group;
mod kind;
mod matrix;

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;

pub use algebra::{
    algebra_basis, coeffs_to_matrix, inner, matrix_to_coeffs, AlgebraBasis, AlgebraVector,
    ALGEBRA_TOL,
};
pub use group::{
    exp_coeffs, expm_generic, group_exp, group_inv, group_mul, haar_sample, is_on_group, so2_log,
    ElementRecord, GroupElement, DET_TOL,
};
pub use kind::{GroupKind, Leaf};
pub use matrix::{expm, expm_taylor, Mat};
