//! Matrix-free matrix equilibration.
//!
//! Computes diagonal scalings `D`, `E` such that `DAE` has rows of equal
//! norm and columns of equal norm, touching `A` only through products with
//! `A` and `A^T`. The scalings are found by projected stochastic gradient
//! descent on a regularized convex problem and can precondition matrix-free
//! solvers such as LSQR and Chambolle-Pock.
//!
//! ```
//! use mfequil::equilibrate::{sgd_equilibrate, EquilibrationParams};
//! use mfequil::linops::DenseMatrix;
//!
//! let a = DenseMatrix::from_rows(&[vec![100.0, 1.0], vec![1.0, 0.01]]);
//! let params = EquilibrationParams::default().with_iterations(200);
//! let scaling = sgd_equilibrate(&a, &params).unwrap();
//! assert_eq!(scaling.d.len(), 2);
//! ```

pub mod equilibrate;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod linops;
pub mod metrics;
pub mod sampling;
pub mod solvers;
pub mod variants;

pub use equilibrate::{sgd_equilibrate, EquilibrationParams, ScalingResult};
pub use error::{Error, Result};
pub use linops::{CsrMatrix, DenseMatrix, ExplicitMatrix, LinearOperator};
