//! Memory kernels, Volterra solvers and Karhunen-Loève stochastic models for
//! generalized Langevin equations of polynomial dynamical systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`poly`]: exact sparse polynomials and Liouville-operator powers
//! - [`measure`]: product equilibrium measures and their moments
//! - [`kernel`]: γ/μ coefficients, Dyson and Faber memory-kernel series
//! - [`volterra`]: correlation, kernel-deconvolution and fluctuation-mode solvers
//! - [`kl`]: Karhunen-Loève decomposition, marginal-consistent sampling, GLE paths
//! - [`chain`]: symplectic harmonic/FPU chain simulation (Monte-Carlo baseline)
//! - [`pipeline`]: end-to-end runs shared by the CLI and the acceptance suite

pub mod chain;
pub mod error;
pub mod io;
pub mod kernel;
pub mod kl;
pub mod measure;
pub mod pipeline;
pub mod poly;
pub mod scalar;
pub mod special;
pub mod stats;
pub mod volterra;

pub use error::{Error, ErrorKind, Result};
pub use scalar::{Coeff, Rational, Scalar};
