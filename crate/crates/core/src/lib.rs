//! Phase-space distributions of finite Fock-basis density matrices and the
//! inversion formulas that recover the state from them.

pub mod error;
pub mod forward;
pub mod lambda_tools;
pub mod quadrature;
pub mod recon_lambda;
pub mod recon_quad;
pub mod report;
pub mod specfun;
pub mod states;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
