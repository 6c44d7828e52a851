//! Closed-form mean-variance portfolios with gearing constraints, the angle
//! between alpha and the optimal weights, its spectral bounds, and covariance
//! shrinkage that narrows that angle.

pub mod cli;
pub mod error;
pub mod format;
pub mod geometry;
pub mod moments;
pub mod oracle;
pub mod qoqc;
pub mod robust;
pub mod solvers;

pub use error::{Error, Result};
pub use moments::{AlphaVector, CovMatrix};
pub use solvers::{Portfolio, Program};
