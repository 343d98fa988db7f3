//! Localized orthogonal decomposition with exact and neural fine-scale
//! correctors on the unit square.

pub mod coeff;
pub mod deepritz;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod grid;
pub mod linalg;
pub mod lodref;
pub mod nnet;
pub mod pde;
pub mod qinterp;
pub mod scalar;
pub mod seed;

pub use error::{LodError, Result};
pub use grid::{GridHierarchy, Patch};
pub use scalar::Scalar;

pub type Real = f64;
pub type Csr64 = linalg::Csr<f64>;
pub type Interpolation64 = qinterp::InterpolationMatrix<f64>;
pub type CorrectorSet64 = lodref::CorrectorSet<f64>;
pub type Mlp32 = nnet::Mlp<f32>;
pub type Mlp64 = nnet::Mlp<f64>;
