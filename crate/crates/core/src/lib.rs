//! Finite element schemes for the regularized FENE-P model of dilute
//! polymer flow on two-dimensional triangulations.

pub mod assemble;
pub mod energy;
pub mod error;
pub mod mesh;
pub mod nlsolve;
pub mod params;
pub mod quadrature;
pub mod scheme_p0;
pub mod scheme_p1diff;
pub mod space;
pub mod sparse;
pub mod tensor;
pub mod verify;

pub use error::{FenepError, Result};
