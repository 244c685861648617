//! Integrable four-species exclusion processes built from a D2 R-matrix and
//! its six-vertex factors.

pub mod error;
pub mod algebra;
pub mod bethe;
pub mod dynamics;
pub mod lintensor;
pub mod markov;
mod par;
pub mod transfer;

pub use error::{Error, Result};
pub use lintensor::{CMatrix, SparseMatrix, C64};
