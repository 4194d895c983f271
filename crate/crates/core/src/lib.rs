//! Quantum trajectories, dissipative freezing and Liouvillian sector spectra
//! for Lindblad systems with strong symmetries.

pub mod error;
pub mod freezing;
pub mod linalg;
pub mod liouvillian;
pub mod models;
pub mod rng;
pub mod symmetry;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
